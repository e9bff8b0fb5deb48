#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "vltd/archive.hpp"
#include "vltd/nn.hpp"
#include "vltd/ops.hpp"
#include "vltd/text_encoder.hpp"
#include "vltd/tokenizer.hpp"

namespace vltd {
namespace {

// Straight-line BPE over printable-encoded strings, reading the merge file
// directly. Shares no code with the library tokenizer.
class ReferenceBpe {
 public:
  explicit ReferenceBpe(const std::string& path) {
    // GPT-2 byte <-> printable table.
    int next = 256;
    for (int b = 0; b < 256; ++b) {
      const bool direct = (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174);
      const int cp = direct ? b : next++;
      std::string s;
      if (cp < 0x80) {
        s += static_cast<char>(cp);
      } else {
        s += static_cast<char>(0xC0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3F));
      }
      printable_[b] = s;
      byte_of_[s] = b;
    }
    std::ifstream in(path);
    std::string line;
    int rank = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string a, b;
      ss >> a >> b;
      ranks_.emplace(std::make_pair(a, b), rank);
      first_rank_of_.emplace(a + b, rank);
      ++rank;
    }
  }

  std::vector<int32_t> word_ids(const std::string& word) const {
    std::vector<std::string> syms;
    for (unsigned char c : word) syms.push_back(printable_.at(c));
    syms.back() += "</w>";
    for (;;) {
      int best = -1;
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = ranks_.find({syms[i], syms[i + 1]});
        if (it != ranks_.end() && (best < 0 || it->second < best)) best = it->second;
      }
      if (best < 0) break;
      std::pair<std::string, std::string> pick;
      for (const auto& [k, v] : ranks_)
        if (v == best) pick = k;
      std::vector<std::string> out;
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == pick.first && syms[i + 1] == pick.second) {
          out.push_back(syms[i] + syms[i + 1]);
          ++i;
        } else {
          out.push_back(syms[i]);
        }
      }
      syms = out;
    }
    std::vector<int32_t> ids;
    for (const auto& s : syms) {
      const bool end = s.size() > 4 && s.substr(s.size() - 4) == "</w>";
      const std::string core = end ? s.substr(0, s.size() - 4) : s;
      auto single = byte_of_.find(core);
      if (single != byte_of_.end()) {
        ids.push_back((end ? 259 : 3) + single->second);
      } else {
        ids.push_back(515 + first_rank_of_.at(s));
      }
    }
    return ids;
  }

  std::vector<int32_t> tokenize(const std::vector<std::string>& words, int max_len) const {
    std::vector<int32_t> ids{1};
    for (const auto& w : words)
      for (int32_t id : word_ids(w)) ids.push_back(id);
    if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<size_t>(max_len - 1));
    ids.push_back(2);
    ids.resize(static_cast<size_t>(max_len), 0);
    return ids;
  }

 private:
  std::map<int, std::string> printable_;
  std::map<std::string, int> byte_of_;
  std::map<std::pair<std::string, std::string>, int> ranks_;
  std::map<std::string, int> first_rank_of_;
};

const std::string kMergesPath = std::string(VLTD_SOURCE_DIR) + "/data/bpe_merges.txt";

std::string long_prompt() {
  std::string s;
  const char* words[] = {"detect", "Any", "text", "in", "the", "crowded", "market", "street", "scene", "signs"};
  for (int i = 0; i < 200; ++i) s += std::string(words[i % 10]) + (i % 13 == 0 ? ", " : " ");
  return s;
}

TEST(Tokenizer, EmptyPrompt) {
  const auto seq = BpeTokenizer::builtin().tokenize("");
  EXPECT_EQ(seq.length, 2);
  ASSERT_EQ(seq.ids.size(), 77u);
  EXPECT_EQ(seq.ids[0], kSosId);
  EXPECT_EQ(seq.ids[1], kEosId);
  for (size_t i = 2; i < seq.ids.size(); ++i) EXPECT_EQ(seq.ids[i], kPadId);
}

TEST(Tokenizer, PromptOne) {
  const auto seq = BpeTokenizer::builtin().tokenize(PromptRegistry().get("P1"));
  EXPECT_LE(seq.length, 77);
  EXPECT_EQ(seq.ids[0], kSosId);
  EXPECT_EQ(seq.ids[static_cast<size_t>(seq.length - 1)], kEosId);
  EXPECT_EQ(BpeTokenizer::builtin().detokenize(seq.ids), "detect any text in the image .");
}

TEST(Tokenizer, LongPromptTruncatesKeepingEos) {
  const auto seq = BpeTokenizer::builtin().tokenize(long_prompt());
  EXPECT_EQ(seq.length, 77);
  EXPECT_EQ(seq.ids[76], kEosId);
  EXPECT_EQ(seq.ids[0], kSosId);
  const auto short_seq = BpeTokenizer::builtin().tokenize(long_prompt(), 5);
  EXPECT_EQ(short_seq.length, 5);
  EXPECT_EQ(short_seq.ids[4], kEosId);
  EXPECT_THROW(BpeTokenizer::builtin().tokenize("x", 1), std::invalid_argument);
}

TEST(Tokenizer, MatchesReferenceMergeApplication) {
  const ReferenceBpe ref(kMergesPath);
  const auto& tok = BpeTokenizer::builtin();
  ASSERT_EQ(tok.num_merges(), 1000u);
  std::vector<std::string> prompts{PromptRegistry().get("P1"), PromptRegistry().get("P2"),
                                   PromptRegistry().get("P3"), long_prompt(),
                                   "It's the 2019 TEXT-detection benchmark!!! (v2.0)",
                                   "naïve café signs: Straße, 東京, مرحبا", "we'll see what they've done"};
  Rng rng(41);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ETAOIN'.,!?0123456789";
  for (int i = 0; i < 50; ++i) {
    std::string s;
    const int n = static_cast<int>(rng.uniform_int(0, 60));
    for (int k = 0; k < n; ++k) s += alphabet[static_cast<size_t>(rng.uniform_int(0, alphabet.size() - 1))];
    prompts.push_back(s);
  }
  for (const auto& p : prompts) {
    EXPECT_EQ(tok.tokenize(p).ids, ref.tokenize(pretokenize(p), 77)) << p;
  }
}

TEST(Tokenizer, RoundTripIsIdempotent) {
  const auto& tok = BpeTokenizer::builtin();
  for (const std::string p : {"Where is text located in the scene?", "Mixed CASE and digits 42", "a,b;c"}) {
    const auto seq = tok.tokenize(p);
    EXPECT_EQ(tok.tokenize(tok.detokenize(seq.ids)).ids, seq.ids);
  }
}

TEST(Tokenizer, PretokenizeRules) {
  EXPECT_EQ(pretokenize("It's 42 ok?!"), (std::vector<std::string>{"it", "'s", "4", "2", "ok", "?!"}));
  EXPECT_THROW(BpeTokenizer::builtin().tokenize("\xff\xfe"), std::invalid_argument);
}

TEST(Tokenizer, VocabularyCapDropsMerges) {
  std::ifstream in(kMergesPath);
  const auto tok = BpeTokenizer::from_stream(in, kMergeBase + 10);
  EXPECT_EQ(tok.num_merges(), 10u);
  for (int32_t id : tok.tokenize(long_prompt()).ids) EXPECT_LT(id, kMergeBase + 10);
}

TEST(Tokenizer, LearnMergesClassicExample) {
  const std::map<std::string, int64_t> counts{{"low", 5}, {"lower", 2}, {"newest", 6}, {"widest", 3}};
  const auto merges = learn_merges(counts, 3);
  ASSERT_EQ(merges.size(), 3u);
  // (e, s) and (s, t</w>) tie at 9; the smaller pair wins.
  EXPECT_EQ(merges[0].left, "e");
  EXPECT_EQ(merges[0].right, "s");
  EXPECT_EQ(merges[1].left, "es");
  EXPECT_EQ(merges[1].right, "t</w>");
  EXPECT_EQ(merges[2].left, "l");
  EXPECT_EQ(merges[2].right, "o");
  std::istringstream in(format_merges(merges));
  const auto tok = BpeTokenizer::from_stream(in);
  EXPECT_EQ(tok.encode_word("newest"), (std::vector<int32_t>{kByteBase + 'n', kByteBase + 'e', kByteBase + 'w',
                                                              kMergeBase + 1}));
}

TEST(Tokenizer, MalformedMergeFile) {
  std::istringstream bad("#version\na b c\n");
  EXPECT_THROW(BpeTokenizer::from_stream(bad), std::invalid_argument);
  std::istringstream unknown("xy z\n");
  EXPECT_THROW(BpeTokenizer::from_stream(unknown), std::invalid_argument);
}

TEST(Prompts, TableEntries) {
  const PromptRegistry reg;
  EXPECT_EQ(reg.get("P1"), "Detect Any text in the image.");
  EXPECT_EQ(reg.get("P2"), "Where is text located in the scene?");
  EXPECT_EQ(reg.get("P3"), "Detect Any text in the scene.");
  EXPECT_EQ(reg.entries().size(), 3u);
  EXPECT_THROW(reg.get("P4"), std::out_of_range);
  PromptRegistry custom;
  custom.add("mine", "find the words");
  EXPECT_EQ(custom.get("mine"), "find the words");
}

TEST(TextEncoder, ShapesAndDeterminism) {
  const TextEncoder enc(TextEncoderConfig{});
  const auto seq = BpeTokenizer::builtin().tokenize(PromptRegistry().get("P1"));
  const auto a = enc.encode(seq);
  const auto b = enc.encode(seq);
  EXPECT_EQ(a.per_token.shape(), (Shape{seq.length, 64}));
  EXPECT_EQ(a.global.shape(), (Shape{64}));
  EXPECT_EQ(a.per_token.values(), b.per_token.values());
  EXPECT_EQ(a.global.values(), b.global.values());
  const auto c = enc.encode(BpeTokenizer::builtin().tokenize(PromptRegistry().get("P2")));
  EXPECT_NE(a.global.values(), c.global.values());
}

TEST(TextEncoder, GlobalFeatureComesFromEos) {
  const TextEncoder enc(TextEncoderConfig{});
  // Causal attention: the prefix rows do not depend on later tokens, so the
  // final row (EOS) carries the sentence summary. Changing only a token after
  // position 1 leaves row 1 fixed and changes the global vector.
  auto s1 = BpeTokenizer::builtin().tokenize("detect text");
  auto s2 = BpeTokenizer::builtin().tokenize("detect scene");
  const auto a = enc.encode(s1), b = enc.encode(s2);
  for (int c = 0; c < 64; ++c) EXPECT_EQ(a.per_token.values()[64 + c], b.per_token.values()[64 + c]);
  EXPECT_NE(a.global.values(), b.global.values());
}

TEST(TextEncoder, ParametersAreFrozen) {
  const TextEncoder enc(TextEncoderConfig{});
  for (const auto& p : enc.params()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
  Rng rng(42);
  Tensor w = normal_tensor({64, 1}, 1.0, rng);
  const auto f = enc.encode(BpeTokenizer::builtin().tokenize("detect"));
  ops::sum(ops::matmul(f.per_token, w)).backward();
  for (const auto& p : enc.params()) EXPECT_TRUE(p.tensor.grad().empty()) << p.name;
  EXPECT_FALSE(w.grad().empty());
}

TEST(TextEncoder, WeightsLoadFromArchive) {
  TextEncoderConfig cfg;
  cfg.layers = 1;
  cfg.vocab_size = 600;
  const TextEncoder a(cfg);
  const std::string path = ::testing::TempDir() + "text_weights.bin";
  write_archive(path, {{"kind", "text"}}, a.params());
  cfg.seed = 999;
  const TextEncoder fresh(cfg);
  EXPECT_NE(fresh.fingerprint(), a.fingerprint());
  cfg.weights_path = path;
  const TextEncoder loaded(cfg);
  EXPECT_EQ(loaded.fingerprint(), a.fingerprint());
  std::remove(path.c_str());
}

}  // namespace
}  // namespace vltd
