#include "vltd/tokenizer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "builtin_merges.hpp"

namespace vltd {
namespace {

constexpr std::string_view kEndOfWord = "</w>";

bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

size_t contraction_length(std::string_view s, size_t i) {
  if (s[i] != '\'') return 0;
  for (std::string_view c : {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"})
    if (s.substr(i, c.size()) == c) return c.size();
  return 0;
}

void validate_utf8(std::string_view s) {
  size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    const size_t extra = c < 0x80 ? 0 : (c >> 5) == 0x6 ? 1 : (c >> 4) == 0xE ? 2 : (c >> 3) == 0x1E ? 3 : SIZE_MAX;
    bool ok = extra != SIZE_MAX && i + extra < s.size();
    for (size_t k = 1; ok && k <= extra; ++k) ok = (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    if (!ok) throw std::invalid_argument(fmt::format("prompt is not valid UTF-8 at byte {}", i));
    i += extra + 1;
  }
}

// Byte -> code point table of the GPT-2 printable encoding.
const std::vector<uint32_t>& byte_codepoints() {
  static const std::vector<uint32_t> table = [] {
    std::vector<uint32_t> t(256, 0);
    std::vector<bool> direct(256, false);
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    uint32_t next = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<uint32_t>(b) : next++;
    return t;
  }();
  return table;
}

void append_utf8(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::string encode_symbol(const std::string& sym) {
  const bool end = sym.size() >= kEndOfWord.size() && sym.ends_with(kEndOfWord);
  const std::string bytes = end ? sym.substr(0, sym.size() - kEndOfWord.size()) : sym;
  return bytes_to_unicode(bytes) + (end ? std::string(kEndOfWord) : "");
}

std::string decode_symbol(std::string_view token) {
  const bool end = token.ends_with(kEndOfWord);
  if (end) token.remove_suffix(kEndOfWord.size());
  return unicode_to_bytes(token) + (end ? std::string(kEndOfWord) : "");
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  std::string lower(text);
  for (char& c : lower)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  std::vector<std::string> words;
  const std::string_view s = lower;
  size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    size_t len = contraction_length(s, i);
    if (len == 0) {
      if (is_letter(c)) {
        while (i + len < s.size() && is_letter(static_cast<unsigned char>(s[i + len]))) ++len;
      } else if (is_digit(c)) {
        len = 1;
      } else {
        while (i + len < s.size()) {
          const auto d = static_cast<unsigned char>(s[i + len]);
          if (is_space(d) || is_letter(d) || is_digit(d)) break;
          ++len;
        }
      }
    }
    words.emplace_back(s.substr(i, len));
    i += len;
  }
  return words;
}

std::string bytes_to_unicode(std::string_view bytes) {
  std::string out;
  for (unsigned char b : bytes) append_utf8(out, byte_codepoints()[b]);
  return out;
}

std::string unicode_to_bytes(std::string_view encoded) {
  static const std::unordered_map<uint32_t, unsigned char> inverse = [] {
    std::unordered_map<uint32_t, unsigned char> m;
    for (int b = 0; b < 256; ++b) m[byte_codepoints()[b]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  size_t i = 0;
  while (i < encoded.size()) {
    const auto c = static_cast<unsigned char>(encoded[i]);
    uint32_t cp;
    size_t n;
    if (c < 0x80) {
      cp = c;
      n = 1;
    } else if ((c >> 5) == 0x6 && i + 1 < encoded.size()) {
      cp = ((c & 0x1Fu) << 6) | (static_cast<unsigned char>(encoded[i + 1]) & 0x3Fu);
      n = 2;
    } else if ((c >> 4) == 0xE && i + 2 < encoded.size()) {
      cp = ((c & 0x0Fu) << 12) | ((static_cast<unsigned char>(encoded[i + 1]) & 0x3Fu) << 6) |
           (static_cast<unsigned char>(encoded[i + 2]) & 0x3Fu);
      n = 3;
    } else {
      throw std::invalid_argument("merge table: malformed UTF-8 symbol");
    }
    const auto it = inverse.find(cp);
    if (it == inverse.end()) throw std::invalid_argument(fmt::format("merge table: code point {} is not a byte symbol", cp));
    out += static_cast<char>(it->second);
    i += n;
  }
  return out;
}

BpeTokenizer::BpeTokenizer(std::vector<MergeRule> merges, int32_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < kMergeBase) throw std::invalid_argument(fmt::format("vocab_size must be >= {}", kMergeBase));
  const size_t cap = static_cast<size_t>(vocab_size - kMergeBase);
  if (merges.size() > cap) merges.resize(cap);
  merges_ = std::move(merges);

  std::map<std::pair<std::string, bool>, int32_t> ids;
  for (int b = 0; b < 256; ++b) {
    ids[{std::string(1, static_cast<char>(b)), false}] = kByteBase + b;
    ids[{std::string(1, static_cast<char>(b)), true}] = kByteEndBase + b;
  }
  auto split = [](const std::string& sym) {
    const bool end = sym.ends_with(kEndOfWord) && sym.size() > kEndOfWord.size();
    return std::pair<std::string, bool>{end ? sym.substr(0, sym.size() - kEndOfWord.size()) : sym, end};
  };
  merged_symbols_.reserve(merges_.size());
  for (size_t r = 0; r < merges_.size(); ++r) {
    const auto left = split(merges_[r].left);
    const auto right = split(merges_[r].right);
    const auto li = ids.find(left), ri = ids.find(right);
    if (left.second || li == ids.end() || ri == ids.end()) {
      throw std::invalid_argument(fmt::format("merge {} ({} {}) refers to an unknown symbol", r + 1,
                                              encode_symbol(merges_[r].left), encode_symbol(merges_[r].right)));
    }
    const std::pair<std::string, bool> product{left.first + right.first, right.second};
    merged_symbols_.push_back(product);
    const int32_t id = kMergeBase + static_cast<int32_t>(r);
    // A product reached by an earlier merge keeps its earlier id.
    const auto [it, inserted] = ids.emplace(product, id);
    rank_.emplace(std::pair{li->second, ri->second}, static_cast<int32_t>(r));
    rule_ids_.emplace_back(li->second, ri->second);
    product_id_.push_back(it->second);
  }
}

BpeTokenizer BpeTokenizer::from_stream(std::istream& in, int32_t vocab_size) {
  std::vector<MergeRule> merges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos)
      throw std::invalid_argument(fmt::format("merge table line {}: expected two symbols", line_no));
    try {
      merges.push_back({decode_symbol(std::string_view(line).substr(0, sp)),
                        decode_symbol(std::string_view(line).substr(sp + 1))});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(fmt::format("merge table line {}: {}", line_no, e.what()));
    }
  }
  return BpeTokenizer(std::move(merges), vocab_size);
}

BpeTokenizer BpeTokenizer::from_file(const std::string& path, int32_t vocab_size) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open merge table " + path);
  return from_stream(in, vocab_size);
}

const BpeTokenizer& BpeTokenizer::builtin() {
  static const BpeTokenizer tok = [] {
    std::istringstream in{std::string(detail::kBuiltinMerges)};
    return from_stream(in);
  }();
  return tok;
}

std::vector<int32_t> BpeTokenizer::encode_word(std::string_view word) const {
  std::vector<int32_t> syms;
  syms.reserve(word.size());
  for (size_t i = 0; i < word.size(); ++i) {
    const auto b = static_cast<unsigned char>(word[i]);
    syms.push_back((i + 1 == word.size() ? kByteEndBase : kByteBase) + b);
  }
  while (syms.size() > 1) {
    int32_t best = INT32_MAX;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = rank_.find({syms[i], syms[i + 1]});
      if (it != rank_.end()) best = std::min(best, it->second);
    }
    if (best == INT32_MAX) break;
    const auto [a, b] = rule_ids_[static_cast<size_t>(best)];
    std::vector<int32_t> next;
    next.reserve(syms.size());
    for (size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
        next.push_back(product_id_[static_cast<size_t>(best)]);
        ++i;
      } else {
        next.push_back(syms[i]);
      }
    }
    syms = std::move(next);
  }
  return syms;
}

TokenSequence BpeTokenizer::tokenize(std::string_view prompt, int max_len) const {
  if (max_len < 2) throw std::invalid_argument(fmt::format("max_len must be at least 2 (got {})", max_len));
  validate_utf8(prompt);
  std::vector<int32_t> ids{kSosId};
  for (const auto& w : pretokenize(prompt)) {
    const auto piece = encode_word(w);
    ids.insert(ids.end(), piece.begin(), piece.end());
    if (ids.size() >= static_cast<size_t>(max_len)) break;
  }
  if (ids.size() > static_cast<size_t>(max_len - 1)) ids.resize(static_cast<size_t>(max_len - 1));
  ids.push_back(kEosId);
  TokenSequence seq;
  seq.length = static_cast<int>(ids.size());
  seq.max_len = max_len;
  ids.resize(static_cast<size_t>(max_len), kPadId);
  seq.ids = std::move(ids);
  return seq;
}

std::pair<std::string, bool> BpeTokenizer::symbol(int32_t id) const {
  if (id >= kByteBase && id < kByteEndBase) return {std::string(1, static_cast<char>(id - kByteBase)), false};
  if (id >= kByteEndBase && id < kMergeBase) return {std::string(1, static_cast<char>(id - kByteEndBase)), true};
  const int64_t r = static_cast<int64_t>(id) - kMergeBase;
  if (r >= 0 && r < static_cast<int64_t>(merged_symbols_.size())) return merged_symbols_[static_cast<size_t>(r)];
  throw std::out_of_range(fmt::format("token id {} has no symbol", id));
}

std::string BpeTokenizer::detokenize(const std::vector<int32_t>& ids) const {
  std::string out;
  for (int32_t id : ids) {
    if (id == kPadId || id == kSosId) continue;
    if (id == kEosId) break;
    const auto [bytes, end] = symbol(id);
    out += bytes;
    if (end) out += ' ';
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<MergeRule> learn_merges(const std::map<std::string, int64_t>& word_counts, int num_merges,
                                    int64_t min_count) {
  std::vector<std::pair<std::vector<std::string>, int64_t>> words;
  for (const auto& [w, n] : word_counts) {
    if (w.empty()) continue;
    std::vector<std::string> syms;
    for (size_t i = 0; i < w.size(); ++i) syms.emplace_back(1, w[i]);
    syms.back() += kEndOfWord;
    words.emplace_back(std::move(syms), n);
  }
  std::vector<MergeRule> merges;
  while (static_cast<int>(merges.size()) < num_merges) {
    std::map<std::pair<std::string, std::string>, int64_t> counts;
    for (const auto& [syms, n] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += n;
    const std::pair<std::string, std::string>* best = nullptr;
    int64_t best_n = 0;
    for (const auto& [pair, n] : counts) {
      if (n > best_n) {  // map order makes the first maximal pair the smallest
        best_n = n;
        best = &pair;
      }
    }
    if (!best || best_n < min_count) break;
    const MergeRule rule{best->first, best->second};
    for (auto& [syms, n] : words) {
      std::vector<std::string> next;
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == rule.left && syms[i + 1] == rule.right) {
          next.push_back(rule.left + rule.right);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    merges.push_back(rule);
  }
  return merges;
}

std::string format_merges(const std::vector<MergeRule>& merges) {
  std::string out = "#version: 0.2\n";
  for (const auto& m : merges) out += encode_symbol(m.left) + " " + encode_symbol(m.right) + "\n";
  return out;
}

PromptRegistry::PromptRegistry() {
  entries_["P1"] = "Detect Any text in the image.";
  entries_["P2"] = "Where is text located in the scene?";
  entries_["P3"] = "Detect Any text in the scene.";
}

const std::string& PromptRegistry::get(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw std::out_of_range("unknown prompt id '" + id + "'");
  return it->second;
}

void PromptRegistry::add(const std::string& id, std::string text) { entries_[id] = std::move(text); }

}  // namespace vltd
