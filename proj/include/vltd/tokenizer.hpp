#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vltd {

inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kSosId = 1;
inline constexpr int32_t kEosId = 2;
inline constexpr int32_t kByteBase = 3;          // ids 3..258: raw bytes
inline constexpr int32_t kByteEndBase = 259;     // ids 259..514: byte + end-of-word
inline constexpr int32_t kMergeBase = 515;       // id of merge rank r = 515 + r
inline constexpr int kDefaultMaxLen = 77;
inline constexpr int32_t kDefaultVocabSize = 49152;

struct TokenSequence {
  std::vector<int32_t> ids;  // padded to max_len
  int length = 0;            // SOS..EOS inclusive
  int max_len = kDefaultMaxLen;

  std::vector<int32_t> active() const { return {ids.begin(), ids.begin() + length}; }
};

// Lowercases ASCII and splits into words: letter runs (bytes >= 0x80 count as
// letters), single digits, punctuation runs, and the usual English contractions.
std::vector<std::string> pretokenize(std::string_view text);

// GPT-2 printable encoding of raw bytes used by merge files.
std::string bytes_to_unicode(std::string_view bytes);
std::string unicode_to_bytes(std::string_view encoded);

struct MergeRule {
  std::string left;   // raw bytes, "</w>" suffix marks end of word
  std::string right;
};

class BpeTokenizer {
 public:
  // Merges beyond vocab_size - 515 are dropped.
  explicit BpeTokenizer(std::vector<MergeRule> merges, int32_t vocab_size = kDefaultVocabSize);
  // One merge per line ("left right", printable-encoded); '#' lines skipped.
  static BpeTokenizer from_stream(std::istream& in, int32_t vocab_size = kDefaultVocabSize);
  static BpeTokenizer from_file(const std::string& path, int32_t vocab_size = kDefaultVocabSize);
  // Table learned from the bundled corpus.
  static const BpeTokenizer& builtin();

  TokenSequence tokenize(std::string_view prompt, int max_len = kDefaultMaxLen) const;
  std::vector<int32_t> encode_word(std::string_view word) const;
  std::string detokenize(const std::vector<int32_t>& ids) const;

  int32_t vocab_size() const { return vocab_size_; }
  size_t num_merges() const { return merges_.size(); }
  const std::vector<MergeRule>& merges() const { return merges_; }
  // Raw bytes of a symbol and whether it ends a word.
  std::pair<std::string, bool> symbol(int32_t id) const;

 private:
  std::vector<MergeRule> merges_;
  int32_t vocab_size_;
  std::map<std::pair<int32_t, int32_t>, int32_t> rank_;  // (left id, right id) -> rank
  std::vector<std::pair<std::string, bool>> merged_symbols_;
  std::vector<std::pair<int32_t, int32_t>> rule_ids_;  // per rank
  std::vector<int32_t> product_id_;                   // per rank
};

// Learns up to num_merges merges from word frequencies; most frequent pair
// first, ties broken by the lexicographically smaller pair.
std::vector<MergeRule> learn_merges(const std::map<std::string, int64_t>& word_counts, int num_merges,
                                    int64_t min_count = 2);
std::string format_merges(const std::vector<MergeRule>& merges);

class PromptRegistry {
 public:
  // P1..P3 preloaded.
  PromptRegistry();
  const std::string& get(const std::string& id) const;
  void add(const std::string& id, std::string text);
  bool contains(const std::string& id) const { return entries_.count(id) > 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace vltd
