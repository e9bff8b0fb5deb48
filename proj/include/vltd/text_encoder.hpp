#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vltd/nn.hpp"
#include "vltd/tokenizer.hpp"

namespace vltd {

struct TextEncoderConfig {
  int32_t vocab_size = kDefaultVocabSize;
  int width = 64;    // C
  int out_dim = 64;  // C'
  int layers = 2;
  int heads = 4;
  int max_len = kDefaultMaxLen;
  uint64_t seed = 1234;
  std::string weights_path;  // optional archive with pretrained weights
};

struct TextFeatures {
  Tensor per_token;  // [L, C], F_t
  Tensor global;     // [C'], F_s
};

// Small causal transformer in the CLIP text-tower layout. All parameters are
// created frozen (requires_grad = false).
class TextEncoder {
 public:
  explicit TextEncoder(const TextEncoderConfig& cfg);

  TextFeatures encode(const TokenSequence& tokens) const;
  ParamList params() const;
  uint64_t fingerprint() const;
  const TextEncoderConfig& config() const { return cfg_; }

 private:
  struct Block {
    LayerNorm ln1, ln2;
    Linear q, k, v, o, fc1, fc2;
  };

  TextEncoderConfig cfg_;
  Tensor token_embedding_;  // [V, C]
  Tensor positional_;       // [max_len, C]
  std::vector<Block> blocks_;
  LayerNorm ln_final_;
  Tensor projection_;  // [C, C']
};

}  // namespace vltd
