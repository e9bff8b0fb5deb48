#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vltd/nn.hpp"
#include "vltd/ops.hpp"

namespace vltd {

struct DecoderConfig {
  int num_layers = 3;
  int num_heads = 8;
  int model_dim = 128;
  int ff_dim = 1024;
  std::string activation = "gelu";  // or "relu"
  bool positional_encoding = true;
  // When false the cross-attention attends to a learned placeholder token.
  bool text_enabled = true;
};

// Explicit attention probabilities recorded during a forward pass.
struct AttentionRecord {
  int layer = 0;
  bool cross = false;
  int64_t queries = 0;
  int64_t keys = 0;
  std::vector<std::vector<double>> probs;  // [head][queries * keys]
};

struct AttentionProbe {
  std::vector<AttentionRecord> records;
};

// pe[p, 2i] = sin(p / 10000^(2i/dim)), pe[p, 2i+1] = cos(same). dim must be even.
Tensor positional_encoding_1d(int64_t length, int64_t dim);
// First dim/2 channels encode the row, the rest the column; dim must be a multiple of 4.
// Rows are ordered row-major over the (h, w) grid.
Tensor positional_encoding_2d(int64_t h, int64_t w, int64_t dim);

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t dim, int heads, Rng& rng);

  // Queries from xq [N, D], keys and values from xkv [M, D].
  Tensor forward(const Tensor& xq, const Tensor& xkv, AttentionRecord* record = nullptr) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Linear q, k, v, o;
  int heads = 1;
};

class VlDecoder {
 public:
  VlDecoder(const DecoderConfig& cfg, int64_t visual_channels, int64_t text_channels, Rng& rng);

  // visual: [C_f, h, w]; text: [L, C_text] (ignored when text is disabled).
  // Returns F_c [h*w, model_dim].
  Tensor forward(const Tensor& visual, const Tensor& text, AttentionProbe* probe = nullptr) const;
  ParamList params() const;
  const DecoderConfig& config() const { return cfg_; }

  struct Layer {
    LayerNorm norm1, norm2, norm3;
    MultiHeadAttention self_attn, cross_attn;
    Linear fc1, fc2;
  };
  Linear visual_in, text_in;
  Tensor text_placeholder;  // [1, model_dim]
  std::vector<Layer> layers;

 private:
  Tensor mlp(const Layer& layer, const Tensor& x) const;

  DecoderConfig cfg_;
};

// Flattens [C, h, w] into [h*w, C].
Tensor flatten_grid(const Tensor& fmap);

}  // namespace vltd
