#include "vltd/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace vltd {

Tensor positional_encoding_1d(int64_t length, int64_t dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("positional encoding dim must be even, got " + std::to_string(dim));
  std::vector<double> v(static_cast<size_t>(length * dim));
  for (int64_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    for (int64_t p = 0; p < length; ++p) {
      v[static_cast<size_t>(p * dim + 2 * i)] = std::sin(static_cast<double>(p) * freq);
      v[static_cast<size_t>(p * dim + 2 * i + 1)] = std::cos(static_cast<double>(p) * freq);
    }
  }
  return Tensor::from({length, dim}, std::move(v));
}

Tensor positional_encoding_2d(int64_t h, int64_t w, int64_t dim) {
  if (dim <= 0 || dim % 4 != 0)
    throw std::invalid_argument("2-D positional encoding dim must be a multiple of 4, got " + std::to_string(dim));
  const int64_t half = dim / 2;
  const auto rows = positional_encoding_1d(h, half).values();
  const auto cols = positional_encoding_1d(w, half).values();
  std::vector<double> v(static_cast<size_t>(h * w * dim));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double* dst = &v[static_cast<size_t>((y * w + x) * dim)];
      for (int64_t c = 0; c < half; ++c) {
        dst[c] = rows[static_cast<size_t>(y * half + c)];
        dst[half + c] = cols[static_cast<size_t>(x * half + c)];
      }
    }
  }
  return Tensor::from({h * w, dim}, std::move(v));
}

Tensor flatten_grid(const Tensor& fmap) {
  if (fmap.rank() != 3) throw std::invalid_argument("flatten_grid: expected [C, h, w], got " + shape_str(fmap.shape()));
  return ops::transpose(fmap.reshape({fmap.dim(0), fmap.dim(1) * fmap.dim(2)}));
}

MultiHeadAttention::MultiHeadAttention(int64_t dim, int heads, Rng& rng)
    : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng), heads(heads) {}

Tensor MultiHeadAttention::forward(const Tensor& xq, const Tensor& xkv, AttentionRecord* record) const {
  if (xkv.dim(0) == 0) throw std::invalid_argument("attention over an empty key set");
  const Tensor qq = q.forward(xq), kk = k.forward(xkv);
  const ops::AttentionOptions opts{heads, false};
  if (record) {
    record->queries = xq.dim(0);
    record->keys = xkv.dim(0);
    record->probs = ops::attention_probabilities(qq, kk, opts);
  }
  return o.forward(ops::attention(qq, kk, v.forward(xkv), opts));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  q.collect(out, prefix + ".q");
  k.collect(out, prefix + ".k");
  v.collect(out, prefix + ".v");
  o.collect(out, prefix + ".o");
}

VlDecoder::VlDecoder(const DecoderConfig& cfg, int64_t visual_channels, int64_t text_channels, Rng& rng)
    : cfg_(cfg) {
  if (cfg.num_layers < 1) throw std::invalid_argument("decoder num_layers must be >= 1");
  if (cfg.num_heads < 1 || cfg.model_dim % cfg.num_heads != 0)
    throw std::invalid_argument("decoder model_dim " + std::to_string(cfg.model_dim) + " not divisible by heads " +
                                std::to_string(cfg.num_heads));
  if (cfg.positional_encoding && cfg.model_dim % 4 != 0)
    throw std::invalid_argument("decoder model_dim must be a multiple of 4 for 2-D positional encoding");
  if (cfg.activation != "gelu" && cfg.activation != "relu")
    throw std::invalid_argument("decoder activation must be gelu or relu, got " + cfg.activation);
  const int64_t d = cfg.model_dim;
  visual_in = Linear(visual_channels, d, rng);
  text_in = Linear(text_channels, d, rng);
  text_placeholder = normal_tensor({1, d}, 1.0, rng);
  for (int i = 0; i < cfg.num_layers; ++i) {
    Layer l;
    l.norm1 = LayerNorm(d);
    l.norm2 = LayerNorm(d);
    l.norm3 = LayerNorm(d);
    l.self_attn = MultiHeadAttention(d, cfg.num_heads, rng);
    l.cross_attn = MultiHeadAttention(d, cfg.num_heads, rng);
    l.fc1 = Linear(d, cfg.ff_dim, rng);
    l.fc2 = Linear(cfg.ff_dim, d, rng);
    layers.push_back(std::move(l));
  }
}

Tensor VlDecoder::mlp(const Layer& layer, const Tensor& x) const {
  const Tensor h = layer.fc1.forward(x);
  return layer.fc2.forward(cfg_.activation == "relu" ? ops::relu(h) : ops::gelu(h));
}

Tensor VlDecoder::forward(const Tensor& visual, const Tensor& text, AttentionProbe* probe) const {
  Tensor x = visual_in.forward(flatten_grid(visual));
  if (cfg_.positional_encoding) x = ops::add(x, positional_encoding_2d(visual.dim(1), visual.dim(2), cfg_.model_dim));
  Tensor memory;
  if (cfg_.text_enabled) {
    if (text.rank() != 2 || text.dim(0) == 0)
      throw std::invalid_argument("decoder text features must be non-empty [L, C], got " + shape_str(text.shape()));
    memory = text_in.forward(text);
    if (cfg_.positional_encoding) memory = ops::add(memory, positional_encoding_1d(text.dim(0), cfg_.model_dim));
  } else {
    memory = text_placeholder;
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    AttentionRecord* self_rec = nullptr;
    AttentionRecord* cross_rec = nullptr;
    if (probe) {
      probe->records.push_back({static_cast<int>(i), false, 0, 0, {}});
      probe->records.push_back({static_cast<int>(i), true, 0, 0, {}});
      self_rec = &probe->records[probe->records.size() - 2];
      cross_rec = &probe->records.back();
    }
    const Tensor h1 = l.norm1.forward(x);
    x = ops::add(x, l.self_attn.forward(h1, h1, self_rec));
    x = ops::add(x, l.cross_attn.forward(l.norm2.forward(x), memory, cross_rec));
    x = ops::add(x, mlp(l, l.norm3.forward(x)));
  }
  return x;
}

ParamList VlDecoder::params() const {
  ParamList out;
  visual_in.collect(out, "decoder.visual_in");
  if (cfg_.text_enabled) {
    text_in.collect(out, "decoder.text_in");
  } else {
    out.push_back({"decoder.text_placeholder", text_placeholder});
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    const Layer& l = layers[i];
    l.norm1.collect(out, p + ".norm1");
    l.norm2.collect(out, p + ".norm2");
    l.norm3.collect(out, p + ".norm3");
    l.self_attn.collect(out, p + ".self_attn");
    l.cross_attn.collect(out, p + ".cross_attn");
    l.fc1.collect(out, p + ".fc1");
    l.fc2.collect(out, p + ".fc2");
  }
  return out;
}

}  // namespace vltd
