#include "vltd/text_encoder.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "vltd/archive.hpp"
#include "vltd/ops.hpp"

namespace vltd {

TextEncoder::TextEncoder(const TextEncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.width % cfg.heads != 0)
    throw std::invalid_argument(fmt::format("text width {} not divisible by {} heads", cfg.width, cfg.heads));
  Rng rng(cfg.seed);
  const int64_t c = cfg.width;
  token_embedding_ = normal_tensor({cfg.vocab_size, c}, 0.02, rng);
  positional_ = normal_tensor({cfg.max_len, c}, 0.01, rng);
  for (int i = 0; i < cfg.layers; ++i) {
    Block b;
    b.ln1 = LayerNorm(c);
    b.ln2 = LayerNorm(c);
    b.q = Linear(c, c, rng);
    b.k = Linear(c, c, rng);
    b.v = Linear(c, c, rng);
    b.o = Linear(c, c, rng);
    b.fc1 = Linear(c, 4 * c, rng);
    b.fc2 = Linear(4 * c, c, rng);
    blocks_.push_back(std::move(b));
  }
  ln_final_ = LayerNorm(c);
  projection_ = normal_tensor({c, cfg.out_dim}, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  if (!cfg.weights_path.empty()) load_params(params(), read_archive(cfg.weights_path));
  set_trainable(params(), false);
}

TextFeatures TextEncoder::encode(const TokenSequence& tokens) const {
  if (tokens.length < 2 || tokens.length > cfg_.max_len || tokens.ids.empty() || tokens.ids[0] != kSosId ||
      tokens.ids[static_cast<size_t>(tokens.length - 1)] != kEosId) {
    throw std::invalid_argument("encode_text: token sequence must be SOS ... EOS within max_len");
  }
  const auto ids = tokens.active();
  for (int32_t id : ids)
    if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument(fmt::format("token id {} outside vocabulary", id));
  const int64_t len = tokens.length;

  Tensor x = ops::add(ops::embedding(token_embedding_, ids), ops::slice_rows(positional_, 0, len));
  const ops::AttentionOptions causal{.heads = cfg_.heads, .causal = true};
  for (const Block& b : blocks_) {
    const Tensor h = b.ln1.forward(x);
    x = ops::add(x, b.o.forward(ops::attention(b.q.forward(h), b.k.forward(h), b.v.forward(h), causal)));
    x = ops::add(x, b.fc2.forward(ops::gelu(b.fc1.forward(b.ln2.forward(x)))));
  }
  TextFeatures f;
  f.per_token = x;
  const Tensor eos = ln_final_.forward(ops::slice_rows(x, len - 1, len));
  f.global = ops::matmul(eos, projection_).reshape({cfg_.out_dim});
  return f;
}

ParamList TextEncoder::params() const {
  ParamList out{{"text.token_embedding", token_embedding_}, {"text.positional", positional_}};
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    const std::string p = fmt::format("text.block{}", i);
    b.ln1.collect(out, p + ".ln1");
    b.q.collect(out, p + ".q");
    b.k.collect(out, p + ".k");
    b.v.collect(out, p + ".v");
    b.o.collect(out, p + ".o");
    b.ln2.collect(out, p + ".ln2");
    b.fc1.collect(out, p + ".fc1");
    b.fc2.collect(out, p + ".fc2");
  }
  ln_final_.collect(out, "text.ln_final");
  out.push_back({"text.projection", projection_});
  return out;
}

uint64_t TextEncoder::fingerprint() const { return vltd::fingerprint(params()); }

}  // namespace vltd
