#include "vltd/model.hpp"

namespace vltd {

namespace {

// Each submodule draws from its own stream so changing one size leaves the
// others' initial weights untouched.
Rng stream(uint64_t seed, uint64_t salt) { return Rng(seed * 0x9E3779B97F4A7C15ULL + salt); }

template <typename Module, typename... Args>
Module build(uint64_t seed, uint64_t salt, const Args&... args) {
  Rng rng = stream(seed, salt);
  return Module(args..., rng);
}

void append(ParamList& out, const ParamList& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

Detector::Detector(const ModelConfig& cfg)
    : image_encoder(build<ImageEncoder>(cfg.seed, 1, cfg.image)),
      afpn(build<Afpn>(cfg.seed, 2, cfg.afpn, cfg.image.channels)),
      decoder(build<VlDecoder>(cfg.seed, 3, cfg.decoder, int64_t{cfg.afpn.channels}, int64_t{cfg.text.width})),
      head(build<ProjectorHead>(cfg.seed, 4, cfg.head, int64_t{cfg.decoder.model_dim}, int64_t{cfg.text.out_dim})),
      text_encoder(cfg.text),
      cfg_(cfg) {}

ForwardResult Detector::forward(const Tensor& image, const TextFeatures& text, AttentionProbe* probe) const {
  ForwardResult r;
  r.pyramid = image_encoder.forward(image);
  r.afpn = afpn.forward_full(r.pyramid);
  const int64_t gh = r.afpn.fused.dim(1), gw = r.afpn.fused.dim(2);
  r.fc = decoder.forward(r.afpn.fused, text.per_token, probe);
  r.projected = head.project(r.fc, text.global, gh, gw);
  return r;
}

Tensor Detector::similarity(const ForwardResult& r, int64_t height, int64_t width) const {
  return similarity_map(r.projected, height, width);
}

TextFeatures Detector::encode_prompt(const std::string& prompt) const {
  std::lock_guard lock(cache_mutex_);
  auto it = prompt_cache_.find(prompt);
  if (it != prompt_cache_.end()) return it->second;
  NoGradGuard guard;
  TextFeatures f = text_encoder.encode(BpeTokenizer::builtin().tokenize(prompt, cfg_.text.max_len));
  prompt_cache_.emplace(prompt, f);
  return f;
}

ParamList Detector::trainable_params() const {
  ParamList out = image_encoder.params();
  append(out, afpn.params());
  append(out, decoder.params());
  append(out, head.params());
  return out;
}

}  // namespace vltd
