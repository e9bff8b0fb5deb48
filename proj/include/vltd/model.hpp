#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>

#include "vltd/afpn.hpp"
#include "vltd/decoder.hpp"
#include "vltd/image_encoder.hpp"
#include "vltd/projector_head.hpp"
#include "vltd/text_encoder.hpp"

namespace vltd {

struct ModelConfig {
  ImageEncoderConfig image;
  AfpnConfig afpn;
  DecoderConfig decoder;
  HeadConfig head;
  TextEncoderConfig text;
  uint64_t seed = 7;
};

struct ForwardResult {
  FeaturePyramid pyramid;
  AfpnOutput afpn;
  Tensor fc;  // [N, model_dim]
  ProjectedFeatures projected;
};

// Full detector: image encoder, AFPN, vision-language decoder and projector
// head, conditioned on a frozen text encoder.
class Detector {
 public:
  explicit Detector(const ModelConfig& cfg);

  // image: [3, H, W] in [0, 1].
  ForwardResult forward(const Tensor& image, const TextFeatures& text, AttentionProbe* probe = nullptr) const;
  // Probability map at the image resolution, [1, H, W].
  Tensor similarity(const ForwardResult& r, int64_t height, int64_t width) const;
  // Frozen text features for a prompt, cached per prompt string.
  TextFeatures encode_prompt(const std::string& prompt) const;

  ParamList trainable_params() const;
  const ModelConfig& config() const { return cfg_; }

  ImageEncoder image_encoder;
  Afpn afpn;
  VlDecoder decoder;
  ProjectorHead head;
  TextEncoder text_encoder;

 private:
  ModelConfig cfg_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, TextFeatures> prompt_cache_;
};

}  // namespace vltd
