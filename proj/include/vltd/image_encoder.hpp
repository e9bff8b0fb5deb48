#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vltd/nn.hpp"

namespace vltd {

struct ImageEncoderConfig {
  // Output channels of stages 2..5 (strides 4, 8, 16, 32).
  std::array<int, 4> channels{32, 64, 128, 256};
  int blocks_per_stage = 1;
  // Per-channel input normalization (CLIP statistics).
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> stddev{0.26862954, 0.26130258, 0.27577711};
  std::string weights_path;  // optional backbone archive
};

// Four maps at strides 4, 8, 16, 32, each [C_i, H/s, W/s].
struct FeaturePyramid {
  std::array<Tensor, 4> levels;
};

// Residual CNN: a two-conv stride-4 stem, then one stage per pyramid level.
// Stages after the first open with a stride-2 block and a 1x1 projection
// shortcut. No normalization layers.
class ImageEncoder {
 public:
  ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng);

  // image: [3, H, W] with values in [0, 1]; H and W must be multiples of 32.
  FeaturePyramid forward(const Tensor& image) const;
  ParamList params() const;
  const ImageEncoderConfig& config() const { return cfg_; }

 private:
  struct Block {
    Conv2d conv1, conv2, shortcut;  // shortcut undefined when identity
    Tensor forward(const Tensor& x) const;
  };

  ImageEncoderConfig cfg_;
  Conv2d stem1_, stem2_;
  std::array<std::vector<Block>, 4> stages_;
};

// Normalizes an image with the configured channel statistics. Constant, no graph.
Tensor normalize_image(const Tensor& image, const std::array<double, 3>& mean, const std::array<double, 3>& stddev);

}  // namespace vltd
