#pragma once

#include <array>
#include <cstdint>

#include "vltd/image_encoder.hpp"
#include "vltd/nn.hpp"

namespace vltd {

struct AfpnConfig {
  int channels = 128;  // C_f
  // Per-pixel weight grids instead of three global scalars.
  bool per_pixel_weights = false;
  // Logit grid size when per_pixel_weights is set; resampled to the feature grid
  // when the input size differs.
  int weight_grid_h = 128;
  int weight_grid_w = 128;
};

// Conv over [low, 2x-upsampled high] followed by ReLU. high must be exactly
// half of low's resolution.
Tensor fuse_step(const Tensor& low, const Tensor& high, const Conv2d& conv);

// sum_k softmax(logits)[k] * candidates[k]. logits are [3] or [3, H*W].
Tensor adaptive_fuse(const std::array<Tensor, 3>& candidates, const Tensor& logits);

// Fusion weights as probabilities, [3] or [3, H*W]. Constant, no graph.
std::vector<double> fusion_weights(const Tensor& logits);

struct AfpnOutput {
  std::array<Tensor, 3> intermediates;  // F_v1, F_v2, F_v3, all at stride 4
  Tensor weights;                       // softmax of the logits, [3] or [3, H*W]
  Tensor fused;                         // [C_f, H/4, W/4]
};

class Afpn {
 public:
  Afpn(const AfpnConfig& cfg, const std::array<int, 4>& pyramid_channels, Rng& rng);

  AfpnOutput forward_full(const FeaturePyramid& pyramid) const;
  Tensor forward(const FeaturePyramid& pyramid) const { return forward_full(pyramid).fused; }
  ParamList params() const;
  const AfpnConfig& config() const { return cfg_; }

  std::array<Conv2d, 3> convs;
  Tensor logits;  // [3] or [3, grid_h * grid_w], zero at init

 private:
  AfpnConfig cfg_;
};

}  // namespace vltd
