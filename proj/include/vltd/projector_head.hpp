#pragma once

#include <cstdint>
#include <vector>

#include "vltd/instances.hpp"
#include "vltd/nn.hpp"
#include "vltd/ops.hpp"

namespace vltd {

struct HeadConfig {
  int dim = 64;       // D
  int upsample = 1;   // spatial factor applied to F_c before projection
  ops::Reduction reduction = ops::Reduction::kMean;
  // When false a learned placeholder replaces the global text vector.
  bool text_enabled = true;
};

struct ProjectedFeatures {
  Tensor pixel;  // z_v [N, D]
  Tensor text;   // z_t [D]
  int64_t grid_h = 0;
  int64_t grid_w = 0;
};

// Loss targets on the projection grid. weight 0 marks ignored cells.
struct GridTargets {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> targets;
  std::vector<double> weights;
};

class ProjectorHead {
 public:
  ProjectorHead(const HeadConfig& cfg, int64_t model_dim, int64_t global_dim, Rng& rng);

  // fc: [grid_h * grid_w, model_dim]; fs: [global_dim], ignored when text is disabled.
  ProjectedFeatures project(const Tensor& fc, const Tensor& fs, int64_t grid_h, int64_t grid_w) const;
  ParamList params() const;
  const HeadConfig& config() const { return cfg_; }

  Linear pixel_proj, text_proj;
  Tensor global_placeholder;  // [global_dim]

 private:
  HeadConfig cfg_;
};

// z_v[i] . z_t for every pixel, [N].
Tensor similarity_logits(const ProjectedFeatures& pf);
// sigmoid of the logits on the projection grid, [1, grid_h, grid_w].
Tensor similarity_grid(const ProjectedFeatures& pf);
// Grid probabilities bilinearly resampled to [1, out_h, out_w]; values stay in [0, 1].
Tensor similarity_map(const ProjectedFeatures& pf, int64_t out_h, int64_t out_w);

Tensor contrastive_loss(const ProjectedFeatures& pf, const GridTargets& gt, ops::Reduction reduction);

// Cell (y, x) covers source rows [y*f, (y+1)*f) and columns likewise. A cell is
// positive when at least half of its source pixels are positive and ignored when
// any source pixel is ignored.
GridTargets downsample_mask(const GroundTruthMask& mask, int factor);

}  // namespace vltd
