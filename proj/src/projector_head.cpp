#include "vltd/projector_head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vltd/decoder.hpp"

namespace vltd {

ProjectorHead::ProjectorHead(const HeadConfig& cfg, int64_t model_dim, int64_t global_dim, Rng& rng)
    : pixel_proj(model_dim, cfg.dim, rng),
      // Text projection starts at std 1 / (sqrt(in) * D).
      text_proj(global_dim, cfg.dim, rng, true, 1.0 / (std::sqrt(static_cast<double>(global_dim)) * cfg.dim)),
      cfg_(cfg) {
  if (cfg.dim < 1 || cfg.upsample < 1) throw std::invalid_argument("head dim and upsample must be >= 1");
  global_placeholder = normal_tensor({global_dim}, 1.0, rng);
}

ProjectedFeatures ProjectorHead::project(const Tensor& fc, const Tensor& fs, int64_t grid_h, int64_t grid_w) const {
  if (fc.rank() != 2 || fc.dim(0) != grid_h * grid_w || fc.dim(1) != pixel_proj.in_features()) {
    throw std::invalid_argument("project: F_c " + shape_str(fc.shape()) + " does not match grid " +
                                std::to_string(grid_h) + "x" + std::to_string(grid_w) + " with " +
                                std::to_string(pixel_proj.in_features()) + " channels");
  }
  const Tensor global = cfg_.text_enabled ? fs : global_placeholder;
  if (global.numel() != text_proj.in_features())
    throw std::invalid_argument("project: global text vector has " + std::to_string(global.numel()) +
                                " values, expected " + std::to_string(text_proj.in_features()));
  ProjectedFeatures pf;
  Tensor rows = fc;
  pf.grid_h = grid_h;
  pf.grid_w = grid_w;
  if (cfg_.upsample > 1) {
    const Tensor grid = ops::transpose(fc).reshape({fc.dim(1), grid_h, grid_w});
    pf.grid_h = grid_h * cfg_.upsample;
    pf.grid_w = grid_w * cfg_.upsample;
    rows = flatten_grid(ops::resize_bilinear(grid, pf.grid_h, pf.grid_w));
  }
  pf.pixel = pixel_proj.forward(rows);
  pf.text = text_proj.forward(global.reshape({1, global.numel()})).reshape({text_proj.out_features()});
  return pf;
}

ParamList ProjectorHead::params() const {
  ParamList out;
  pixel_proj.collect(out, "head.pixel_proj");
  text_proj.collect(out, "head.text_proj");
  if (!cfg_.text_enabled) out.push_back({"head.global_placeholder", global_placeholder});
  return out;
}

Tensor similarity_logits(const ProjectedFeatures& pf) {
  const int64_t d = pf.text.numel();
  if (pf.pixel.dim(1) != d) throw std::invalid_argument("similarity: z_v and z_t dims differ");
  return ops::matmul(pf.pixel, pf.text.reshape({d, 1})).reshape({pf.pixel.dim(0)});
}

Tensor similarity_grid(const ProjectedFeatures& pf) {
  return ops::sigmoid(similarity_logits(pf)).reshape({1, pf.grid_h, pf.grid_w});
}

Tensor similarity_map(const ProjectedFeatures& pf, int64_t out_h, int64_t out_w) {
  return ops::resize_bilinear(similarity_grid(pf), out_h, out_w);
}

Tensor contrastive_loss(const ProjectedFeatures& pf, const GridTargets& gt, ops::Reduction reduction) {
  if (gt.height != pf.grid_h || gt.width != pf.grid_w)
    throw std::invalid_argument("contrastive_loss: target grid " + std::to_string(gt.height) + "x" +
                                std::to_string(gt.width) + " does not match projection grid " +
                                std::to_string(pf.grid_h) + "x" + std::to_string(pf.grid_w));
  return ops::bce_with_logits(similarity_logits(pf), gt.targets, gt.weights, reduction);
}

GridTargets downsample_mask(const GroundTruthMask& mask, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (mask.height % factor != 0 || mask.width % factor != 0)
    throw std::invalid_argument("mask size is not a multiple of the downsample factor");
  GridTargets g;
  g.height = mask.height / factor;
  g.width = mask.width / factor;
  g.targets.assign(static_cast<size_t>(g.height * g.width), 0.0);
  g.weights.assign(g.targets.size(), 1.0);
  for (int64_t y = 0; y < g.height; ++y) {
    for (int64_t x = 0; x < g.width; ++x) {
      int pos = 0;
      bool ignored = false;
      for (int64_t dy = 0; dy < factor; ++dy) {
        for (int64_t dx = 0; dx < factor; ++dx) {
          const size_t i = static_cast<size_t>((y * factor + dy) * mask.width + x * factor + dx);
          pos += mask.positive[i];
          ignored = ignored || mask.ignore[i] != 0;
        }
      }
      const size_t c = static_cast<size_t>(y * g.width + x);
      if (ignored) {
        g.weights[c] = 0.0;
      } else {
        g.targets[c] = 2 * pos >= factor * factor ? 1.0 : 0.0;
      }
    }
  }
  return g;
}

}  // namespace vltd
