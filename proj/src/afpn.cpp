#include "vltd/afpn.hpp"

#include <cmath>
#include <stdexcept>

#include "vltd/ops.hpp"

namespace vltd {

namespace {

Tensor upsample2(const Tensor& x) { return ops::resize_bilinear(x, 2 * x.dim(1), 2 * x.dim(2)); }

}  // namespace

Tensor fuse_step(const Tensor& low, const Tensor& high, const Conv2d& conv) {
  if (low.rank() != 3 || high.rank() != 3) throw std::invalid_argument("fuse_step: inputs must be [C, H, W]");
  if (2 * high.dim(1) != low.dim(1) || 2 * high.dim(2) != low.dim(2)) {
    throw std::invalid_argument("fuse_step: upsampled high " + std::to_string(2 * high.dim(1)) + "x" +
                                std::to_string(2 * high.dim(2)) + " does not match low " + std::to_string(low.dim(1)) +
                                "x" + std::to_string(low.dim(2)));
  }
  return ops::relu(conv.forward(ops::concat0(low, upsample2(high))));
}

Tensor adaptive_fuse(const std::array<Tensor, 3>& candidates, const Tensor& logits) {
  for (const Tensor& c : candidates) {
    if (c.shape() != candidates[0].shape())
      throw std::invalid_argument("adaptive_fuse: candidate shapes differ: " + shape_str(c.shape()) + " vs " +
                                  shape_str(candidates[0].shape()));
  }
  return ops::weighted_sum({candidates[0], candidates[1], candidates[2]}, ops::softmax_axis0(logits));
}

std::vector<double> fusion_weights(const Tensor& logits) {
  NoGradGuard guard;
  return ops::softmax_axis0(logits).values();
}

Afpn::Afpn(const AfpnConfig& cfg, const std::array<int, 4>& ch, Rng& rng) : cfg_(cfg) {
  if (cfg.channels < 1) throw std::invalid_argument("afpn channels must be >= 1");
  convs[0] = Conv2d(ch[0] + ch[1], cfg.channels, 3, 1, rng);
  convs[1] = Conv2d(cfg.channels + ch[2], cfg.channels, 3, 1, rng);
  convs[2] = Conv2d(cfg.channels + ch[3], cfg.channels, 3, 1, rng);
  logits = cfg.per_pixel_weights ? Tensor::zeros({3, int64_t{cfg.weight_grid_h} * cfg.weight_grid_w}, true)
                                 : Tensor::zeros({3}, true);
}

AfpnOutput Afpn::forward_full(const FeaturePyramid& p) const {
  AfpnOutput out;
  out.intermediates[0] = fuse_step(p.levels[0], p.levels[1], convs[0]);
  out.intermediates[1] = fuse_step(out.intermediates[0], upsample2(p.levels[2]), convs[1]);
  out.intermediates[2] = fuse_step(out.intermediates[1], upsample2(upsample2(p.levels[3])), convs[2]);
  Tensor lg = logits;
  if (cfg_.per_pixel_weights) {
    const int64_t h = out.intermediates[0].dim(1), w = out.intermediates[0].dim(2);
    if (h != cfg_.weight_grid_h || w != cfg_.weight_grid_w) {
      lg = ops::resize_bilinear(logits.reshape({3, cfg_.weight_grid_h, cfg_.weight_grid_w}), h, w);
    }
    lg = lg.reshape({3, h * w});
  }
  out.weights = ops::softmax_axis0(lg);
  out.fused = ops::weighted_sum({out.intermediates[0], out.intermediates[1], out.intermediates[2]}, out.weights);
  return out;
}

ParamList Afpn::params() const {
  ParamList out;
  for (size_t i = 0; i < 3; ++i) convs[i].collect(out, "afpn.conv" + std::to_string(i + 1));
  out.push_back({"afpn.logits", logits});
  return out;
}

}  // namespace vltd
