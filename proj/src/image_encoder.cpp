#include "vltd/image_encoder.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

#include "vltd/archive.hpp"
#include "vltd/ops.hpp"

namespace vltd {

Tensor ImageEncoder::Block::forward(const Tensor& x) const {
  const Tensor h = conv2.forward(ops::relu(conv1.forward(x)));
  const Tensor skip = shortcut.weight.defined() ? shortcut.forward(x) : x;
  return ops::relu(ops::add(h, skip));
}

ImageEncoder::ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.blocks_per_stage < 1) throw std::invalid_argument("blocks_per_stage must be >= 1");
  const int c2 = cfg.channels[0];
  stem1_ = Conv2d(3, std::max(8, c2 / 2), 3, 2, rng);
  stem2_ = Conv2d(std::max(8, c2 / 2), c2, 3, 2, rng);
  int in = c2;
  for (int s = 0; s < 4; ++s) {
    const int out = cfg.channels[static_cast<size_t>(s)];
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      Block blk;
      blk.conv1 = Conv2d(in, out, 3, stride, rng);
      blk.conv2 = Conv2d(out, out, 3, 1, rng);
      // Halve the residual branch at init so activations stay bounded without normalization.
      for (double& w : blk.conv2.weight.values()) w *= 0.5;
      if (stride != 1 || in != out) blk.shortcut = Conv2d(in, out, 1, stride, rng);
      stages_[static_cast<size_t>(s)].push_back(std::move(blk));
      in = out;
    }
  }
  if (!cfg.weights_path.empty()) load_params(params(), read_archive(cfg.weights_path));
}

Tensor normalize_image(const Tensor& image, const std::array<double, 3>& mean, const std::array<double, 3>& stddev) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("image must be [3, H, W], got " + shape_str(image.shape()));
  const int64_t plane = image.dim(1) * image.dim(2);
  std::vector<double> v(image.values());
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < plane; ++i) v[static_cast<size_t>(c * plane + i)] = (v[static_cast<size_t>(c * plane + i)] - mean[c]) / stddev[c];
  return Tensor::from(image.shape(), std::move(v));
}

FeaturePyramid ImageEncoder::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("image must be [3, H, W], got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  if (h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0) {
    throw std::invalid_argument(fmt::format(
        "image size {}x{} is not a multiple of 32; resize first (e.g. to 512x512 with resize_sample)", h, w));
  }
  Tensor x = ops::relu(stem1_.forward(normalize_image(image, cfg_.mean, cfg_.stddev)));
  x = ops::relu(stem2_.forward(x));
  FeaturePyramid p;
  for (size_t s = 0; s < 4; ++s) {
    for (const Block& b : stages_[s]) x = b.forward(x);
    p.levels[s] = x;
  }
  return p;
}

ParamList ImageEncoder::params() const {
  ParamList out;
  stem1_.collect(out, "image.stem1");
  stem2_.collect(out, "image.stem2");
  for (size_t s = 0; s < 4; ++s) {
    for (size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string p = fmt::format("image.stage{}.block{}", s + 2, b);
      stages_[s][b].conv1.collect(out, p + ".conv1");
      stages_[s][b].conv2.collect(out, p + ".conv2");
      if (stages_[s][b].shortcut.weight.defined()) stages_[s][b].shortcut.collect(out, p + ".shortcut");
    }
  }
  return out;
}

}  // namespace vltd
