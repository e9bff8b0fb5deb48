#pragma once

#include <algorithm>
#include <vector>

#include "vltd/geometry.hpp"
#include "vltd/nn.hpp"

namespace vltd::testing {

// Maximum matching size by enumerating every injective det -> gt assignment.
inline int brute_force_max_matching(const std::vector<std::vector<double>>& iou, double thr, size_t d = 0,
                                    std::vector<bool>* used = nullptr) {
  std::vector<bool> local;
  if (!used) {
    local.assign(iou.empty() ? 0 : iou[0].size(), false);
    used = &local;
  }
  if (d == iou.size()) return 0;
  int best = brute_force_max_matching(iou, thr, d + 1, used);
  for (size_t g = 0; g < iou[d].size(); ++g) {
    if ((*used)[g] || iou[d][g] < thr) continue;
    (*used)[g] = true;
    best = std::max(best, 1 + brute_force_max_matching(iou, thr, d + 1, used));
    (*used)[g] = false;
  }
  return best;
}

inline double monte_carlo_iou(const Polygon& a, const Polygon& b, Rng& rng, int samples) {
  const Box ba = bounding_box(a), bb = bounding_box(b);
  const Box box{std::min(ba.x0, bb.x0), std::min(ba.y0, bb.y0), std::max(ba.x1, bb.x1), std::max(ba.y1, bb.y1)};
  int inter = 0, uni = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = rng.uniform(box.x0, box.x1), y = rng.uniform(box.y0, box.y1);
    const bool in_a = point_in_polygon(a, x, y), in_b = point_in_polygon(b, x, y);
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace vltd::testing
