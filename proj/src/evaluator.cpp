#include "vltd/evaluator.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <tuple>

namespace vltd {

const ThresholdEntry& EvalReport::at(double threshold) const {
  for (const auto& e : entries)
    if (std::abs(e.iou_threshold - threshold) < 1e-12) return e;
  throw std::out_of_range(fmt::format("no report entry for IoU threshold {}", threshold));
}

std::vector<std::pair<int, int>> greedy_match(const std::vector<std::vector<double>>& iou, double threshold) {
  std::vector<std::tuple<double, int, int>> cands;
  for (size_t d = 0; d < iou.size(); ++d)
    for (size_t g = 0; g < iou[d].size(); ++g)
      if (iou[d][g] >= threshold) cands.emplace_back(iou[d][g], static_cast<int>(d), static_cast<int>(g));
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> det_used, gt_used;
  for (const auto& row : iou) gt_used.resize(std::max(gt_used.size(), row.size()), false);
  det_used.assign(iou.size(), false);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [v, d, g] : cands) {
    if (det_used[static_cast<size_t>(d)] || gt_used[static_cast<size_t>(g)]) continue;
    det_used[static_cast<size_t>(d)] = true;
    gt_used[static_cast<size_t>(g)] = true;
    pairs.emplace_back(d, g);
  }
  return pairs;
}

std::vector<int> scored_detections(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts,
                                   const MatchOptions& opts) {
  std::vector<int> keep;
  for (size_t d = 0; d < dets.size(); ++d) {
    const double area = polygon_area(dets[d].polygon);
    bool drop = false;
    if (area > 0.0) {
      for (const auto& gt : gts) {
        if (!gt.ignore) continue;
        if (intersection_area(dets[d].polygon, gt.polygon) / area > opts.ignore_overlap) {
          drop = true;
          break;
        }
      }
    }
    if (!drop) keep.push_back(static_cast<int>(d));
  }
  return keep;
}

MatchCounts match_counts(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts, double threshold,
                         const MatchOptions& opts) {
  const std::vector<int> keep = scored_detections(dets, gts, opts);
  std::vector<int> care;
  for (size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].ignore) continue;
    if (polygon_area(gts[g].polygon) <= 0.0) spdlog::warn("degenerate ground-truth polygon {}; IoU treated as 0", g);
    care.push_back(static_cast<int>(g));
  }
  std::vector<std::vector<double>> iou(keep.size(), std::vector<double>(care.size(), 0.0));
  for (size_t i = 0; i < keep.size(); ++i) {
    const Polygon& dp = dets[static_cast<size_t>(keep[i])].polygon;
    if (polygon_area(dp) <= 0.0) {
      spdlog::warn("degenerate detection polygon {}; IoU treated as 0", keep[i]);
      continue;
    }
    for (size_t j = 0; j < care.size(); ++j) iou[i][j] = polygon_iou(dp, gts[static_cast<size_t>(care[j])].polygon);
  }
  MatchCounts c;
  c.matched = static_cast<int64_t>(greedy_match(iou, threshold).size());
  c.num_dets = static_cast<int64_t>(keep.size());
  c.num_gts = static_cast<int64_t>(care.size());
  return c;
}

ThresholdEntry score_counts(double threshold, const MatchCounts& counts) {
  ThresholdEntry e;
  e.iou_threshold = threshold;
  e.matched = counts.matched;
  e.num_dets = counts.num_dets;
  e.num_gts = counts.num_gts;
  e.precision = counts.num_dets > 0 ? static_cast<double>(counts.matched) / static_cast<double>(counts.num_dets) : 0.0;
  e.recall = counts.num_gts > 0 ? static_cast<double>(counts.matched) / static_cast<double>(counts.num_gts) : 0.0;
  const double pr = e.precision + e.recall;
  e.f_score = pr > 0.0 ? 2.0 * e.precision * e.recall / pr : 0.0;
  return e;
}

ThresholdEntry match_and_score(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts,
                               double threshold, const MatchOptions& opts) {
  return score_counts(threshold, match_counts(dets, gts, threshold, opts));
}

EvalReport f_at_thresholds(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts,
                           const std::vector<double>& thresholds, const MatchOptions& opts) {
  return evaluate_images({ImagePair{dets, gts}}, thresholds, opts);
}

EvalReport evaluate_images(const std::vector<ImagePair>& images, const std::vector<double>& thresholds,
                           const MatchOptions& opts) {
  for (double t : thresholds)
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument(fmt::format("IoU threshold {} outside (0, 1]", t));
  std::vector<MatchCounts> totals(thresholds.size());
  for (const auto& img : images)
    for (size_t t = 0; t < thresholds.size(); ++t) totals[t] += match_counts(img.dets, img.gts, thresholds[t], opts);
  EvalReport r;
  for (size_t t = 0; t < thresholds.size(); ++t) r.entries.push_back(score_counts(thresholds[t], totals[t]));
  return r;
}

std::string threshold_label(double threshold) {
  return fmt::format("F1@{}", static_cast<int>(std::lround(threshold * 100.0)));
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : report.entries) {
    j.push_back({{"iou_threshold", e.iou_threshold},
                 {"precision", e.precision},
                 {"recall", e.recall},
                 {"f_score", e.f_score},
                 {"matched", e.matched},
                 {"num_dets", e.num_dets},
                 {"num_gts", e.num_gts}});
  }
  return nlohmann::json{{"entries", j}}.dump(2);
}

std::string report_table(const EvalReport& report) {
  std::string out = fmt::format("{:>8} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}\n", "IoU", "P", "R", "F", "matched",
                                "dets", "gts");
  for (const auto& e : report.entries) {
    out += fmt::format("{:>8} {:>9.4f} {:>9.4f} {:>9.4f} {:>8} {:>8} {:>8}\n", threshold_label(e.iou_threshold),
                       e.precision, e.recall, e.f_score, e.matched, e.num_dets, e.num_gts);
  }
  return out;
}

}  // namespace vltd
