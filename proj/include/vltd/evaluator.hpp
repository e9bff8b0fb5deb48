#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vltd/instances.hpp"

namespace vltd {

inline const std::vector<double> kDefaultIouThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

struct MatchCounts {
  int64_t matched = 0;
  int64_t num_dets = 0;  // scored detections, after ignore filtering
  int64_t num_gts = 0;   // non-ignored ground truths

  MatchCounts& operator+=(const MatchCounts& o) {
    matched += o.matched;
    num_dets += o.num_dets;
    num_gts += o.num_gts;
    return *this;
  }
};

struct ThresholdEntry {
  double iou_threshold = 0.5;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  int64_t matched = 0;
  int64_t num_dets = 0;
  int64_t num_gts = 0;
};

struct EvalReport {
  std::vector<ThresholdEntry> entries;
  const ThresholdEntry& at(double threshold) const;
};

struct MatchOptions {
  // A detection is dropped when area(det ∩ ignored gt) / area(det) exceeds this.
  double ignore_overlap = 0.5;
};

// Greedy one-to-one matching on an IoU table iou[d][g]: pairs with IoU >=
// threshold are taken in descending IoU order, ties going to the lower
// detection index, then the lower ground-truth index.
std::vector<std::pair<int, int>> greedy_match(const std::vector<std::vector<double>>& iou, double threshold);

// Indices of detections that survive ignore filtering.
std::vector<int> scored_detections(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts,
                                   const MatchOptions& opts = {});

MatchCounts match_counts(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts, double threshold,
                         const MatchOptions& opts = {});
// P = matched / dets, R = matched / gts, F = 2PR / (P + R); empty cases give 0.
ThresholdEntry score_counts(double threshold, const MatchCounts& counts);
ThresholdEntry match_and_score(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts,
                               double threshold, const MatchOptions& opts = {});
EvalReport f_at_thresholds(const std::vector<Detection>& dets, const std::vector<TextInstance>& gts,
                           const std::vector<double>& thresholds = kDefaultIouThresholds,
                           const MatchOptions& opts = {});

// Per-image pairs, aggregated by summing counts before computing P/R/F.
struct ImagePair {
  std::vector<Detection> dets;
  std::vector<TextInstance> gts;
};
EvalReport evaluate_images(const std::vector<ImagePair>& images,
                           const std::vector<double>& thresholds = kDefaultIouThresholds,
                           const MatchOptions& opts = {});

std::string report_json(const EvalReport& report);
// Aligned table with one F column per threshold, e.g. "F1@50".
std::string report_table(const EvalReport& report);
std::string threshold_label(double threshold);

}  // namespace vltd
