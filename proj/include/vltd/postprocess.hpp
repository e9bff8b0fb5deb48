#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "vltd/instances.hpp"

namespace vltd {

enum class PolygonMode { kQuad, kPolygon };

struct PostprocessConfig {
  double threshold = 0.5;
  int min_area = 16;  // pixels at full resolution
  PolygonMode mode = PolygonMode::kQuad;
  int max_vertices = 14;
};

// mask[i] = map[i] >= threshold.
std::vector<uint8_t> binarize(std::span<const double> map, double threshold);

// 8-connected labelling in raster order; 0 is background, labels start at 1.
struct Components {
  std::vector<int32_t> labels;
  std::vector<int64_t> areas;  // areas[k] for label k + 1
  int32_t count() const { return static_cast<int32_t>(areas.size()); }
};
Components connected_components(std::span<const uint8_t> mask, int64_t height, int64_t width);

// Outer boundary of one component along pixel edges, in corner coordinates.
// Diagonal neighbours stay on the same contour, so the ring may touch itself
// at a corner.
Polygon trace_contour(const Components& comps, int32_t label, int64_t height, int64_t width);

// Components of at least min_area pixels turned into detections, ordered by the
// top-left corner (y, then x) of their bounding boxes.
std::vector<Detection> extract_instances(std::span<const uint8_t> mask, int64_t height, int64_t width,
                                         std::span<const double> score_map, const PostprocessConfig& cfg);

// One detection per line: x1,y1,...,xn,yn,score. Numbers round-trip exactly.
std::string format_detections(const std::vector<Detection>& dets);
std::vector<Detection> parse_detections(std::istream& in, const std::string& source = "<stream>");
std::vector<Detection> read_detections(const std::string& path);
void write_detections(const std::string& path, const std::vector<Detection>& dets);

}  // namespace vltd
