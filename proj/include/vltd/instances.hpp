#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vltd/geometry.hpp"

namespace vltd {

// Ground-truth text region.
struct TextInstance {
  Polygon polygon;
  std::string script;
  std::string transcription;
  bool ignore = false;  // transcription "###"
};

struct Detection {
  Polygon polygon;
  double score = 0.0;
};

// Full-resolution rasterized ground truth. Ignored pixels are never positive.
struct GroundTruthMask {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> positive;
  std::vector<uint8_t> ignore;
};

}  // namespace vltd
