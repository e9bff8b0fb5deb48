#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <sstream>

#include "vltd/nn.hpp"
#include "vltd/postprocess.hpp"

namespace vltd {
namespace {

std::vector<uint8_t> blank(int64_t h, int64_t w) { return std::vector<uint8_t>(static_cast<size_t>(h * w), 0); }

void fill_rect(std::vector<uint8_t>& m, int64_t w, int64_t x0, int64_t y0, int64_t x1, int64_t y1) {
  for (int64_t y = y0; y < y1; ++y)
    for (int64_t x = x0; x < x1; ++x) m[static_cast<size_t>(y * w + x)] = 1;
}

// Independent breadth-first 8-connected component count.
int count_components(const std::vector<uint8_t>& m, int64_t h, int64_t w) {
  std::vector<bool> seen(m.size(), false);
  int count = 0;
  for (int64_t s = 0; s < h * w; ++s) {
    if (!m[static_cast<size_t>(s)] || seen[static_cast<size_t>(s)]) continue;
    ++count;
    std::deque<int64_t> q{s};
    seen[static_cast<size_t>(s)] = true;
    while (!q.empty()) {
      const int64_t p = q.front();
      q.pop_front();
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t y = p / w + dy, x = p % w + dx;
          if (y < 0 || x < 0 || y >= h || x >= w) continue;
          const size_t n = static_cast<size_t>(y * w + x);
          if (m[n] && !seen[n]) {
            seen[n] = true;
            q.push_back(static_cast<int64_t>(n));
          }
        }
    }
  }
  return count;
}

// The component plus every background pixel that cannot reach the border
// through 4-connected background.
std::vector<uint8_t> filled_component(const Components& c, int32_t label, int64_t h, int64_t w) {
  std::vector<uint8_t> reached(c.labels.size(), 0);
  std::deque<int64_t> q;
  auto push = [&](int64_t y, int64_t x) {
    if (y < 0 || x < 0 || y >= h || x >= w) return;
    const size_t i = static_cast<size_t>(y * w + x);
    if (reached[i] || c.labels[i] == label) return;
    reached[i] = 1;
    q.push_back(static_cast<int64_t>(i));
  };
  for (int64_t x = 0; x < w; ++x) {
    push(0, x);
    push(h - 1, x);
  }
  for (int64_t y = 0; y < h; ++y) {
    push(y, 0);
    push(y, w - 1);
  }
  while (!q.empty()) {
    const int64_t p = q.front();
    q.pop_front();
    push(p / w - 1, p % w);
    push(p / w + 1, p % w);
    push(p / w, p % w - 1);
    push(p / w, p % w + 1);
  }
  std::vector<uint8_t> out(c.labels.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = reached[i] ? 0 : 1;
  return out;
}

std::vector<uint8_t> random_blobs(Rng& rng, int64_t h, int64_t w, double density) {
  std::vector<uint8_t> m = blank(h, w);
  for (auto& v : m) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

TEST(Binarize, BoundaryIsInclusive) {
  const std::vector<double> half(10, 0.5), zero(10, 0.0);
  for (uint8_t v : binarize(half, 0.5)) EXPECT_EQ(v, 1);
  for (uint8_t v : binarize(zero, 0.5)) EXPECT_EQ(v, 0);
}

TEST(Binarize, MatchesLoopOracle) {
  Rng rng(1);
  std::vector<double> map(500);
  for (double& x : map) x = rng.uniform();
  const double thr = 0.37;
  const auto mask = binarize(map, thr);
  for (size_t i = 0; i < map.size(); ++i) EXPECT_EQ(mask[i], map[i] >= thr ? 1 : 0);
}

TEST(Components, CountMatchesFloodFill) {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_blobs(rng, 20, 25, rng.uniform(0.1, 0.6));
    EXPECT_EQ(connected_components(m, 20, 25).count(), count_components(m, 20, 25));
  }
}

TEST(Contour, RectangleCorners) {
  auto m = blank(10, 12);
  fill_rect(m, 12, 2, 3, 9, 7);
  const Components c = connected_components(m, 10, 12);
  const Polygon ring = trace_contour(c, 1, 10, 12);
  EXPECT_EQ(ring, (Polygon{{2, 3}, {9, 3}, {9, 7}, {2, 7}}));
}

TEST(Contour, RasterizesBackToFilledComponent) {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const int64_t h = 18, w = 22;
    const auto m = random_blobs(rng, h, w, rng.uniform(0.2, 0.7));
    const Components c = connected_components(m, h, w);
    for (int32_t k = 1; k <= c.count(); ++k) {
      const Polygon ring = trace_contour(c, k, h, w);
      const auto expect = filled_component(c, k, h, w);
      std::vector<uint8_t> got = blank(h, w);
      rasterize_polygon(ring, h, w, got);
      ASSERT_EQ(got, expect) << "trial " << trial << " label " << k;
      int64_t filled = 0;
      for (uint8_t v : expect) filled += v;
      EXPECT_NEAR(polygon_area(ring), static_cast<double>(filled), 1e-9);
    }
  }
}

TEST(Extract, EmptyMask) {
  const auto m = blank(16, 16);
  const std::vector<double> score(256, 0.0);
  EXPECT_TRUE(extract_instances(m, 16, 16, score, {}).empty());
}

TEST(Extract, RectangleQuadWithinOnePixel) {
  const int64_t h = 40, w = 50;
  auto m = blank(h, w);
  fill_rect(m, w, 5, 8, 30, 20);
  const std::vector<double> score(static_cast<size_t>(h * w), 0.8);
  const auto dets = extract_instances(m, h, w, score, {});
  ASSERT_EQ(dets.size(), 1u);
  ASSERT_EQ(dets[0].polygon.size(), 4u);
  const Polygon corners{{5, 8}, {30, 8}, {30, 20}, {5, 20}};
  for (const Point& c : corners) {
    bool near = false;
    for (const Point& p : dets[0].polygon) near = near || (std::abs(p.x - c.x) <= 1 && std::abs(p.y - c.y) <= 1);
    EXPECT_TRUE(near) << c.x << "," << c.y;
  }
  EXPECT_NEAR(dets[0].score, 0.8, 1e-12);
}

TEST(Extract, GapSeparatesAndFillingMerges) {
  const int64_t h = 20, w = 40;
  auto m = blank(h, w);
  fill_rect(m, w, 2, 5, 18, 12);
  fill_rect(m, w, 19, 5, 35, 12);
  const std::vector<double> score(static_cast<size_t>(h * w), 0.9);
  EXPECT_EQ(count_components(m, h, w), 2);
  EXPECT_EQ(extract_instances(m, h, w, score, {}).size(), 2u);
  fill_rect(m, w, 18, 5, 19, 12);
  EXPECT_EQ(count_components(m, h, w), 1);
  EXPECT_EQ(extract_instances(m, h, w, score, {}).size(), 1u);
}

TEST(Extract, MinAreaDropsSmallComponents) {
  auto m = blank(20, 20);
  fill_rect(m, 20, 1, 1, 4, 4);    // 9 px
  fill_rect(m, 20, 10, 10, 15, 15);  // 25 px
  const std::vector<double> score(400, 1.0);
  EXPECT_EQ(extract_instances(m, 20, 20, score, {}).size(), 1u);
}

TEST(Extract, InvariantsOnRandomMaps) {
  Rng rng(4);
  for (PolygonMode mode : {PolygonMode::kQuad, PolygonMode::kPolygon}) {
    for (int trial = 0; trial < 30; ++trial) {
      const int64_t h = 32, w = 48;
      std::vector<double> score(static_cast<size_t>(h * w));
      for (double& s : score) s = rng.uniform();
      const auto mask = binarize(score, 0.55);
      PostprocessConfig cfg;
      cfg.mode = mode;
      cfg.min_area = 4;
      const auto dets = extract_instances(mask, h, w, score, cfg);
      EXPECT_LE(static_cast<int>(dets.size()), count_components(mask, h, w));
      for (size_t i = 0; i < dets.size(); ++i) {
        const auto& d = dets[i];
        EXPECT_GE(d.polygon.size(), 3u);
        EXPECT_LE(d.polygon.size(), mode == PolygonMode::kQuad ? 4u : 14u);
        EXPECT_TRUE(is_simple(d.polygon));
        EXPECT_GE(d.score, 0.55);
        EXPECT_LE(d.score, 1.0);
        for (const Point& p : d.polygon) {
          EXPECT_GE(p.x, 0.0);
          EXPECT_LE(p.x, static_cast<double>(w));
          EXPECT_GE(p.y, 0.0);
          EXPECT_LE(p.y, static_cast<double>(h));
        }
        if (i > 0) {
          const Box a = bounding_box(dets[i - 1].polygon), b = bounding_box(d.polygon);
          EXPECT_TRUE(a.y0 < b.y0 || (a.y0 == b.y0 && a.x0 <= b.x0));
        }
      }
    }
  }
}

TEST(Extract, CurvedBandPolygonMode) {
  const int64_t h = 64, w = 96;
  auto m = blank(h, w);
  for (int64_t x = 8; x < 88; ++x) {
    const double yc = 32 + 14 * std::sin(static_cast<double>(x) / 14.0);
    for (int64_t y = static_cast<int64_t>(yc) - 5; y < static_cast<int64_t>(yc) + 5; ++y) m[static_cast<size_t>(y * w + x)] = 1;
  }
  const std::vector<double> score(static_cast<size_t>(h * w), 0.7);
  PostprocessConfig cfg;
  cfg.mode = PolygonMode::kPolygon;
  const auto dets = extract_instances(m, h, w, score, cfg);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_LE(dets[0].polygon.size(), 14u);
  Polygon truth;
  const Components c = connected_components(m, h, w);
  truth = trace_contour(c, 1, h, w);
  EXPECT_GT(polygon_iou(dets[0].polygon, truth), 0.8);
}

TEST(DetectionDump, RoundTripIsBitExact) {
  Rng rng(5);
  std::vector<Detection> dets;
  for (int i = 0; i < 20; ++i) {
    Detection d;
    const int n = static_cast<int>(rng.uniform_int(3, 14));
    for (int k = 0; k < n; ++k) d.polygon.push_back({rng.uniform(0, 512), rng.uniform(0, 512)});
    d.score = rng.uniform();
    dets.push_back(d);
  }
  std::istringstream in(format_detections(dets));
  const auto back = parse_detections(in);
  ASSERT_EQ(back.size(), dets.size());
  for (size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(back[i].polygon, dets[i].polygon);
    EXPECT_EQ(back[i].score, dets[i].score);
  }
}

TEST(DetectionDump, MalformedLinesReportLineNumber) {
  std::istringstream bad("1,1,2,2,3,3,0.5\n1,2,x,4,5,6,0.5\n");
  try {
    parse_detections(bad, "f.txt");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("f.txt:2"), std::string::npos);
  }
  std::istringstream short_line("1,1,2,2,0.5\n");
  EXPECT_THROW(parse_detections(short_line), std::runtime_error);
}

}  // namespace
}  // namespace vltd
