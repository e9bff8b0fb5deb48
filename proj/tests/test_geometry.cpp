#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "random_shapes.hpp"
#include "vltd/geometry.hpp"
#include "vltd/nn.hpp"

namespace vltd {
namespace {

using testing::monte_carlo_iou;
using testing::random_convex;
using testing::random_star;
using testing::rect;

TEST(Geometry, AreaAndOrientation) {
  const Polygon sq = rect(0, 0, 2, 3);
  EXPECT_DOUBLE_EQ(polygon_area(sq), 6.0);
  EXPECT_DOUBLE_EQ(signed_area(Polygon(sq.rbegin(), sq.rend())), -signed_area(sq));
}

TEST(Geometry, OffsetUnitSquaresIouIsOneThird) {
  EXPECT_NEAR(polygon_iou(rect(0, 0, 1, 1), rect(0.5, 0, 1.5, 1)), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(polygon_iou(rect(0, 0, 1, 1), rect(0, 0, 1, 1)), 1.0);
  EXPECT_DOUBLE_EQ(polygon_iou(rect(0, 0, 1, 1), rect(2, 2, 3, 3)), 0.0);
  EXPECT_DOUBLE_EQ(polygon_iou(rect(0, 0, 1, 1), {{0, 0}, {1, 1}, {2, 2}}), 0.0);
}

TEST(Geometry, ConvexIouMatchesMonteCarlo) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Polygon a = random_convex(rng, 0, 0, 5, 8);
    const Polygon b = random_convex(rng, rng.uniform(-3, 3), rng.uniform(-3, 3), 5, 8);
    EXPECT_NEAR(polygon_iou(a, b), monte_carlo_iou(a, b, rng, 100000), 0.01);
  }
}

TEST(Geometry, NonConvexIouMatchesMonteCarlo) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Polygon a = random_star(rng, 0, 0, 1, 5, 9);
    const Polygon b = random_star(rng, rng.uniform(-2, 2), rng.uniform(-2, 2), 1, 5, 11);
    ASSERT_TRUE(is_simple(a));
    EXPECT_NEAR(polygon_iou(a, b), monte_carlo_iou(a, b, rng, 100000), 0.01);
  }
}

TEST(Geometry, IouSymmetricAndScaleInvariant) {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const Polygon a = random_star(rng, 0, 0, 1, 5, 7);
    const Polygon b = random_star(rng, 1, 0.5, 1, 5, 6);
    const double iou = polygon_iou(a, b);
    EXPECT_NEAR(iou, polygon_iou(b, a), 1e-12);
    const double s = rng.uniform(0.1, 20.0);
    EXPECT_NEAR(iou, polygon_iou(scale(a, s, s), scale(b, s, s)), 1e-9);
    EXPECT_NEAR(polygon_iou(a, a), 1.0, 1e-12);
  }
}

TEST(Geometry, TriangulationCoversPolygon) {
  Rng rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const Polygon p = random_star(rng, 0, 0, 0.5, 4, 14);
    double total = 0;
    for (const auto& t : triangulate(p)) total += polygon_area({p[t[0]], p[t[1]], p[t[2]]});
    EXPECT_NEAR(total, polygon_area(p), 1e-9);
  }
  // Collinear runs along the long sides, as in a 14-point rectangle trace.
  Polygon traced;
  for (int i = 0; i < 7; ++i) traced.push_back({i * 10.0, 0});
  for (int i = 6; i >= 0; --i) traced.push_back({i * 10.0, 5});
  double total = 0;
  for (const auto& t : triangulate(traced)) total += polygon_area({traced[t[0]], traced[t[1]], traced[t[2]]});
  EXPECT_NEAR(total, 300.0, 1e-9);
  EXPECT_NEAR(polygon_iou(traced, rect(0, 0, 60, 5)), 1.0, 1e-12);
}

TEST(Geometry, RasterMatchesPointInPolygonLoop) {
  Rng rng(25);
  const int64_t h = 37, w = 41;
  for (int trial = 0; trial < 40; ++trial) {
    Polygon p;
    if (trial % 2 == 0) {
      p = random_star(rng, rng.uniform(0, w), rng.uniform(0, h), 2, 20, 3 + trial % 12);
    } else {
      // Arbitrary, possibly self-intersecting rings, some with integer and half-integer vertices.
      for (int i = 0; i < 6; ++i) {
        double x = rng.uniform(-5, w + 5), y = rng.uniform(-5, h + 5);
        if (trial % 4 == 1) {
          x = std::round(x * 2) / 2;
          y = std::round(y * 2) / 2;
        }
        p.push_back({x, y});
      }
    }
    std::vector<uint8_t> mask;
    rasterize_polygon(p, h, w, mask);
    mask.resize(static_cast<size_t>(h * w), 0);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        ASSERT_EQ(mask[y * w + x], point_in_polygon(p, x + 0.5, y + 0.5) ? 1 : 0) << "trial " << trial;
  }
}

TEST(Geometry, RasterRectangleArea) {
  std::vector<uint8_t> mask;
  rasterize_polygon(rect(2, 3, 12, 8), 20, 20, mask);
  int count = 0;
  for (auto v : mask) count += v;
  EXPECT_EQ(count, 50);
}

TEST(Geometry, SimplicityCheck) {
  EXPECT_TRUE(is_simple(rect(0, 0, 1, 1)));
  EXPECT_FALSE(is_simple({{0, 0}, {1, 1}, {1, 0}, {0, 1}}));  // bow tie
  EXPECT_FALSE(is_simple({{0, 0}, {1, 0}, {2, 0}}));
}

TEST(Geometry, MinAreaRectRecoversRotatedRectangle) {
  const double c = std::cos(0.4), s = std::sin(0.4);
  Polygon pts;
  for (double u = 0; u <= 10; u += 0.5)
    for (double v = 0; v <= 4; v += 0.5) pts.push_back({u * c - v * s + 3, u * s + v * c + 7});
  const Polygon r = min_area_rect(pts);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_NEAR(polygon_area(r), 40.0, 1e-9);
}

TEST(Geometry, SimplifyRespectsBudget) {
  Rng rng(26);
  const Polygon p = random_star(rng, 0, 0, 3, 5, 60);
  const Polygon q = simplify_closed(p, 14);
  EXPECT_LE(q.size(), 14u);
  EXPECT_GE(q.size(), 3u);
  EXPECT_GT(polygon_iou(p, q), 0.7);
  EXPECT_EQ(simplify_closed(rect(0, 0, 1, 1), 14).size(), 4u);
}

}  // namespace
}  // namespace vltd
