#include "vltd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vltd {
namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

int sign(double v, double eps) { return v > eps ? 1 : (v < -eps ? -1 : 0); }

bool on_segment(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_touch(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double scale = std::max({std::abs(a.x), std::abs(a.y), std::abs(b.x), std::abs(b.y), 1.0});
  const double eps = 1e-12 * scale * scale;
  const int d1 = sign(cross(c, d, a), eps), d2 = sign(cross(c, d, b), eps);
  const int d3 = sign(cross(a, b, c), eps), d4 = sign(cross(a, b, d), eps);
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

// x-coordinate where edge (a, b) crosses the horizontal line at y, or NaN when
// the half-open crossing rule says it does not.
double crossing_x(const Point& a, const Point& b, double y) {
  if ((a.y > y) == (b.y > y)) return std::numeric_limits<double>::quiet_NaN();
  return a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
}

Polygon oriented_ccw(const Polygon& p) {
  if (signed_area(p) >= 0) return p;
  return Polygon(p.rbegin(), p.rend());
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) return std::hypot(p.x - a.x, p.y - a.y);
  const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

}  // namespace

double signed_area(const Polygon& p) {
  double s = 0.0;
  const size_t n = p.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& a = p[i];
    const Point& b = p[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

double polygon_area(const Polygon& p) { return std::abs(signed_area(p)); }

Box bounding_box(const Polygon& p) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Point& q : p) {
    b.x0 = std::min(b.x0, q.x);
    b.y0 = std::min(b.y0, q.y);
    b.x1 = std::max(b.x1, q.x);
    b.y1 = std::max(b.y1, q.y);
  }
  return b;
}

bool is_simple(const Polygon& p) {
  const size_t n = p.size();
  if (n < 3) return false;
  if (polygon_area(p) <= 0.0) return false;
  for (size_t i = 0; i < n; ++i) {
    const Point& a = p[i];
    const Point& b = p[(i + 1) % n];
    if (a == b) return false;
    // Adjacent edge folding back onto this one.
    const Point& c = p[(i + 2) % n];
    if (n > 3 && cross(a, b, c) == 0.0 && ((c.x - b.x) * (a.x - b.x) + (c.y - b.y) * (a.y - b.y)) > 0.0) {
      return false;
    }
    for (size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      if (segments_touch(a, b, p[j], p[(j + 1) % n])) return false;
    }
  }
  return true;
}

bool point_in_polygon(const Polygon& p, double x, double y) {
  bool inside = false;
  const size_t n = p.size();
  for (size_t i = 0; i < n; ++i) {
    const double xc = crossing_x(p[i], p[(i + 1) % n], y);
    if (x < xc) inside = !inside;
  }
  return inside;
}

void rasterize_polygon(const Polygon& p, int64_t h, int64_t w, std::vector<uint8_t>& mask) {
  if (p.size() < 3) return;
  mask.resize(static_cast<size_t>(h * w), 0);
  const Box b = bounding_box(p);
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.y0 - 0.5)));
  const int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(b.y1)));
  std::vector<double> xs;
  const size_t n = p.size();
  for (int64_t y = y0; y <= y1; ++y) {
    const double cy = static_cast<double>(y) + 0.5;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const double xc = crossing_x(p[i], p[(i + 1) % n], cy);
      if (!std::isnan(xc)) xs.push_back(xc);
    }
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());
    // With crossings sorted, cx has an odd count of crossings above it exactly
    // when xs[k] <= cx < xs[k+1] for even k.
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      int64_t first = static_cast<int64_t>(std::ceil(xs[k] - 0.5));
      while (first > 0 && static_cast<double>(first - 1) + 0.5 >= xs[k]) --first;
      while (static_cast<double>(first) + 0.5 < xs[k]) ++first;
      for (int64_t x = std::max<int64_t>(first, 0); x < w; ++x) {
        const double cx = static_cast<double>(x) + 0.5;
        if (!(cx < xs[k + 1])) break;
        mask[static_cast<size_t>(y * w + x)] = 1;
      }
    }
  }
}

Polygon clip_convex(const Polygon& subject, const Polygon& convex_clip) {
  Polygon out = subject;
  const Polygon clip = oriented_ccw(convex_clip);
  const size_t m = clip.size();
  for (size_t e = 0; e < m && !out.empty(); ++e) {
    const Point& a = clip[e];
    const Point& b = clip[(e + 1) % m];
    Polygon in = std::move(out);
    out.clear();
    const size_t n = in.size();
    for (size_t i = 0; i < n; ++i) {
      const Point& p = in[i];
      const Point& q = in[(i + 1) % n];
      const double dp = cross(a, b, p);
      const double dq = cross(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp >= 0) != (dq >= 0)) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

std::vector<std::array<int, 3>> triangulate(const Polygon& poly) {
  std::vector<std::array<int, 3>> tris;
  const int n = static_cast<int>(poly.size());
  if (n < 3) return tris;
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  if (signed_area(poly) < 0) std::reverse(idx.begin(), idx.end());

  auto blocked = [&](int a, int b, int c) {
    const Point &pa = poly[static_cast<size_t>(a)], &pb = poly[static_cast<size_t>(b)],
                &pc = poly[static_cast<size_t>(c)];
    for (int k : idx) {
      if (k == a || k == b || k == c) continue;
      const Point& q = poly[static_cast<size_t>(k)];
      if (q == pa || q == pb || q == pc) continue;
      if (cross(pa, pb, q) >= 0 && cross(pb, pc, q) >= 0 && cross(pc, pa, q) >= 0) return true;
    }
    return false;
  };

  while (idx.size() > 3) {
    const size_t m = idx.size();
    bool clipped = false;
    for (size_t i = 0; i < m; ++i) {
      const int a = idx[(i + m - 1) % m], b = idx[i], c = idx[(i + 1) % m];
      const double turn = cross(poly[static_cast<size_t>(a)], poly[static_cast<size_t>(b)], poly[static_cast<size_t>(c)]);
      if (turn <= 0) continue;
      if (blocked(a, b, c)) continue;
      tris.push_back({a, b, c});
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(i));
      clipped = true;
      break;
    }
    if (clipped) continue;
    // No ear: drop a vertex with a degenerate (collinear) turn, else force one.
    size_t drop = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < m; ++i) {
      const double turn = std::abs(cross(poly[static_cast<size_t>(idx[(i + m - 1) % m])],
                                         poly[static_cast<size_t>(idx[i])],
                                         poly[static_cast<size_t>(idx[(i + 1) % m])]));
      if (turn < best) {
        best = turn;
        drop = i;
      }
    }
    if (best > 0) tris.push_back({idx[(drop + m - 1) % m], idx[drop], idx[(drop + 1) % m]});
    idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  if (cross(poly[static_cast<size_t>(idx[0])], poly[static_cast<size_t>(idx[1])], poly[static_cast<size_t>(idx[2])]) != 0) {
    tris.push_back({idx[0], idx[1], idx[2]});
  }
  return tris;
}

double intersection_area(const Polygon& a, const Polygon& b) {
  const Box ba = bounding_box(a), bb = bounding_box(b);
  if (ba.x1 <= bb.x0 || bb.x1 <= ba.x0 || ba.y1 <= bb.y0 || bb.y1 <= ba.y0) return 0.0;
  const auto ta = triangulate(a);
  const auto tb = triangulate(b);
  double total = 0.0;
  for (const auto& t : ta) {
    const Polygon tri_a{a[static_cast<size_t>(t[0])], a[static_cast<size_t>(t[1])], a[static_cast<size_t>(t[2])]};
    const Box bta = bounding_box(tri_a);
    for (const auto& u : tb) {
      const Polygon tri_b{b[static_cast<size_t>(u[0])], b[static_cast<size_t>(u[1])], b[static_cast<size_t>(u[2])]};
      const Box btb = bounding_box(tri_b);
      if (bta.x1 <= btb.x0 || btb.x1 <= bta.x0 || bta.y1 <= btb.y0 || btb.y1 <= bta.y0) continue;
      total += polygon_area(clip_convex(tri_a, tri_b));
    }
  }
  return total;
}

double polygon_iou(const Polygon& a, const Polygon& b) {
  const double area_a = polygon_area(a);
  const double area_b = polygon_area(b);
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = intersection_area(a, b);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Polygon convex_hull(Polygon pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  Polygon hull(2 * pts.size());
  size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Polygon min_area_rect(const Polygon& pts) {
  const Polygon hull = convex_hull(pts);
  if (hull.size() < 3) {
    const Box b = bounding_box(pts);
    return {{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}};
  }
  double best = std::numeric_limits<double>::infinity();
  Polygon rect;
  const size_t n = hull.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& a = hull[i];
    const Point& b = hull[(i + 1) % n];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len == 0) continue;
    const double ux = (b.x - a.x) / len, uy = (b.y - a.y) / len;
    double lo_u = 0, hi_u = 0, lo_v = 0, hi_v = 0;
    for (const Point& p : hull) {
      const double du = (p.x - a.x) * ux + (p.y - a.y) * uy;
      const double dv = -(p.x - a.x) * uy + (p.y - a.y) * ux;
      lo_u = std::min(lo_u, du);
      hi_u = std::max(hi_u, du);
      lo_v = std::min(lo_v, dv);
      hi_v = std::max(hi_v, dv);
    }
    const double area = (hi_u - lo_u) * (hi_v - lo_v);
    if (area < best - 1e-9) {
      best = area;
      auto at = [&](double u, double v) { return Point{a.x + u * ux - v * uy, a.y + u * uy + v * ux}; };
      rect = {at(lo_u, lo_v), at(hi_u, lo_v), at(hi_u, hi_v), at(lo_u, hi_v)};
    }
  }
  return rect;
}

Polygon simplify_closed(const Polygon& ring, int max_vertices) {
  const size_t n = ring.size();
  if (n <= static_cast<size_t>(max_vertices) || max_vertices < 3) return ring;
  // Anchors: a far pair of points split the ring into two chains.
  size_t a = 0;
  for (size_t i = 1; i < n; ++i)
    if (ring[i].x < ring[a].x || (ring[i].x == ring[a].x && ring[i].y < ring[a].y)) a = i;
  size_t b = a;
  double far = -1;
  for (size_t i = 0; i < n; ++i) {
    const double d = std::hypot(ring[i].x - ring[a].x, ring[i].y - ring[a].y);
    if (d > far) {
      far = d;
      b = i;
    }
  }
  std::vector<size_t> keep{std::min(a, b), std::max(a, b)};
  while (keep.size() < static_cast<size_t>(max_vertices)) {
    double best = 0.0;
    size_t best_idx = n, insert_at = 0;
    for (size_t s = 0; s < keep.size(); ++s) {
      const size_t from = keep[s];
      const size_t to = keep[(s + 1) % keep.size()];
      const size_t span = (to + n - from) % n;
      for (size_t k = 1; k < span; ++k) {
        const size_t i = (from + k) % n;
        const double d = segment_distance(ring[i], ring[from], ring[to]);
        if (d > best) {
          best = d;
          best_idx = i;
          insert_at = s + 1;
        }
      }
    }
    if (best_idx == n || best < 1e-9) break;
    keep.insert(keep.begin() + static_cast<std::ptrdiff_t>(insert_at), best_idx);
    // Keep indices in ring order starting from the smallest.
    std::sort(keep.begin(), keep.end());
  }
  Polygon out;
  out.reserve(keep.size());
  for (size_t i : keep) out.push_back(ring[i]);
  return out;
}

Polygon translate(const Polygon& p, double dx, double dy) {
  Polygon out = p;
  for (Point& q : out) {
    q.x += dx;
    q.y += dy;
  }
  return out;
}

Polygon scale(const Polygon& p, double sx, double sy) {
  Polygon out = p;
  for (Point& q : out) {
    q.x *= sx;
    q.y *= sy;
  }
  return out;
}

}  // namespace vltd
