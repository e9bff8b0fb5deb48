#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace vltd {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;

struct Box {
  double x0, y0, x1, y1;
};

// Shoelace area; positive for counter-clockwise order in a y-up frame, which
// is clockwise on screen.
double signed_area(const Polygon& p);
double polygon_area(const Polygon& p);
Box bounding_box(const Polygon& p);
// No two non-adjacent edges touch and no adjacent edges fold back.
bool is_simple(const Polygon& p);

// Even-odd crossing test. The same predicate drives rasterize_polygon, so the
// two agree bit for bit.
bool point_in_polygon(const Polygon& p, double x, double y);

// Marks pixels of an h x w grid whose centers (x + 0.5, y + 0.5) fall inside p.
// Row-major, one byte per pixel; existing values are or-ed, not cleared.
void rasterize_polygon(const Polygon& p, int64_t h, int64_t w, std::vector<uint8_t>& mask);

// Clips `subject` against a convex polygon (Sutherland-Hodgman).
Polygon clip_convex(const Polygon& subject, const Polygon& convex_clip);
// Triangles of a simple polygon by ear clipping; indices into p.
std::vector<std::array<int, 3>> triangulate(const Polygon& p);
double intersection_area(const Polygon& a, const Polygon& b);
// Intersection over union of two simple polygons; 0 if either is degenerate.
double polygon_iou(const Polygon& a, const Polygon& b);

Polygon convex_hull(Polygon pts);
// Minimum-area enclosing rectangle of a point set (rotating calipers).
Polygon min_area_rect(const Polygon& pts);
// Reduces a closed ring to at most max_vertices by repeatedly keeping the
// farthest point (Douglas-Peucker with a vertex budget).
Polygon simplify_closed(const Polygon& ring, int max_vertices);

Polygon translate(const Polygon& p, double dx, double dy);
Polygon scale(const Polygon& p, double sx, double sy);

}  // namespace vltd
