#include "vltd/postprocess.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vltd {

std::vector<uint8_t> binarize(std::span<const double> map, double threshold) {
  std::vector<uint8_t> out(map.size());
  for (size_t i = 0; i < map.size(); ++i) out[i] = map[i] >= threshold ? 1 : 0;
  return out;
}

Components connected_components(std::span<const uint8_t> mask, int64_t height, int64_t width) {
  if (static_cast<int64_t>(mask.size()) != height * width) throw std::invalid_argument("mask size does not match grid");
  Components c;
  c.labels.assign(mask.size(), 0);
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < height * width; ++start) {
    if (!mask[static_cast<size_t>(start)] || c.labels[static_cast<size_t>(start)]) continue;
    const int32_t label = c.count() + 1;
    int64_t area = 0;
    stack.push_back(start);
    c.labels[static_cast<size_t>(start)] = label;
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      ++area;
      const int64_t py = p / width, px = p % width;
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t y = py + dy, x = px + dx;
          if (y < 0 || y >= height || x < 0 || x >= width) continue;
          const size_t q = static_cast<size_t>(y * width + x);
          if (mask[q] && !c.labels[q]) {
            c.labels[q] = label;
            stack.push_back(static_cast<int64_t>(q));
          }
        }
      }
    }
    c.areas.push_back(area);
  }
  return c;
}

Polygon trace_contour(const Components& comps, int32_t label, int64_t height, int64_t width) {
  auto inside = [&](int64_t x, int64_t y) {
    return x >= 0 && y >= 0 && x < width && y < height && comps.labels[static_cast<size_t>(y * width + x)] == label;
  };
  const auto first = std::find(comps.labels.begin(), comps.labels.end(), label);
  if (first == comps.labels.end()) return {};
  const int64_t idx = first - comps.labels.begin();
  const int64_t sx = idx % width, sy = idx / width;
  // Walk corner to corner with the component on the right (y points down).
  static constexpr int kDx[4] = {1, 0, -1, 0};  // E, S, W, N
  static constexpr int kDy[4] = {0, 1, 0, -1};
  int64_t x = sx, y = sy;
  int dir = 0;
  Polygon ring{{static_cast<double>(sx), static_cast<double>(sy)}};
  const int64_t limit = 4 * (height + 1) * (width + 1) + 8;
  for (int64_t step = 0; step < limit; ++step) {
    x += kDx[dir];
    y += kDy[dir];
    const int right = (dir + 1) % 4, left = (dir + 3) % 4;
    // Pixel whose centre is at corner + (d + perp) / 2.
    auto pixel_in = [&](int perp) {
      const double cx = static_cast<double>(x) + 0.5 * (kDx[dir] + kDx[perp]);
      const double cy = static_cast<double>(y) + 0.5 * (kDy[dir] + kDy[perp]);
      return inside(static_cast<int64_t>(std::floor(cx)), static_cast<int64_t>(std::floor(cy)));
    };
    int next;
    if (pixel_in(left)) {
      next = left;
    } else if (pixel_in(right)) {
      next = dir;
    } else {
      next = right;
    }
    if (x == sx && y == sy && next == 0) return ring;
    if (next != dir) ring.push_back({static_cast<double>(x), static_cast<double>(y)});
    dir = next;
  }
  throw std::logic_error("trace_contour did not close");
}

namespace {

Polygon clamp_to_image(Polygon p, int64_t height, int64_t width) {
  for (Point& v : p) {
    v.x = std::clamp(v.x, 0.0, static_cast<double>(width));
    v.y = std::clamp(v.y, 0.0, static_cast<double>(height));
  }
  return p;
}

Polygon quad_for(const Polygon& contour, int64_t height, int64_t width) {
  const Polygon rect = min_area_rect(contour);
  Polygon q = clamp_to_image(rect, height, width);
  if (q.size() == 4 && is_simple(q) && polygon_area(q) > 0) return q;
  const Polygon frame{{0, 0}, {static_cast<double>(width), 0},
                      {static_cast<double>(width), static_cast<double>(height)}, {0, static_cast<double>(height)}};
  return clip_convex(rect, frame);
}

Polygon polygon_for(const Polygon& contour, int max_vertices) {
  Polygon p = simplify_closed(contour, max_vertices);
  if (p.size() >= 3 && is_simple(p) && polygon_area(p) > 0) return p;
  Polygon hull = convex_hull(contour);
  if (static_cast<int>(hull.size()) > max_vertices) hull = simplify_closed(hull, max_vertices);
  return hull;
}

}  // namespace

std::vector<Detection> extract_instances(std::span<const uint8_t> mask, int64_t height, int64_t width,
                                         std::span<const double> score_map, const PostprocessConfig& cfg) {
  if (static_cast<int64_t>(score_map.size()) != height * width)
    throw std::invalid_argument("score map size does not match mask");
  const Components comps = connected_components(mask, height, width);
  std::vector<double> score_sum(static_cast<size_t>(comps.count()), 0.0);
  for (size_t i = 0; i < comps.labels.size(); ++i)
    if (comps.labels[i]) score_sum[static_cast<size_t>(comps.labels[i] - 1)] += score_map[i];
  std::vector<Detection> dets;
  for (int32_t k = 0; k < comps.count(); ++k) {
    const int64_t area = comps.areas[static_cast<size_t>(k)];
    if (area < cfg.min_area) continue;
    const Polygon contour = trace_contour(comps, k + 1, height, width);
    Detection d;
    d.polygon = cfg.mode == PolygonMode::kQuad ? quad_for(contour, height, width) : polygon_for(contour, cfg.max_vertices);
    if (d.polygon.size() < 3) continue;
    d.score = std::clamp(score_sum[static_cast<size_t>(k)] / static_cast<double>(area), 0.0, 1.0);
    dets.push_back(std::move(d));
  }
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    const Box ba = bounding_box(a.polygon), bb = bounding_box(b.polygon);
    return ba.y0 != bb.y0 ? ba.y0 < bb.y0 : ba.x0 < bb.x0;
  });
  return dets;
}

std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  for (const Detection& d : dets) {
    for (const Point& p : d.polygon) out += fmt::format("{},{},", p.x, p.y);
    out += fmt::format("{}\n", d.score);
  }
  return out;
}

std::vector<Detection> parse_detections(std::istream& in, const std::string& source) {
  std::vector<Detection> dets;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> values;
    size_t pos = 0;
    while (pos <= line.size()) {
      const size_t comma = std::min(line.find(',', pos), line.size());
      const std::string field = line.substr(pos, comma - pos);
      double v = 0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || end != field.data() + field.size() || field.empty())
        throw std::runtime_error(fmt::format("{}:{}: bad number '{}'", source, line_no, field));
      values.push_back(v);
      pos = comma + 1;
    }
    if (values.size() < 7 || values.size() % 2 == 0)
      throw std::runtime_error(fmt::format("{}:{}: expected 2n coordinates (n >= 3) and a score, got {} fields",
                                           source, line_no, values.size()));
    Detection d;
    for (size_t i = 0; i + 1 < values.size(); i += 2) d.polygon.push_back({values[i], values[i + 1]});
    d.score = values.back();
    dets.push_back(std::move(d));
  }
  return dets;
}

std::vector<Detection> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detection file " + path);
  return parse_detections(in, path);
}

void write_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write detection file " + path);
  out << format_detections(dets);
}

}  // namespace vltd
