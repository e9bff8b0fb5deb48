#include "vltd/data.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "vltd/ops.hpp"

namespace vltd {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

// Line endings only; trailing spaces can belong to a transcription.
std::string_view strip_eol(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

std::string_view strip_bom(std::string_view s) {
  if (s.size() >= 3 && s.substr(0, 3) == "\xEF\xBB\xBF") s.remove_prefix(3);
  return s;
}

double parse_number(std::string_view field, int line_no, int index) {
  const std::string_view f = trim(field);
  double v = 0.0;
  const auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || end != f.data() + f.size() || !std::isfinite(v))
    throw std::runtime_error(fmt::format("line {}: field {} is not a number: '{}'", line_no, index + 1, field));
  return v;
}

// Splits on commas at most max_splits times; the remainder stays in the last field.
std::vector<std::string_view> split_left(std::string_view s, size_t max_splits) {
  std::vector<std::string_view> out;
  while (out.size() < max_splits) {
    const size_t comma = s.find(',');
    if (comma == std::string_view::npos) break;
    out.push_back(s.substr(0, comma));
    s.remove_prefix(comma + 1);
  }
  out.push_back(s);
  return out;
}

std::string join_coords(const Polygon& p) {
  std::string out;
  for (size_t i = 0; i < p.size(); ++i) out += fmt::format("{}{},{}", i ? "," : "", p[i].x, p[i].y);
  return out;
}

constexpr const char* kIgnoreText = "###";
constexpr std::string_view kCtwTextMarker = "####";

}  // namespace

// ---------------------------------------------------------------- formats

TextInstance parse_mlt_annotation(std::string_view line, int line_no) {
  line = strip_eol(strip_bom(line));
  const auto fields = split_left(line, 9);
  if (fields.size() < 10)
    throw std::runtime_error(fmt::format("line {}: expected 8 coordinates, script and transcription, got {} fields",
                                         line_no, fields.size()));
  TextInstance inst;
  for (int i = 0; i < 4; ++i)
    inst.polygon.push_back({parse_number(fields[2 * i], line_no, 2 * i), parse_number(fields[2 * i + 1], line_no, 2 * i + 1)});
  inst.script = std::string(trim(fields[8]));
  inst.transcription = std::string(fields[9]);
  inst.ignore = inst.transcription == kIgnoreText;
  return inst;
}

std::string serialize_mlt(const TextInstance& inst) {
  if (inst.polygon.size() != 4)
    throw std::invalid_argument(fmt::format("MLT annotations need 4 vertices, got {}", inst.polygon.size()));
  return fmt::format("{},{},{}", join_coords(inst.polygon), inst.script, inst.ignore ? kIgnoreText : inst.transcription);
}

TextInstance parse_ctw1500_annotation(std::string_view record, CtwFlavor flavor, int line_no) {
  record = strip_eol(strip_bom(record));
  TextInstance inst;
  const size_t marker = record.find(kCtwTextMarker);
  std::string_view coords = record;
  if (marker != std::string_view::npos) {
    inst.transcription = std::string(record.substr(marker + kCtwTextMarker.size()));
    coords = trim(record.substr(0, marker));
    if (!coords.empty() && coords.back() == ',') coords.remove_suffix(1);
  }
  std::vector<double> v;
  for (std::string_view f : split_left(coords, std::string_view::npos)) v.push_back(parse_number(f, line_no, static_cast<int>(v.size())));
  const size_t expect = flavor == CtwFlavor::kAbsolute ? 28 : 32;
  if (v.size() != expect)
    throw std::runtime_error(fmt::format("line {}: expected {} coordinates, got {}", line_no, expect, v.size()));
  const size_t base = flavor == CtwFlavor::kAbsolute ? 0 : 4;
  const double ox = flavor == CtwFlavor::kAbsolute ? 0.0 : v[0];
  const double oy = flavor == CtwFlavor::kAbsolute ? 0.0 : v[1];
  for (size_t i = 0; i < 14; ++i) inst.polygon.push_back({ox + v[base + 2 * i], oy + v[base + 2 * i + 1]});
  inst.ignore = inst.transcription == kIgnoreText;
  return inst;
}

std::string serialize_ctw1500(const TextInstance& inst, CtwFlavor flavor) {
  if (inst.polygon.size() != 14)
    throw std::invalid_argument(fmt::format("CTW1500 annotations need 14 vertices, got {}", inst.polygon.size()));
  std::string out;
  if (flavor == CtwFlavor::kAbsolute) {
    out = join_coords(inst.polygon);
  } else {
    const Box b = bounding_box(inst.polygon);
    const double x0 = std::floor(b.x0), y0 = std::floor(b.y0);
    out = fmt::format("{},{},{},{}", x0, y0, std::ceil(b.x1), std::ceil(b.y1));
    for (const Point& p : inst.polygon) out += fmt::format(",{},{}", p.x - x0, p.y - y0);
  }
  const std::string text = inst.ignore ? kIgnoreText : inst.transcription;
  if (!text.empty()) out += fmt::format(",{}{}", kCtwTextMarker, text);
  return out;
}

std::vector<TextInstance> read_annotations(const std::string& path, AnnotationFormat format, CtwFlavor flavor) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open annotation file " + path);
  std::vector<TextInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(strip_bom(line)).empty()) continue;
    try {
      out.push_back(format == AnnotationFormat::kMlt ? parse_mlt_annotation(line, line_no)
                                                     : parse_ctw1500_annotation(line, flavor, line_no));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(path + ": " + e.what());
    }
  }
  return out;
}

void write_annotations(const std::string& path, const std::vector<TextInstance>& instances, AnnotationFormat format,
                       CtwFlavor flavor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write annotation file " + path);
  for (const TextInstance& inst : instances)
    out << (format == AnnotationFormat::kMlt ? serialize_mlt(inst) : serialize_ctw1500(inst, flavor)) << '\n';
}

// ---------------------------------------------------------------- masks

GroundTruthMask rasterize(const std::vector<TextInstance>& instances, int64_t height, int64_t width) {
  GroundTruthMask m;
  m.height = height;
  m.width = width;
  m.positive.assign(static_cast<size_t>(height * width), 0);
  m.ignore.assign(m.positive.size(), 0);
  for (const TextInstance& inst : instances) rasterize_polygon(inst.polygon, height, width, inst.ignore ? m.ignore : m.positive);
  for (size_t i = 0; i < m.ignore.size(); ++i)
    if (m.positive[i]) m.ignore[i] = 0;
  return m;
}

namespace {

Tensor resize_image(const Tensor& image, int64_t h, int64_t w) {
  NoGradGuard guard;
  return ops::resize_bilinear(image, h, w).detach();
}

}  // namespace

Sample resize_sample(const Sample& s, int64_t height, int64_t width) {
  Sample out;
  out.id = s.id;
  const double sx = static_cast<double>(width) / static_cast<double>(s.width());
  const double sy = static_cast<double>(height) / static_cast<double>(s.height());
  out.image = resize_image(s.image, height, width);
  out.instances = s.instances;
  for (TextInstance& inst : out.instances) inst.polygon = scale(inst.polygon, sx, sy);
  out.mask = rasterize(out.instances, height, width);
  return out;
}

// ---------------------------------------------------------------- synthesis

namespace {

struct Frame {
  Point origin;
  Point tangent;  // unit
  Point normal;   // unit, points towards the top edge
};

// A text region described by its centreline, so glyphs can follow it.
struct Region {
  Polygon polygon;
  double length = 0;
  double thickness = 0;
  std::function<Frame(double)> frame;  // arc parameter in [0, length]
};

Point add(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point mul(Point a, double s) { return {a.x * s, a.y * s}; }

Region make_quad(Rng& rng, const SynthSpec& spec) {
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  Region r;
  r.length = rng.uniform(0.25, 0.6) * w;
  r.thickness = rng.uniform(0.08, 0.16) * h;
  const double angle = rng.uniform(-20.0, 20.0) * std::numbers::pi / 180.0;
  const Point c{rng.uniform(0.0, w), rng.uniform(0.0, h)};
  const Point t{std::cos(angle), std::sin(angle)};
  const Point n{t.y, -t.x};
  const Point start = add(c, mul(t, -r.length / 2));
  const Point half_n = mul(n, r.thickness / 2);
  const Point end = add(start, mul(t, r.length));
  r.polygon = {add(start, half_n), add(end, half_n), add(end, mul(half_n, -1)), add(start, mul(half_n, -1))};
  r.frame = [start, t, n](double s) { return Frame{add(start, mul(t, s)), t, n}; };
  return r;
}

Region make_band(Rng& rng, const SynthSpec& spec) {
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  Region r;
  const double span = rng.uniform(0.4, 0.7) * w;
  r.thickness = rng.uniform(0.08, 0.14) * h;
  const double amp = rng.uniform(0.03, 0.1) * h;
  const double k = 2.0 * std::numbers::pi / (span * rng.uniform(0.8, 1.6));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Point o{rng.uniform(0.0, w), rng.uniform(0.0, h)};
  // Centreline y(x) = o.y + amp sin(k x + phase) over x in [o.x, o.x + span];
  // frames are parameterised by x offset, which is close enough to arc length
  // for glyph placement.
  auto frame = [o, amp, k, phase](double s) {
    const double slope = amp * k * std::cos(k * s + phase);
    const double norm = std::sqrt(1.0 + slope * slope);
    const Point t{1.0 / norm, slope / norm};
    return Frame{{o.x + s, o.y + amp * std::sin(k * s + phase)}, t, {t.y, -t.x}};
  };
  r.length = span;
  r.frame = frame;
  Polygon top, bottom;
  for (int i = 0; i < 7; ++i) {
    const Frame f = frame(span * i / 6.0);
    top.push_back(add(f.origin, mul(f.normal, r.thickness / 2)));
    bottom.push_back(add(f.origin, mul(f.normal, -r.thickness / 2)));
  }
  r.polygon = top;
  r.polygon.insert(r.polygon.end(), bottom.rbegin(), bottom.rend());
  return r;
}

bool boxes_apart(const Box& a, const Box& b, double gap) {
  return a.x1 + gap <= b.x0 || b.x1 + gap <= a.x0 || a.y1 + gap <= b.y0 || b.y1 + gap <= a.y0;
}

std::optional<std::vector<Region>> try_layout(Rng& rng, const SynthSpec& spec) {
  const int n = static_cast<int>(rng.uniform_int(spec.min_instances, spec.max_instances));
  std::vector<Region> regions;
  const double margin = 2.0, gap = 4.0;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int tries = 0; tries < 20 && !placed; ++tries) {
      Region r = spec.family == ShapeFamily::kQuad ? make_quad(rng, spec) : make_band(rng, spec);
      const Box b = bounding_box(r.polygon);
      if (b.x0 < margin || b.y0 < margin || b.x1 > static_cast<double>(spec.width) - margin ||
          b.y1 > static_cast<double>(spec.height) - margin)
        continue;
      if (!is_simple(r.polygon)) continue;
      if (!std::all_of(regions.begin(), regions.end(),
                       [&](const Region& o) { return boxes_apart(b, bounding_box(o.polygon), gap); }))
        continue;
      regions.push_back(std::move(r));
      placed = true;
    }
    if (!placed) return std::nullopt;
  }
  return regions;
}

struct Segment {
  Point a, b;
};

double segment_distance(Point p, const Segment& s) {
  const double vx = s.b.x - s.a.x, vy = s.b.y - s.a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - s.a.x) * vx + (p.y - s.a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (s.a.x + t * vx), dy = p.y - (s.a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Glyph templates in local (along, across) units; along in [0, 1], across in [-0.5, 0.5].
const std::vector<std::vector<std::array<double, 4>>>& glyph_templates() {
  static const std::vector<std::vector<std::array<double, 4>>> t{
      {{0.5, -0.35, 0.5, 0.35}},
      {{0.15, -0.35, 0.15, 0.35}, {0.85, -0.35, 0.85, 0.35}, {0.15, 0.0, 0.85, 0.0}},
      {{0.1, -0.35, 0.9, 0.35}},
      {{0.15, -0.35, 0.85, -0.35}, {0.85, -0.35, 0.85, 0.35}, {0.85, 0.35, 0.15, 0.35}, {0.15, 0.35, 0.15, -0.35}},
      {{0.2, 0.35, 0.2, -0.35}, {0.2, -0.35, 0.85, -0.35}},
      {{0.1, -0.35, 0.5, 0.35}, {0.5, 0.35, 0.9, -0.35}},
      {{0.2, 0.35, 0.8, 0.35}, {0.5, 0.35, 0.5, -0.35}},
  };
  return t;
}

std::vector<Segment> glyph_strokes(Rng& rng, const Region& r, std::string& transcription) {
  std::vector<Segment> segs;
  const double gw = 0.55 * r.thickness, pitch = 0.75 * r.thickness;
  const auto& templates = glyph_templates();
  double s = 0.15 * r.thickness;
  while (s + gw <= r.length - 0.1 * r.thickness) {
    if (rng.bernoulli(0.12) && !transcription.empty() && transcription.back() != ' ') {
      transcription += ' ';
      s += pitch;
      continue;
    }
    const size_t g = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(templates.size()) - 1));
    transcription += static_cast<char>('a' + g);
    for (const auto& st : templates[g]) {
      auto map = [&](double along, double across) {
        const Frame f = r.frame(s + along * gw);
        return add(f.origin, mul(f.normal, -across * r.thickness));
      };
      segs.push_back({map(st[0], st[1]), map(st[2], st[3])});
    }
    s += pitch;
  }
  while (!transcription.empty() && transcription.back() == ' ') transcription.pop_back();
  if (transcription.empty()) transcription = "a";
  return segs;
}

}  // namespace

Sample synthesize_sample(uint64_t seed, const SynthSpec& spec) {
  if (spec.height < 32 || spec.width < 32) throw std::invalid_argument("synthetic images must be at least 32x32");
  if (spec.min_instances < 1 || spec.max_instances < spec.min_instances)
    throw std::invalid_argument("synthetic instance range must satisfy 1 <= min <= max");
  if (!(spec.min_density >= 0.0 && spec.min_density < spec.max_density && spec.max_density <= 1.0))
    throw std::invalid_argument("synthetic density bounds must satisfy 0 <= min < max <= 1");
  Rng rng(seed);
  const int64_t h = spec.height, w = spec.width;
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    auto layout = try_layout(rng, spec);
    if (!layout) continue;
    Sample s;
    s.id = fmt::format("synth_{:016x}", seed);
    for (const Region& r : *layout) {
      TextInstance inst;
      inst.polygon = r.polygon;
      inst.script = "Latin";
      inst.ignore = rng.bernoulli(spec.ignore_probability);
      s.instances.push_back(std::move(inst));
    }
    s.mask = rasterize(s.instances, h, w);
    const double density = static_cast<double>(std::count(s.mask.positive.begin(), s.mask.positive.end(), 1)) /
                           static_cast<double>(h * w);
    if (density < spec.min_density || density > spec.max_density) continue;

    // Background: a base colour with low-frequency ripples and fine noise.
    const bool dark_text = rng.bernoulli(0.5);
    std::array<double, 3> base, ink;
    for (int c = 0; c < 3; ++c) {
      base[c] = dark_text ? rng.uniform(0.65, 0.9) : rng.uniform(0.1, 0.35);
      ink[c] = dark_text ? rng.uniform(0.0, 0.2) : rng.uniform(0.8, 1.0);
    }
    struct Ripple {
      double fx, fy, phase, amp;
    };
    std::vector<Ripple> ripples;
    for (int i = 0; i < 3; ++i)
      ripples.push_back({rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(0, 6.3), rng.uniform(0.02, 0.06)});
    std::vector<double> img(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        double ripple = 0.0;
        for (const Ripple& rp : ripples) ripple += rp.amp * std::sin(rp.fx * static_cast<double>(x) + rp.fy * static_cast<double>(y) + rp.phase);
        const double noise = rng.uniform(-0.03, 0.03);
        for (int c = 0; c < 3; ++c) img[static_cast<size_t>((c * h + y) * w + x)] = base[c] + ripple + noise;
      }
    }
    // Glyph strokes, clipped to their region.
    for (size_t i = 0; i < layout->size(); ++i) {
      const Region& r = (*layout)[i];
      std::string text;
      const auto segs = glyph_strokes(rng, r, text);
      if (!s.instances[i].ignore) s.instances[i].transcription = text;
      else s.instances[i].transcription = "###";
      const double half_stroke = std::max(0.75, 0.07 * r.thickness);
      const Box b = bounding_box(r.polygon);
      for (int64_t y = std::max<int64_t>(0, static_cast<int64_t>(b.y0)); y < std::min<int64_t>(h, static_cast<int64_t>(b.y1) + 1); ++y) {
        for (int64_t x = std::max<int64_t>(0, static_cast<int64_t>(b.x0)); x < std::min<int64_t>(w, static_cast<int64_t>(b.x1) + 1); ++x) {
          const Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
          if (!point_in_polygon(r.polygon, p.x, p.y)) continue;
          bool hit = false;
          for (const Segment& sg : segs) {
            if (segment_distance(p, sg) <= half_stroke) {
              hit = true;
              break;
            }
          }
          if (!hit) continue;
          for (int c = 0; c < 3; ++c) img[static_cast<size_t>((c * h + y) * w + x)] = ink[c];
        }
      }
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);
    s.image = Tensor::from({3, h, w}, std::move(img));
    return s;
  }
  throw std::runtime_error(fmt::format("synthesize_sample: could not place {}..{} non-overlapping regions within "
                                       "density [{}, {}] after {} attempts",
                                       spec.min_instances, spec.max_instances, spec.min_density, spec.max_density,
                                       spec.max_attempts));
}

// ---------------------------------------------------------------- augmentation

Point AugmentTrace::apply(Point p) const {
  double x = p.x - crop.x0, y = p.y - crop.y0;
  if (flipped) x = (crop.x1 - crop.x0) - x;
  return {x * scale_x, y * scale_y};
}

namespace {

Polygon rect_polygon(const Box& b) { return {{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}}; }

bool box_inside(const Box& inner, const Box& outer) {
  return inner.x0 >= outer.x0 && inner.y0 >= outer.y0 && inner.x1 <= outer.x1 && inner.y1 <= outer.y1;
}

struct CropResult {
  std::vector<TextInstance> instances;
  bool has_positive = false;
};

CropResult crop_instances(const std::vector<TextInstance>& in, const Box& crop, double keep_fraction) {
  CropResult r;
  const Polygon frame = rect_polygon(crop);
  for (const TextInstance& inst : in) {
    if (box_inside(bounding_box(inst.polygon), crop)) {
      r.instances.push_back(inst);
      r.has_positive = r.has_positive || !inst.ignore;
      continue;
    }
    const double area = polygon_area(inst.polygon);
    const Polygon clipped = clip_convex(inst.polygon, frame);
    if (clipped.size() < 3) continue;
    const double kept = polygon_area(clipped);
    if (kept <= 0.0) continue;
    TextInstance c = inst;
    c.polygon = clipped;
    if (area <= 0.0 || kept / area < keep_fraction) {
      c.ignore = true;
      c.transcription = kIgnoreText;
    }
    r.has_positive = r.has_positive || !c.ignore;
    r.instances.push_back(std::move(c));
  }
  return r;
}

}  // namespace

Sample augment(const Sample& s, uint64_t seed, const AugmentConfig& cfg, AugmentTrace* trace_out) {
  Rng rng(seed);
  const int64_t h = s.height(), w = s.width();
  AugmentTrace trace;
  trace.crop = {0, 0, static_cast<double>(w), static_cast<double>(h)};
  std::vector<TextInstance> instances = s.instances;
  if (rng.bernoulli(cfg.crop_probability)) {
    for (int attempt = 0; attempt < cfg.crop_attempts; ++attempt) {
      const int64_t cw = std::max<int64_t>(1, std::llround(static_cast<double>(w) * rng.uniform(cfg.min_crop_scale, 1.0)));
      const int64_t ch = std::max<int64_t>(1, std::llround(static_cast<double>(h) * rng.uniform(cfg.min_crop_scale, 1.0)));
      const int64_t x0 = rng.uniform_int(0, w - cw), y0 = rng.uniform_int(0, h - ch);
      const Box crop{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + cw), static_cast<double>(y0 + ch)};
      CropResult r = crop_instances(s.instances, crop, cfg.keep_fraction);
      if (!r.has_positive) continue;
      trace.crop = crop;
      instances = std::move(r.instances);
      break;
    }
  }
  trace.flipped = rng.bernoulli(cfg.flip_probability);
  const int64_t cx0 = static_cast<int64_t>(trace.crop.x0), cy0 = static_cast<int64_t>(trace.crop.y0);
  const int64_t cw = static_cast<int64_t>(trace.crop.x1) - cx0, ch = static_cast<int64_t>(trace.crop.y1) - cy0;
  trace.scale_x = static_cast<double>(cfg.out_size) / static_cast<double>(cw);
  trace.scale_y = static_cast<double>(cfg.out_size) / static_cast<double>(ch);

  const auto& src = s.image.values();
  std::vector<double> cropped(static_cast<size_t>(3 * ch * cw));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x) {
        const int64_t sx = trace.flipped ? cx0 + cw - 1 - x : cx0 + x;
        cropped[static_cast<size_t>((c * ch + y) * cw + x)] = src[static_cast<size_t>((c * h + cy0 + y) * w + sx)];
      }
  Sample out;
  out.id = s.id;
  out.image = resize_image(Tensor::from({3, ch, cw}, std::move(cropped)), cfg.out_size, cfg.out_size);
  for (TextInstance& inst : instances) {
    for (Point& p : inst.polygon) p = trace.apply(p);
    if (trace.flipped) std::reverse(inst.polygon.begin(), inst.polygon.end());
  }
  out.instances = std::move(instances);
  out.mask = rasterize(out.instances, cfg.out_size, cfg.out_size);
  if (trace_out) *trace_out = trace;
  return out;
}

// ---------------------------------------------------------------- png

Tensor read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw std::runtime_error(fmt::format("cannot read PNG {}: {}", path, img.message));
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error(fmt::format("cannot decode PNG {}: {}", path, img.message));
  }
  const int64_t h = img.height, w = img.width;
  std::vector<double> v(static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        v[static_cast<size_t>((c * h + y) * w + x)] = buf[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
  return Tensor::from({3, h, w}, std::move(v));
}

void write_png(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_png expects [3, H, W]");
  const int64_t h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> buf(static_cast<size_t>(3 * h * w));
  const auto& v = image.values();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        buf[static_cast<size_t>((y * w + x) * 3 + c)] = static_cast<png_byte>(
            std::lround(std::clamp(v[static_cast<size_t>((c * h + y) * w + x)], 0.0, 1.0) * 255.0));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error(fmt::format("cannot write PNG {}: {}", path, img.message));
}

// ---------------------------------------------------------------- manifests

std::string format_name(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::kMlt2019: return "mlt2019";
    case DatasetFormat::kCtw1500: return "ctw1500";
    case DatasetFormat::kSynthetic: return "synthetic";
  }
  return "?";
}

DatasetFormat parse_format_name(const std::string& name) {
  if (name == "mlt2019") return DatasetFormat::kMlt2019;
  if (name == "ctw1500") return DatasetFormat::kCtw1500;
  if (name == "synthetic") return DatasetFormat::kSynthetic;
  throw std::invalid_argument("unknown dataset format '" + name + "' (expected mlt2019, ctw1500 or synthetic)");
}

std::string DatasetManifest::image_path(const std::string& id) const { return (fs::path(root) / "images" / (id + ".png")).string(); }

std::string DatasetManifest::annotation_path(const std::string& id) const {
  return (fs::path(root) / "gt" / (id + ".txt")).string();
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  DatasetManifest m;
  const std::string root = j.value("root", "");
  const fs::path dir = fs::absolute(fs::path(path)).parent_path();
  if (root.empty()) {
    m.root = dir.string();
  } else if (fs::path(root).is_absolute()) {
    m.root = root;
  } else if (const char* env = std::getenv("VLTD_DATA_ROOT"); env && *env) {
    m.root = (fs::path(env) / root).string();
  } else {
    m.root = (dir / root).string();
  }
  m.format = parse_format_name(j.value("format", "synthetic"));
  const std::string ann = j.value("annotation_format", m.format == DatasetFormat::kCtw1500 ? "ctw1500" : "mlt");
  if (ann != "mlt" && ann != "ctw1500") throw std::runtime_error(path + ": annotation_format must be mlt or ctw1500");
  m.annotation_format = ann == "ctw1500" ? AnnotationFormat::kCtw1500 : AnnotationFormat::kMlt;
  m.split = j.value("split", "train");
  const std::string flavor = j.value("ctw_flavor", "absolute");
  if (flavor != "absolute" && flavor != "legacy") throw std::runtime_error(path + ": ctw_flavor must be absolute or legacy");
  m.ctw_flavor = flavor == "legacy" ? CtwFlavor::kLegacy : CtwFlavor::kAbsolute;
  m.ids = j.at("ids").get<std::vector<std::string>>();
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  nlohmann::json j;
  j["root"] = m.root;
  j["format"] = format_name(m.format);
  j["split"] = m.split;
  j["annotation_format"] = m.annotation_format == AnnotationFormat::kCtw1500 ? "ctw1500" : "mlt";
  j["ctw_flavor"] = m.ctw_flavor == CtwFlavor::kLegacy ? "legacy" : "absolute";
  j["ids"] = m.ids;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << j.dump(2) << '\n';
}

void check_manifest(const DatasetManifest& m) {
  std::vector<std::string> missing;
  for (const std::string& id : m.ids)
    for (const std::string& p : {m.image_path(id), m.annotation_path(id)})
      if (!fs::exists(p)) missing.push_back(p);
  if (!missing.empty()) {
    std::string msg = fmt::format("{} referenced files are missing:", missing.size());
    for (size_t i = 0; i < std::min<size_t>(missing.size(), 10); ++i) msg += "\n  " + missing[i];
    throw std::runtime_error(msg);
  }
}

Sample load_sample(const DatasetManifest& m, const std::string& id) {
  Sample s;
  s.id = id;
  s.image = read_png(m.image_path(id));
  s.instances = read_annotations(m.annotation_path(id), m.annotation_format, m.ctw_flavor);
  s.mask = rasterize(s.instances, s.height(), s.width());
  return s;
}

DatasetManifest write_synthetic_dataset(const std::string& dir, int count, uint64_t seed, const SynthSpec& spec,
                                        const std::string& split) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "gt");
  DatasetManifest m;
  m.root = fs::absolute(dir).string();
  m.format = DatasetFormat::kSynthetic;
  m.split = split;
  m.annotation_format = spec.family == ShapeFamily::kQuad ? AnnotationFormat::kMlt : AnnotationFormat::kCtw1500;
  Rng seeds(seed);
  for (int i = 0; i < count; ++i) {
    const Sample s = synthesize_sample(seeds.fork(), spec);
    const std::string id = fmt::format("{}_{:04d}", split, i);
    write_png(m.image_path(id), s.image);
    write_annotations(m.annotation_path(id), s.instances, m.annotation_format);
    m.ids.push_back(id);
  }
  DatasetManifest on_disk = m;
  on_disk.root = "";
  write_manifest((fs::path(dir) / "manifest.json").string(), on_disk);
  return m;
}

}  // namespace vltd
