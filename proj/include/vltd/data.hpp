#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vltd/instances.hpp"
#include "vltd/nn.hpp"

namespace vltd {

// ---- annotation formats

// "x1,y1,x2,y2,x3,y3,x4,y4,script,transcription"; the transcription keeps any
// commas. line_no only feeds error messages.
TextInstance parse_mlt_annotation(std::string_view line, int line_no = 1);
std::string serialize_mlt(const TextInstance& inst);

enum class CtwFlavor {
  kAbsolute,  // x1,y1,...,x14,y14[,####transcription]
  kLegacy,    // xmin,ymin,xmax,ymax, then 28 offsets from (xmin, ymin)[,####transcription]
};

TextInstance parse_ctw1500_annotation(std::string_view record, CtwFlavor flavor = CtwFlavor::kAbsolute,
                                      int line_no = 1);
std::string serialize_ctw1500(const TextInstance& inst, CtwFlavor flavor = CtwFlavor::kAbsolute);

enum class AnnotationFormat { kMlt, kCtw1500 };

// Parses a whole file; blank lines are skipped, a UTF-8 BOM is tolerated.
std::vector<TextInstance> read_annotations(const std::string& path, AnnotationFormat format,
                                           CtwFlavor flavor = CtwFlavor::kAbsolute);
void write_annotations(const std::string& path, const std::vector<TextInstance>& instances, AnnotationFormat format,
                       CtwFlavor flavor = CtwFlavor::kAbsolute);

// ---- masks and samples

// Positive where a non-ignored polygon covers the pixel centre (even-odd rule),
// ignore where only ignored polygons do.
GroundTruthMask rasterize(const std::vector<TextInstance>& instances, int64_t height, int64_t width);

struct Sample {
  std::string id;
  Tensor image;  // [3, H, W] in [0, 1]
  std::vector<TextInstance> instances;
  GroundTruthMask mask;

  int64_t height() const { return image.dim(1); }
  int64_t width() const { return image.dim(2); }
};

// Bilinear image resize with polygons scaled to match; the mask is re-rasterized.
Sample resize_sample(const Sample& s, int64_t height, int64_t width);

// ---- synthetic data

enum class ShapeFamily { kQuad, kCurvedBand };

struct SynthSpec {
  int64_t height = 128;
  int64_t width = 128;
  int min_instances = 1;
  int max_instances = 3;
  ShapeFamily family = ShapeFamily::kQuad;
  // Accepted range of the positive pixel fraction of a generated sample.
  double min_density = 0.01;
  double max_density = 0.35;
  double ignore_probability = 0.0;  // chance an instance is labelled "###"
  int max_attempts = 100;
};

// Deterministic in (seed, spec). Throws std::runtime_error when the layout
// cannot be placed within spec.max_attempts.
Sample synthesize_sample(uint64_t seed, const SynthSpec& spec);

// ---- augmentation

struct AugmentConfig {
  int64_t out_size = 512;
  double crop_probability = 1.0;
  double min_crop_scale = 0.6;  // crop side as a fraction of the image side
  double keep_fraction = 0.3;   // instance kept if this share of its area survives
  double flip_probability = 0.5;
  int crop_attempts = 10;
};

// Maps source pixel coordinates to output coordinates.
struct AugmentTrace {
  Box crop{0, 0, 0, 0};
  bool flipped = false;
  double scale_x = 1.0;
  double scale_y = 1.0;

  Point apply(Point p) const;
};

// Random crop (keeping at least one non-ignored instance), horizontal flip and
// resize to out_size x out_size. Instances cut below keep_fraction become
// ignored regions.
Sample augment(const Sample& s, uint64_t seed, const AugmentConfig& cfg = {}, AugmentTrace* trace = nullptr);

// ---- image files (8-bit RGB PNG)

Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& image);

// ---- dataset manifests

enum class DatasetFormat { kMlt2019, kCtw1500, kSynthetic };

struct DatasetManifest {
  std::string root;  // relative roots resolve against VLTD_DATA_ROOT, then the manifest directory
  DatasetFormat format = DatasetFormat::kSynthetic;
  std::string split = "train";
  // Ground-truth line format; mlt2019 and quad synthetic sets use MLT lines,
  // ctw1500 and curved synthetic sets use CTW1500 records.
  AnnotationFormat annotation_format = AnnotationFormat::kMlt;
  CtwFlavor ctw_flavor = CtwFlavor::kAbsolute;
  std::vector<std::string> ids;

  std::string image_path(const std::string& id) const;
  std::string annotation_path(const std::string& id) const;
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& m);
// Every referenced file must exist; throws listing the missing ones.
void check_manifest(const DatasetManifest& m);
Sample load_sample(const DatasetManifest& m, const std::string& id);

std::string format_name(DatasetFormat f);
DatasetFormat parse_format_name(const std::string& name);

// Writes count synthetic samples (PNG + MLT or, for curved bands, CTW1500 ground truth) under dir and
// a manifest.json; returns the manifest.
DatasetManifest write_synthetic_dataset(const std::string& dir, int count, uint64_t seed, const SynthSpec& spec,
                                        const std::string& split = "train");

}  // namespace vltd
