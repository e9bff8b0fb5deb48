#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>

#include "vltd/model.hpp"
#include "vltd/postprocess.hpp"

namespace vltd {

// Every knob of a training run. Serialized as one flat JSON object into each
// checkpoint and report.
struct TrainConfig {
  std::string preset = "desk";

  // optimisation
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 10;  // epochs
  int epochs = 20;
  int max_steps = 0;  // optimizer steps; 0 means no cap
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string precision = "fp64";

  // data
  int image_size = 512;
  bool augment = true;
  double crop_probability = 1.0;
  double min_crop_scale = 0.6;
  double flip_probability = 0.5;
  std::string prompt_id = "P1";
  uint64_t seed = 7;

  // model
  std::array<int, 4> image_channels{32, 64, 128, 256};
  int blocks_per_stage = 1;
  int fused_channels = 128;
  bool per_pixel_fusion = false;
  int decoder_layers = 3;
  int heads = 8;
  int model_dim = 128;
  int ff_dim = 1024;
  std::string activation = "gelu";
  bool positional_encoding = true;
  int embed_dim = 64;  // D
  bool text_enabled = true;
  int text_width = 64;
  int text_layers = 2;
  int text_heads = 4;
  uint64_t text_seed = 1234;
  std::string text_weights;
  std::string image_weights;

  // evaluation during training
  int eval_every = 1;  // epochs; 0 disables
  double threshold = 0.5;
  int min_area = 16;
  std::string polygon_mode = "quad";  // or "polygon"
};

// "full" holds the published full-scale settings, "desk" a CPU-sized variant.
TrainConfig preset_config(const std::string& name);

nlohmann::json to_json(const TrainConfig& cfg);
// Starts from the preset named in j (default "desk") and applies j on top.
// Unknown keys and wrongly typed values are errors.
TrainConfig config_from_json(const nlohmann::json& j);
// JSON merge-patch of overrides onto cfg, validated.
TrainConfig apply_overrides(const TrainConfig& cfg, const nlohmann::json& overrides);
TrainConfig read_config(const std::string& path);

// Throws std::invalid_argument naming the first bad field.
void validate(const TrainConfig& cfg);

// lr0 * factor^floor(epoch / every), epochs counted from 0.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

ModelConfig model_config(const TrainConfig& cfg);
PostprocessConfig postprocess_config(const TrainConfig& cfg);

}  // namespace vltd
