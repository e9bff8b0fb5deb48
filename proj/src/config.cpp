#include "vltd/config.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vltd/tokenizer.hpp"

namespace vltd {

using nlohmann::json;

namespace {

// Field table shared by serialization and parsing.
template <typename F>
void visit_fields(TrainConfig& c, F&& f) {
  f("preset", c.preset);
  f("batch_size", c.batch_size);
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("lr_decay_factor", c.lr_decay_factor);
  f("lr_decay_every", c.lr_decay_every);
  f("epochs", c.epochs);
  f("max_steps", c.max_steps);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("adam_eps", c.adam_eps);
  f("precision", c.precision);
  f("image_size", c.image_size);
  f("augment", c.augment);
  f("crop_probability", c.crop_probability);
  f("min_crop_scale", c.min_crop_scale);
  f("flip_probability", c.flip_probability);
  f("prompt_id", c.prompt_id);
  f("seed", c.seed);
  f("image_channels", c.image_channels);
  f("blocks_per_stage", c.blocks_per_stage);
  f("fused_channels", c.fused_channels);
  f("per_pixel_fusion", c.per_pixel_fusion);
  f("decoder_layers", c.decoder_layers);
  f("heads", c.heads);
  f("model_dim", c.model_dim);
  f("ff_dim", c.ff_dim);
  f("activation", c.activation);
  f("positional_encoding", c.positional_encoding);
  f("embed_dim", c.embed_dim);
  f("text_enabled", c.text_enabled);
  f("text_width", c.text_width);
  f("text_layers", c.text_layers);
  f("text_heads", c.text_heads);
  f("text_seed", c.text_seed);
  f("text_weights", c.text_weights);
  f("image_weights", c.image_weights);
  f("eval_every", c.eval_every);
  f("threshold", c.threshold);
  f("min_area", c.min_area);
  f("polygon_mode", c.polygon_mode);
}

template <typename T>
bool type_matches(const json& v) {
  if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
  else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
  else if constexpr (std::is_floating_point_v<T>) return v.is_number();
  else if constexpr (std::is_unsigned_v<T>) return v.is_number_unsigned();
  else if constexpr (std::is_integral_v<T>) return v.is_number_integer();
  else return v.is_array();
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument("config field '" + field + "' " + what);
}

}  // namespace

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "full") {
    c.epochs = 110;
    c.image_size = 512;
    c.image_channels = {256, 512, 1024, 2048};
    c.fused_channels = 256;
    c.model_dim = 256;
    c.text_width = 512;
    c.embed_dim = 512;
    c.text_layers = 12;
    c.text_heads = 8;
    return c;
  }
  if (name == "desk") {
    c.epochs = 20;
    c.batch_size = 2;
    c.lr = 1e-3;
    c.image_size = 96;
    c.image_channels = {16, 32, 64, 128};
    c.fused_channels = 64;
    c.model_dim = 64;
    c.ff_dim = 256;
    c.min_area = 8;
    return c;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (expected full or desk)");
}

json to_json(const TrainConfig& cfg) {
  json j = json::object();
  TrainConfig copy = cfg;
  visit_fields(copy, [&](const char* key, auto& value) { j[key] = value; });
  return j;
}

TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  std::string preset = "desk";
  if (j.contains("preset")) {
    require(j["preset"].is_string(), "preset", "must be a string");
    preset = j["preset"].get<std::string>();
  }
  TrainConfig cfg = preset_config(preset);
  json known = json::object();
  visit_fields(cfg, [&](const char* key, auto& value) {
    known[key] = true;
    if (!j.contains(key)) return;
    using T = std::decay_t<decltype(value)>;
    const json& v = j[key];
    require(type_matches<T>(v), key, "has the wrong type (got " + v.dump() + ")");
    if constexpr (std::is_same_v<T, std::array<int, 4>>) {
      require(v.size() == 4, key, "must list 4 values");
      for (const json& e : v) require(e.is_number_integer(), key, "must hold integers");
    }
    value = v.get<T>();
  });
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown config field '" + key + "'");
  validate(cfg);
  return cfg;
}

TrainConfig apply_overrides(const TrainConfig& cfg, const json& overrides) {
  json j = to_json(cfg);
  // A preset switch resets everything the caller did not set explicitly.
  if (overrides.contains("preset")) j = json{{"preset", overrides["preset"]}};
  j.merge_patch(overrides);
  return config_from_json(j);
}

TrainConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void validate(const TrainConfig& c) {
  require(c.batch_size >= 1, "batch_size", "must be >= 1");
  require(c.lr > 0 && std::isfinite(c.lr), "lr", "must be positive");
  require(c.weight_decay >= 0, "weight_decay", "must be >= 0");
  require(c.lr_decay_factor > 0 && c.lr_decay_factor <= 1, "lr_decay_factor", "must lie in (0, 1]");
  require(c.lr_decay_every >= 1, "lr_decay_every", "must be >= 1");
  require(c.epochs >= 1, "epochs", "must be >= 1");
  require(c.max_steps >= 0, "max_steps", "must be >= 0");
  require(c.adam_beta1 >= 0 && c.adam_beta1 < 1, "adam_beta1", "must lie in [0, 1)");
  require(c.adam_beta2 >= 0 && c.adam_beta2 < 1, "adam_beta2", "must lie in [0, 1)");
  require(c.adam_eps > 0, "adam_eps", "must be positive");
  require(c.precision == "fp64", "precision", "must be fp64 (the only implemented mode)");
  require(c.image_size >= 32 && c.image_size % 32 == 0, "image_size", "must be a positive multiple of 32");
  require(c.crop_probability >= 0 && c.crop_probability <= 1, "crop_probability", "must lie in [0, 1]");
  require(c.min_crop_scale > 0 && c.min_crop_scale <= 1, "min_crop_scale", "must lie in (0, 1]");
  require(c.flip_probability >= 0 && c.flip_probability <= 1, "flip_probability", "must lie in [0, 1]");
  static const PromptRegistry prompts;
  require(prompts.contains(c.prompt_id), "prompt_id", "must name a registered prompt (P1, P2 or P3)");
  for (int ch : c.image_channels) require(ch >= 1, "image_channels", "must be positive");
  require(c.blocks_per_stage >= 1, "blocks_per_stage", "must be >= 1");
  require(c.fused_channels >= 1, "fused_channels", "must be >= 1");
  require(c.decoder_layers >= 1, "decoder_layers", "must be >= 1");
  require(c.heads >= 1, "heads", "must be >= 1");
  require(c.model_dim >= 1 && c.model_dim % c.heads == 0, "model_dim", "must be divisible by heads");
  require(!c.positional_encoding || c.model_dim % 4 == 0, "model_dim", "must be a multiple of 4 with positional encoding");
  require(c.ff_dim >= 1, "ff_dim", "must be >= 1");
  require(c.activation == "gelu" || c.activation == "relu", "activation", "must be gelu or relu");
  require(c.embed_dim >= 1, "embed_dim", "must be >= 1");
  require(c.text_heads >= 1, "text_heads", "must be >= 1");
  require(c.text_width >= 1 && c.text_width % c.text_heads == 0, "text_width", "must be divisible by text_heads");
  require(c.text_layers >= 1, "text_layers", "must be >= 1");
  require(c.eval_every >= 0, "eval_every", "must be >= 0");
  require(c.threshold > 0 && c.threshold < 1, "threshold", "must lie in (0, 1)");
  require(c.min_area >= 0, "min_area", "must be >= 0");
  require(c.polygon_mode == "quad" || c.polygon_mode == "polygon", "polygon_mode", "must be quad or polygon");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

ModelConfig model_config(const TrainConfig& c) {
  ModelConfig m;
  m.seed = c.seed;
  m.image.channels = c.image_channels;
  m.image.blocks_per_stage = c.blocks_per_stage;
  m.image.weights_path = c.image_weights;
  m.afpn.channels = c.fused_channels;
  m.afpn.per_pixel_weights = c.per_pixel_fusion;
  m.afpn.weight_grid_h = m.afpn.weight_grid_w = c.image_size / 4;
  m.decoder.num_layers = c.decoder_layers;
  m.decoder.num_heads = c.heads;
  m.decoder.model_dim = c.model_dim;
  m.decoder.ff_dim = c.ff_dim;
  m.decoder.activation = c.activation;
  m.decoder.positional_encoding = c.positional_encoding;
  m.decoder.text_enabled = c.text_enabled;
  m.head.dim = c.embed_dim;
  m.head.text_enabled = c.text_enabled;
  m.text.width = c.text_width;
  m.text.out_dim = c.text_width;
  m.text.layers = c.text_layers;
  m.text.heads = c.text_heads;
  m.text.seed = c.text_seed;
  m.text.weights_path = c.text_weights;
  return m;
}

PostprocessConfig postprocess_config(const TrainConfig& c) {
  PostprocessConfig p;
  p.threshold = c.threshold;
  p.min_area = c.min_area;
  p.mode = c.polygon_mode == "polygon" ? PolygonMode::kPolygon : PolygonMode::kQuad;
  return p;
}

}  // namespace vltd
