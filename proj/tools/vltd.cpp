// Command-line front end: synth-data, train, detect, evaluate, ablate-depth, ablate-text.
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <set>

#include "vltd/ops.hpp"
#include "vltd/postprocess.hpp"
#include "vltd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vltd;

namespace {

// Exit codes: 1 runtime failure, 2 usage error, 3 partial failure (some inputs failed).
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

void print_error(const std::string& command, const std::string& type, const std::string& message,
                 const json& extra = json::object()) {
  json j{{"status", "error"}, {"command", command}, {"error", type}, {"message", message}};
  j.update(extra);
  std::cerr << j.dump() << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// "key=value"; value is read as JSON when it parses, else as a string.
json parse_overrides(const std::vector<std::string>& sets) {
  json patch = json::object();
  for (const auto& kv : sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    patch[key] = value.is_discarded() ? json(raw) : value;
  }
  return patch;
}

struct ConfigArgs {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "start from a named preset (full, desk)");
    app->add_option("--set", sets, "override a config field, key=value (repeatable)");
  }

  TrainConfig resolve() const {
    TrainConfig cfg = config_path.empty() ? preset_config(preset.empty() ? "desk" : preset) : read_config(config_path);
    json patch = parse_overrides(sets);
    if (!preset.empty() && !config_path.empty()) patch["preset"] = preset;
    return patch.empty() ? cfg : apply_overrides(cfg, patch);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string dataset_label(const DatasetManifest& m) { return format_name(m.format) + "/" + m.split; }

// ---------------------------------------------------------------- overlay

void draw_line(Tensor& img, Point a, Point b, const std::array<double, 3>& color) {
  const int64_t h = img.dim(1), w = img.dim(2);
  auto& v = img.values();
  const double len = std::max(std::abs(b.x - a.x), std::abs(b.y - a.y));
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double x = a.x + t * (b.x - a.x), y = a.y + t * (b.y - a.y);
    for (int64_t dy = -1; dy <= 0; ++dy)
      for (int64_t dx = -1; dx <= 0; ++dx) {
        const int64_t px = static_cast<int64_t>(std::floor(x)) + dx, py = static_cast<int64_t>(std::floor(y)) + dy;
        if (px < 0 || py < 0 || px >= w || py >= h) continue;
        for (int c = 0; c < 3; ++c) v[static_cast<size_t>((c * h + py) * w + px)] = color[static_cast<size_t>(c)];
      }
  }
}

Tensor overlay(const Tensor& image, const std::vector<Detection>& dets) {
  Tensor out = image.clone();
  for (const auto& d : dets)
    for (size_t i = 0; i < d.polygon.size(); ++i)
      draw_line(out, d.polygon[i], d.polygon[(i + 1) % d.polygon.size()], {1.0, 0.1, 0.1});
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const fs::path& out, int count, uint64_t seed, const std::string& family, int size,
              const std::string& split, double ignore_probability) {
  SynthSpec spec;
  spec.height = spec.width = size;
  spec.ignore_probability = ignore_probability;
  if (family == "quad") spec.family = ShapeFamily::kQuad;
  else if (family == "curved") spec.family = ShapeFamily::kCurvedBand;
  else throw std::invalid_argument("--family must be quad or curved");
  const DatasetManifest m = write_synthetic_dataset(out.string(), count, seed, spec, split);
  spdlog::info("wrote {} synthetic samples to {}", m.ids.size(), out.string());
  std::cout << json{{"status", "ok"}, {"manifest", (out / "manifest.json").string()}, {"count", m.ids.size()}}.dump()
            << "\n";
  return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& manifest, const std::string& eval_manifest,
              const fs::path& out, const std::string& resume) {
  const DatasetManifest train_m = read_manifest(manifest);
  const DatasetManifest eval_m = eval_manifest.empty() ? train_m : read_manifest(eval_manifest);
  Trainer trainer = resume.empty() ? Trainer(cfg) : Trainer::load(resume);
  const TrainConfig& used = trainer.config();
  fs::create_directories(out);
  write_text(out / "config.json", to_json(used).dump(2) + "\n");
  spdlog::info("training on {} ({} samples), prompt {} \"{}\"", dataset_label(train_m), train_m.ids.size(),
               used.prompt_id, prompt_text(used.prompt_id));
  const auto train_set = load_dataset(train_m, used.image_size);
  const auto eval_set = eval_manifest.empty() ? train_set : load_dataset(eval_m, used.image_size);

  std::ofstream metrics(out / "metrics.jsonl", std::ios::app);
  TrainHooks hooks;
  hooks.checkpoint_dir = out.string();
  hooks.on_epoch = [&](const EpochRecord& r) { metrics << to_json(r).dump() << std::endl; };
  trainer.train(train_set, &eval_set, hooks);

  const EvalReport report =
      evaluate_model(trainer.model(), eval_set, trainer.prompt_features(), postprocess_config(used));
  json summary{{"status", "ok"},
               {"checkpoint", (out / "last.ckpt").string()},
               {"epochs", trainer.epoch()},
               {"steps", trainer.steps()},
               {"prompt_id", used.prompt_id},
               {"dataset", dataset_label(eval_m)},
               {"report", json::parse(report_json(report))},
               {"config", to_json(used)}};
  write_text(out / "report.json", summary.dump(2) + "\n");
  write_text(out / "report.txt", report_table(report));
  std::cout << report_table(report);
  return 0;
}

int cmd_detect(const std::string& checkpoint, const std::vector<std::string>& images, const std::string& manifest,
               const fs::path& out, const std::string& prompt, double threshold, const std::string& mode,
               bool want_overlay) {
  const Trainer trainer = Trainer::load(checkpoint);
  TrainConfig cfg = trainer.config();
  if (!prompt.empty()) cfg.prompt_id = prompt;
  if (threshold > 0) cfg.threshold = threshold;
  if (!mode.empty()) cfg.polygon_mode = mode;
  validate(cfg);
  const PostprocessConfig pp = postprocess_config(cfg);
  const TextFeatures text = trainer.model().encode_prompt(prompt_text(cfg.prompt_id));
  spdlog::info("detecting with prompt {} \"{}\", threshold {}", cfg.prompt_id, prompt_text(cfg.prompt_id), cfg.threshold);

  std::vector<std::pair<std::string, std::string>> jobs;  // (name, path)
  for (const auto& p : images) jobs.emplace_back(fs::path(p).stem().string(), p);
  if (!manifest.empty()) {
    const DatasetManifest m = read_manifest(manifest);
    for (const auto& id : m.ids) jobs.emplace_back(id, m.image_path(id));
  }
  if (jobs.empty()) throw std::invalid_argument("no input images (pass paths or --manifest)");
  fs::create_directories(out);

  json failures = json::array();
  int written = 0;
  for (const auto& [name, path] : jobs) {
    try {
      const Tensor image = read_png(path);
      const int64_t h = image.dim(1), w = image.dim(2);
      Tensor input = image;
      if (h != cfg.image_size || w != cfg.image_size) {
        NoGradGuard g;
        input = ops::resize_bilinear(image, cfg.image_size, cfg.image_size);
      }
      std::vector<Detection> dets = detect(trainer.model(), input, text, pp);
      const double sx = static_cast<double>(w) / cfg.image_size, sy = static_cast<double>(h) / cfg.image_size;
      for (auto& d : dets) d.polygon = scale(d.polygon, sx, sy);
      write_detections((out / (name + ".txt")).string(), dets);
      if (want_overlay) write_png((out / (name + "_overlay.png")).string(), overlay(image, dets));
      spdlog::info("{}: {} detections (prompt {})", name, dets.size(), cfg.prompt_id);
      ++written;
    } catch (const std::exception& e) {
      spdlog::error("{}: {}", path, e.what());
      failures.push_back({{"image", path}, {"message", e.what()}});
    }
  }
  if (!failures.empty()) {
    print_error("detect", "partial_failure", fmt::format("{} of {} images failed", failures.size(), jobs.size()),
                {{"failures", failures}, {"written", written}});
    return kExitPartial;
  }
  std::cout << json{{"status", "ok"}, {"written", written}, {"prompt_id", cfg.prompt_id}}.dump() << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& det_dir, const std::string& manifest, const std::string& thresholds_arg,
                 bool allow_missing, const std::string& out) {
  const DatasetManifest m = read_manifest(manifest);
  std::vector<double> thresholds;
  for (const auto& t : split_list(thresholds_arg)) thresholds.push_back(std::stod(t));
  if (thresholds.empty()) throw std::invalid_argument("no IoU thresholds given");
  if (!fs::is_directory(det_dir)) throw std::runtime_error("detection directory " + det_dir.string() + " not found");

  std::set<std::string> ids(m.ids.begin(), m.ids.end());
  json missing = json::array(), extra = json::array();
  for (const auto& id : m.ids)
    if (!fs::exists(det_dir / (id + ".txt"))) missing.push_back(id);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(det_dir))
    if (e.path().extension() == ".txt") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  for (const auto& n : names)
    if (!ids.count(n)) extra.push_back(n);
  if ((!missing.empty() || !extra.empty()) && !allow_missing) {
    print_error("evaluate", "unmatched_ids",
                fmt::format("{} ids without detections, {} detection files without ground truth", missing.size(),
                            extra.size()),
                {{"missing", missing}, {"unexpected", extra}});
    return kExitFailure;
  }
  for (const auto& id : missing) spdlog::warn("no detections for {}; scored as empty", id.get<std::string>());

  std::vector<ImagePair> pairs;
  for (const auto& id : m.ids) {
    ImagePair p;
    const fs::path det = det_dir / (id + ".txt");
    if (fs::exists(det)) p.dets = read_detections(det.string());
    p.gts = read_annotations(m.annotation_path(id), m.annotation_format, m.ctw_flavor);
    pairs.push_back(std::move(p));
  }
  const EvalReport report = evaluate_images(pairs, thresholds);
  json j{{"status", "ok"},
         {"dataset", dataset_label(m)},
         {"images", m.ids.size()},
         {"missing", missing},
         {"unexpected", extra},
         {"report", json::parse(report_json(report))}};
  if (!out.empty()) write_text(out, j.dump(2) + "\n");
  std::cout << report_table(report);
  return 0;
}

int cmd_ablate(bool depth, const TrainConfig& cfg, const std::string& manifest, const std::string& eval_manifest,
               const std::string& list, const fs::path& out) {
  const DatasetManifest train_m = read_manifest(manifest);
  const DatasetManifest eval_m = eval_manifest.empty() ? train_m : read_manifest(eval_manifest);
  const auto train_set = load_dataset(train_m, cfg.image_size);
  const auto eval_set = eval_manifest.empty() ? train_set : load_dataset(eval_m, cfg.image_size);
  AblationReport report;
  if (depth) {
    std::vector<int> layers;
    for (const auto& s : split_list(list)) layers.push_back(std::stoi(s));
    report = ablate_depth(cfg, layers, train_set, eval_set, dataset_label(eval_m));
  } else {
    report = ablate_text(cfg, split_list(list), train_set, eval_set, dataset_label(eval_m));
  }
  fs::create_directories(out);
  const std::string stem = depth ? "ablate_depth" : "ablate_text";
  write_text(out / (stem + ".json"), ablation_json(report).dump(2) + "\n");
  write_text(out / (stem + ".txt"), ablation_table(report));
  std::cout << ablation_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision-language scene text detector"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "write a synthetic dataset with a manifest");
  std::string synth_out, family = "quad", split = "train";
  int count = 8, size = 128;
  uint64_t synth_seed = 1;
  double ignore_probability = 0.0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "base seed");
  synth->add_option("--family", family, "quad or curved");
  synth->add_option("--size", size, "image side in pixels");
  synth->add_option("--split", split, "split name used in ids and the manifest");
  synth->add_option("--ignore-probability", ignore_probability, "chance of a ### instance");

  // train
  auto* train = app.add_subcommand("train", "train a detector");
  ConfigArgs train_cfg;
  train_cfg.attach(train);
  std::string train_manifest, train_eval, train_out, resume;
  train->add_option("--manifest", train_manifest, "training manifest")->required();
  train->add_option("--eval-manifest", train_eval, "evaluation manifest (default: training set)");
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--resume", resume, "continue from a checkpoint (its config wins)");

  // detect
  auto* det = app.add_subcommand("detect", "run a checkpoint on images");
  std::string ckpt, det_manifest, det_out, prompt, mode;
  std::vector<std::string> images;
  double threshold = -1;
  bool want_overlay = false;
  det->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  det->add_option("images", images, "PNG images");
  det->add_option("--manifest", det_manifest, "detect every image of a manifest");
  det->add_option("--out", det_out, "output directory")->required();
  det->add_option("--prompt", prompt, "prompt id (default: the checkpoint's)");
  det->add_option("--threshold", threshold, "binarization threshold (default: the checkpoint's)");
  det->add_option("--mode", mode, "quad or polygon");
  det->add_flag("--overlay", want_overlay, "also write <name>_overlay.png");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a detection directory against a manifest");
  std::string ev_dir, ev_manifest, ev_out, ev_thresholds = "0.5,0.6,0.7,0.8,0.9";
  bool allow_missing = false;
  ev->add_option("--detections", ev_dir, "directory of <id>.txt detection files")->required();
  ev->add_option("--manifest", ev_manifest, "ground-truth manifest")->required();
  ev->add_option("--thresholds", ev_thresholds, "comma-separated IoU thresholds");
  ev->add_option("--out", ev_out, "write the JSON report here");
  ev->add_flag("--allow-missing", allow_missing, "score ids without detections as empty");

  // ablations
  auto* abd = app.add_subcommand("ablate-depth", "train one model per decoder depth");
  auto* abt = app.add_subcommand("ablate-text", "train with each prompt and without text");
  ConfigArgs abd_cfg, abt_cfg;
  abd_cfg.attach(abd);
  abt_cfg.attach(abt);
  std::string ab_manifest, ab_eval, ab_out, layers = "2,3,4,5", prompts = "P1,P2,P3";
  for (auto* sub : {abd, abt}) {
    sub->add_option("--manifest", ab_manifest, "training manifest")->required();
    sub->add_option("--eval-manifest", ab_eval, "evaluation manifest (default: training set)");
    sub->add_option("--out", ab_out, "report directory")->required();
  }
  abd->add_option("--layers", layers, "comma-separated decoder depths");
  abt->add_option("--prompts", prompts, "comma-separated prompt ids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "usage", e.what());
    return kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*synth) return cmd_synth(synth_out, count, synth_seed, family, size, split, ignore_probability);
    if (*train) return cmd_train(train_cfg.resolve(), train_manifest, train_eval, train_out, resume);
    if (*det) return cmd_detect(ckpt, images, det_manifest, det_out, prompt, threshold, mode, want_overlay);
    if (*ev) return cmd_evaluate(ev_dir, ev_manifest, ev_thresholds, allow_missing, ev_out);
    if (*abd) return cmd_ablate(true, abd_cfg.resolve(), ab_manifest, ab_eval, layers, ab_out);
    if (*abt) return cmd_ablate(false, abt_cfg.resolve(), ab_manifest, ab_eval, prompts, ab_out);
  } catch (const TrainingDiverged& e) {
    print_error(command, "diverged", e.what(), {{"batch", e.batch_id()}});
    return kExitFailure;
  } catch (const std::invalid_argument& e) {
    print_error(command, "invalid_argument", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    print_error(command, "runtime_error", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
