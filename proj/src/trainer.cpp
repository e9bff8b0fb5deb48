#include "vltd/trainer.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <numeric>

#include "vltd/postprocess.hpp"
#include "vltd/tokenizer.hpp"

namespace vltd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointKind = "vltd-checkpoint";
constexpr int kCheckpointVersion = 1;

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t h = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

ParamList prefixed(const ParamList& params, const std::string& prefix) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
  return out;
}

std::string hex(uint64_t v) { return fmt::format("{:016x}", v); }

}  // namespace

// ---------------------------------------------------------------- Adam

Adam::Adam(ParamList params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape()));
    v_.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor w = params_[i].tensor;
    const auto g = w.grad();
    auto& value = w.values();
    auto& m = m_[i].values();
    auto& v = v_[i].values();
    for (size_t k = 0; k < value.size(); ++k) {
      const double gk = (g.empty() ? 0.0 : g[k]) + weight_decay_ * value[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (const auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

ParamList Adam::state() const {
  ParamList out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam.m/" + params_[i].name, m_[i]});
    out.push_back({"adam.v/" + params_[i].name, v_[i]});
  }
  return out;
}

void Adam::load_state(const Archive& archive, int64_t steps) {
  load_params(state(), archive);
  t_ = steps;
}

TrainingDiverged::TrainingDiverged(const std::string& batch_id, double loss)
    : std::runtime_error(fmt::format("training diverged: loss {} in batch {}", loss, batch_id)), batch_id_(batch_id) {}

json to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch}, {"steps", r.steps}, {"lr", r.lr}, {"loss", r.loss}, {"seconds", r.seconds}};
  j["f1_50"] = r.f1_50 < 0 ? json(nullptr) : json(r.f1_50);
  return j;
}

namespace {

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.steps = j.at("steps").get<int64_t>();
  r.lr = j.at("lr").get<double>();
  r.loss = j.at("loss").get<double>();
  r.seconds = j.at("seconds").get<double>();
  r.f1_50 = j.at("f1_50").is_null() ? -1.0 : j.at("f1_50").get<double>();
  return r;
}

}  // namespace

// ---------------------------------------------------------------- inference

std::vector<Sample> load_dataset(const DatasetManifest& m, int64_t size) {
  check_manifest(m);
  std::vector<Sample> out;
  out.reserve(m.ids.size());
  for (const auto& id : m.ids) {
    Sample s = load_sample(m, id);
    if (s.height() != size || s.width() != size) s = resize_sample(s, size, size);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Detection> detect(const Detector& model, const Tensor& image, const TextFeatures& text,
                              const PostprocessConfig& pp, Tensor* prob) {
  NoGradGuard guard;
  const int64_t h = image.dim(1), w = image.dim(2);
  const ForwardResult r = model.forward(image, text);
  const Tensor map = model.similarity(r, h, w);
  if (prob) *prob = map;
  return extract_instances(binarize(map.values(), pp.threshold), h, w, map.values(), pp);
}

EvalReport evaluate_model(const Detector& model, const std::vector<Sample>& samples, const TextFeatures& text,
                          const PostprocessConfig& pp, const std::vector<double>& thresholds) {
  std::vector<ImagePair> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) pairs.push_back({detect(model, s.image, text, pp), s.instances});
  return evaluate_images(pairs, thresholds);
}

const std::string& prompt_text(const std::string& prompt_id) {
  static const PromptRegistry registry;
  return registry.get(prompt_id);
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_((validate(cfg), cfg)),
      model_(std::make_unique<Detector>(model_config(cfg))),
      adam_(model_->trainable_params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay) {}

TextFeatures Trainer::prompt_features() const { return model_->encode_prompt(prompt_text(cfg_.prompt_id)); }

double Trainer::accumulate(const Sample& sample, double scale) {
  const TextFeatures text = prompt_features();
  const ForwardResult r = model_->forward(sample.image, text);
  const int factor = static_cast<int>(sample.height() / r.projected.grid_h);
  const GridTargets gt = downsample_mask(sample.mask, factor);
  const Tensor loss = contrastive_loss(r.projected, gt, ops::Reduction::kSum);
  ops::scale(loss, scale).backward();
  return loss.item();
}

double Trainer::train_step(const std::vector<Sample>& batch, const std::string& batch_id) {
  // Weight of each sample: its non-ignored cells on the loss grid.
  std::vector<double> weights;
  const int64_t grid_factor = 4 / model_->config().head.upsample;
  for (const auto& s : batch) {
    const GridTargets gt = downsample_mask(s.mask, static_cast<int>(grid_factor));
    weights.push_back(std::accumulate(gt.weights.begin(), gt.weights.end(), 0.0));
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0) {
    spdlog::warn("batch {} has no non-ignored cells; skipped", batch_id);
    return 0.0;
  }
  double loss = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    if (weights[i] > 0) loss += accumulate(batch[i], 1.0 / total);
  }
  loss /= total;
  if (!std::isfinite(loss)) {
    adam_.zero_grad();
    throw TrainingDiverged(batch_id, loss);
  }
  adam_.step(lr_at_epoch(cfg_, epoch_));
  return loss;
}

std::vector<EpochRecord> Trainer::train(const std::vector<Sample>& train_set, const std::vector<Sample>* eval_set,
                                        const TrainHooks& hooks) {
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& s : train_set)
    if (s.height() != cfg_.image_size || s.width() != cfg_.image_size)
      throw std::invalid_argument(fmt::format("sample {} is {}x{}, expected image_size {}", s.id, s.height(), s.width(),
                                              cfg_.image_size));
  const std::vector<Sample>& evals = eval_set ? *eval_set : train_set;
  if (!hooks.checkpoint_dir.empty()) fs::create_directories(hooks.checkpoint_dir);

  AugmentConfig aug;
  aug.out_size = cfg_.image_size;
  aug.crop_probability = cfg_.crop_probability;
  aug.min_crop_scale = cfg_.min_crop_scale;
  aug.flip_probability = cfg_.flip_probability;

  std::vector<EpochRecord> out;
  const auto capped = [&] { return cfg_.max_steps > 0 && steps() >= cfg_.max_steps; };
  while (epoch_ < cfg_.epochs && !capped()) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle(mix(cfg_.seed, static_cast<uint64_t>(epoch_)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle.uniform_int(0, static_cast<int64_t>(i) - 1))]);

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t b0 = 0; b0 < order.size() && !capped(); b0 += static_cast<size_t>(cfg_.batch_size)) {
      std::vector<Sample> batch;
      std::string ids;
      for (size_t k = b0; k < std::min(order.size(), b0 + static_cast<size_t>(cfg_.batch_size)); ++k) {
        const Sample& s = train_set[order[k]];
        const uint64_t aug_seed = mix(mix(cfg_.seed, static_cast<uint64_t>(epoch_) + 1), order[k]);
        batch.push_back(cfg_.augment ? augment(s, aug_seed, aug) : s);
        ids += (ids.empty() ? "" : ",") + s.id;
      }
      const std::string batch_id = fmt::format("epoch {} batch {} [{}]", epoch_, batches, ids);
      loss_sum += train_step(batch, batch_id);
      ++batches;
      spdlog::debug("step {} loss {:.6f}", steps(), loss_sum / batches);
    }

    EpochRecord rec;
    rec.epoch = epoch_;
    rec.steps = steps();
    rec.lr = lr_at_epoch(cfg_, epoch_);
    rec.loss = batches ? loss_sum / batches : 0.0;
    ++epoch_;
    const bool last = epoch_ == cfg_.epochs || capped();
    if (cfg_.eval_every > 0 && (epoch_ % cfg_.eval_every == 0 || last))
      rec.f1_50 = evaluate_model(*model_, evals, prompt_features(), postprocess_config(cfg_), {0.5}).at(0.5).f_score;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history_.push_back(rec);
    out.push_back(rec);
    spdlog::info("epoch {} steps {} lr {:g} loss {:.5f} F1@50 {} ({:.1f}s, prompt {})", rec.epoch, rec.steps, rec.lr,
                 rec.loss, rec.f1_50 < 0 ? std::string("-") : fmt::format("{:.4f}", rec.f1_50), rec.seconds,
                 cfg_.prompt_id);
    if (!hooks.checkpoint_dir.empty()) {
      save((fs::path(hooks.checkpoint_dir) / fmt::format("epoch_{:03d}.ckpt", rec.epoch)).string());
      save((fs::path(hooks.checkpoint_dir) / "last.ckpt").string());
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return out;
}

void Trainer::save(const std::string& path) const {
  json meta{{"kind", kCheckpointKind},
            {"version", kCheckpointVersion},
            {"config", to_json(cfg_)},
            {"text_fingerprint", hex(model_->text_encoder.fingerprint())},
            {"epoch", epoch_},
            {"adam_steps", adam_.steps()}};
  json hist = json::array();
  for (const auto& r : history_) hist.push_back(to_json(r));
  meta["history"] = hist;
  ParamList tensors = prefixed(model_->trainable_params(), "model/");
  const ParamList state = adam_.state();
  tensors.insert(tensors.end(), state.begin(), state.end());
  write_archive(path, meta, tensors);
}

Trainer Trainer::load(const std::string& path) {
  const Archive a = read_archive(path);
  if (a.meta.value("kind", "") != kCheckpointKind)
    throw std::runtime_error(path + " is not a checkpoint");
  if (a.meta.value("version", 0) != kCheckpointVersion)
    throw std::runtime_error(fmt::format("{}: unsupported checkpoint version {}", path, a.meta.value("version", 0)));
  Trainer t(config_from_json(a.meta.at("config")));
  const std::string stored = a.meta.at("text_fingerprint").get<std::string>();
  const std::string actual = hex(t.model_->text_encoder.fingerprint());
  if (stored != actual)
    throw std::runtime_error(fmt::format("{}: text encoder fingerprint {} does not match the checkpoint ({})", path,
                                         actual, stored));
  load_params(prefixed(t.model_->trainable_params(), "model/"), a);
  t.adam_.load_state(a, a.meta.at("adam_steps").get<int64_t>());
  t.epoch_ = a.meta.at("epoch").get<int>();
  for (const auto& r : a.meta.at("history")) t.history_.push_back(record_from_json(r));
  return t;
}

// ---------------------------------------------------------------- ablations

namespace {

AblationRow run_variant(const TrainConfig& cfg, const std::string& label, json settings,
                        const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set) {
  spdlog::info("ablation variant {}", label);
  Trainer t(cfg);
  t.train(train_set, &eval_set);
  const EvalReport report =
      evaluate_model(t.model(), eval_set, t.prompt_features(), postprocess_config(cfg), kDefaultIouThresholds);
  return {label, std::move(settings), report};
}

}  // namespace

AblationReport ablate_depth(const TrainConfig& base, const std::vector<int>& layers, const std::vector<Sample>& train_set,
                            const std::vector<Sample>& eval_set, const std::string& dataset) {
  AblationReport rep;
  rep.title = "Decoder depth ablation";
  rep.row_header = "Layers";
  rep.dataset = dataset;
  rep.base = base;
  for (int n : layers) {
    TrainConfig cfg = base;
    cfg.decoder_layers = n;
    rep.rows.push_back(run_variant(cfg, std::to_string(n), json{{"decoder_layers", n}}, train_set, eval_set));
  }
  rep.footer =
      "Published full-scale reference values (e.g. MLT2019, 3 layers, F1@50 = 84.8) come from training on about 10k "
      "real images on multiple GPUs. They are not reproducible at desk scale and no numeric agreement is claimed.";
  return rep;
}

AblationReport ablate_text(const TrainConfig& base, const std::vector<std::string>& prompts,
                           const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                           const std::string& dataset) {
  AblationReport rep;
  rep.title = "Language input ablation";
  rep.row_header = "Text input";
  rep.dataset = dataset;
  rep.base = base;
  for (const auto& p : prompts) {
    TrainConfig cfg = base;
    cfg.text_enabled = true;
    cfg.prompt_id = p;
    rep.rows.push_back(
        run_variant(cfg, "with " + p, json{{"text_enabled", true}, {"prompt_id", p}}, train_set, eval_set));
  }
  TrainConfig off = base;
  off.text_enabled = false;
  rep.rows.push_back(run_variant(off, "without", json{{"text_enabled", false}}, train_set, eval_set));
  rep.footer =
      "Published reference values come from full-scale training and are not reproducible at desk scale; "
      "no numeric agreement is claimed.";
  return rep;
}

std::string ablation_table(const AblationReport& r) {
  size_t label_w = r.row_header.size();
  for (const auto& row : r.rows) label_w = std::max(label_w, row.label.size());
  std::string out = fmt::format("{} (dataset: {}, F-measure in %)\n", r.title, r.dataset);
  out += fmt::format("{:<{}}", r.row_header, label_w);
  for (double t : kDefaultIouThresholds) out += fmt::format("  {:>6}", "F1@" + threshold_label(t));
  out += "\n";
  for (const auto& row : r.rows) {
    out += fmt::format("{:<{}}", row.label, label_w);
    for (double t : kDefaultIouThresholds) out += fmt::format("  {:>6.1f}", 100.0 * row.report.at(t).f_score);
    out += "\n";
  }
  out += r.footer + "\n";
  return out;
}

json ablation_json(const AblationReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json f = json::object();
    for (const auto& e : row.report.entries)
      f["F1@" + threshold_label(e.iou_threshold)] = {
          {"precision", e.precision}, {"recall", e.recall}, {"f_score", e.f_score}};
    rows.push_back({{"label", row.label}, {"settings", row.settings}, {"metrics", f}});
  }
  return {{"title", r.title}, {"dataset", r.dataset}, {"config", to_json(r.base)}, {"rows", rows}, {"footer", r.footer}};
}

}  // namespace vltd
