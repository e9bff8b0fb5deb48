#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "vltd/archive.hpp"
#include "vltd/config.hpp"
#include "vltd/data.hpp"
#include "vltd/evaluator.hpp"
#include "vltd/model.hpp"

namespace vltd {

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(ParamList params, double beta1, double beta2, double eps, double weight_decay);

  // Applies one update from the accumulated gradients, then clears them.
  void step(double lr);
  void zero_grad();

  int64_t steps() const { return t_; }
  const ParamList& params() const { return params_; }
  // First and second moments named "adam.m/<param>" and "adam.v/<param>".
  ParamList state() const;
  void load_state(const Archive& archive, int64_t steps);

 private:
  ParamList params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& batch_id, double loss);
  const std::string& batch_id() const { return batch_id_; }

 private:
  std::string batch_id_;
};

struct EpochRecord {
  int epoch = 0;
  int64_t steps = 0;  // optimizer steps taken so far
  double lr = 0.0;
  double loss = 0.0;  // mean batch loss over the epoch
  double f1_50 = -1.0;  // -1 when not evaluated
  double seconds = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainHooks {
  std::string checkpoint_dir;  // epoch_NNN.ckpt and last.ckpt when set
  std::function<void(const EpochRecord&)> on_epoch;
};

// Loads every manifest sample, resized to size x size.
std::vector<Sample> load_dataset(const DatasetManifest& m, int64_t size);

// Thresholded similarity map turned into polygons. prob receives the map when set.
std::vector<Detection> detect(const Detector& model, const Tensor& image, const TextFeatures& text,
                              const PostprocessConfig& pp, Tensor* prob = nullptr);

EvalReport evaluate_model(const Detector& model, const std::vector<Sample>& samples, const TextFeatures& text,
                          const PostprocessConfig& pp, const std::vector<double>& thresholds = kDefaultIouThresholds);

const std::string& prompt_text(const std::string& prompt_id);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  Detector& model() { return *model_; }
  const Detector& model() const { return *model_; }
  const Adam& optimizer() const { return adam_; }
  TextFeatures prompt_features() const;

  // Backpropagates scale * (loss summed over the sample's cells); returns the
  // unscaled sum.
  double accumulate(const Sample& sample, double scale);
  // One optimizer step on a batch; returns the mean loss over non-ignored cells.
  double train_step(const std::vector<Sample>& batch, const std::string& batch_id);

  // Runs the remaining epochs (or until max_steps). eval_set defaults to train_set.
  std::vector<EpochRecord> train(const std::vector<Sample>& train_set, const std::vector<Sample>* eval_set = nullptr,
                                 const TrainHooks& hooks = {});

  int epoch() const { return epoch_; }
  int64_t steps() const { return adam_.steps(); }
  const std::vector<EpochRecord>& history() const { return history_; }

  void save(const std::string& path) const;
  // Throws when the stored text-encoder fingerprint differs from the rebuilt one.
  static Trainer load(const std::string& path);

 private:
  TrainConfig cfg_;
  std::unique_ptr<Detector> model_;
  Adam adam_;
  int epoch_ = 0;
  std::vector<EpochRecord> history_;
};

// ---- ablations

struct AblationRow {
  std::string label;
  nlohmann::json settings;
  EvalReport report;
};

struct AblationReport {
  std::string title;
  std::string row_header;
  std::string dataset;
  TrainConfig base;
  std::vector<AblationRow> rows;
  std::string footer;
};

// One model per depth, same seed and budget, scored on eval_set.
AblationReport ablate_depth(const TrainConfig& base, const std::vector<int>& layers, const std::vector<Sample>& train_set,
                            const std::vector<Sample>& eval_set, const std::string& dataset);
// One model per prompt with text, plus one without the text stream.
AblationReport ablate_text(const TrainConfig& base, const std::vector<std::string>& prompts,
                           const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                           const std::string& dataset);

std::string ablation_table(const AblationReport& report);
nlohmann::json ablation_json(const AblationReport& report);

}  // namespace vltd
