#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "affect/dataset.hpp"
#include "affect/losses.hpp"
#include "affect/metrics.hpp"
#include "affect/model.hpp"
#include "affect/thresholds.hpp"

namespace affect {

/// Which loss drives the parameter updates. The single-task modes optimize
/// only their own criterion (both stages) and keep the other heads frozen.
enum class TrainMode { kMultitask, kVa, kExpr, kAu };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& text);

struct TrainConfig {
  std::uint64_t seed = 7;
  std::size_t batch_size = 16;
  std::size_t stage1_epochs = 5;
  std::size_t stage2_epochs = 5;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-4;
  LossWeights weights;
  std::vector<double> threshold_grid;  // empty means the default grid
  std::string train_dir;
  std::string val_dir;  // empty: validate on the training set
  TrainMode mode = TrainMode::kMultitask;
  ModelConfig model;
  VaRange va_range;

  void validate() const;  // throws ConfigError
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// Adam with bias correction. Parameters whose frozen flag is set are
/// skipped entirely: no moment update, no step count, no value change.
class AdamOptimizer {
 public:
  AdamOptimizer(ParamList params, double lr);

  void zero_grad();
  void step();

  double lr() const { return lr_; }

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
  };
  ParamList params_;
  std::vector<Slot> slots_;
  double lr_;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
};

/// Metrics from already-collected predictions. va arrays are [N,2]
/// row-major, au arrays are [N,kNumAus] row-major.
MetricReport compute_report(std::span<const double> va_pred,
                            std::span<const double> va_true,
                            std::span<const int> expr_pred,
                            std::span<const int> expr_true,
                            std::span<const double> au_probs,
                            std::span<const int> au_true,
                            const ThresholdSet& thresholds);

/// Runs the model in eval mode over every sample and scores it.
MetricReport evaluate(Model& model, std::span<const Sample> samples,
                      const ThresholdSet& thresholds, std::size_t batch_size);

/// Collects sigmoid probabilities and truth for the action units, in the
/// row-major layout the threshold optimizer expects.
void collect_au_probs(Model& model, std::span<const Sample> samples,
                      std::size_t batch_size, std::vector<double>& probs,
                      std::vector<int>& truth);

struct EpochLog {
  int stage = 1;
  std::size_t epoch = 0;  // 1-based, counted across both stages
  double loss_total = 0.0;
  double loss_va = 0.0;
  double loss_expr = 0.0;
  double loss_au = 0.0;
  double loss_att = 0.0;
  MetricReport val;
  double seconds = 0.0;
};

struct TrainResult {
  std::map<std::string, Tensor> best_state;
  MetricReport best_report;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> logs;

  std::string logs_to_json() const;
};

/// Two-stage schedule: stage 1 trains the heads on top of a frozen
/// backbone, attention and pooling; stage 2 releases everything. Each
/// stage gets a fresh optimizer at its own learning rate. The model with
/// the best validation challenge score across all epochs is retained.
class Trainer {
 public:
  /// Loads (and curates) the datasets named in the config.
  explicit Trainer(const TrainConfig& config);
  /// Uses the given samples (still curated) instead of reading from disk.
  Trainer(const TrainConfig& config, std::vector<Sample> train_samples,
          std::vector<Sample> val_samples);

  TrainResult run();

  Model& model() { return model_; }
  const CurationReport& train_curation() const { return train_curation_; }
  const CurationReport& val_curation() const { return val_curation_; }

 private:
  void apply_freeze(int stage);
  EpochLog train_epoch(int stage, std::size_t global_epoch,
                       AdamOptimizer& optimizer);

  TrainConfig cfg_;
  Model model_;
  std::vector<Sample> train_;
  std::vector<Sample> val_;
  CurationReport train_curation_;
  CurationReport val_curation_;
};

}  // namespace affect
