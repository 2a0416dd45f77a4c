#include "affect/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <utility>

#include "affect/errors.hpp"
#include "affect/json_io.hpp"
#include "affect/rng.hpp"

namespace affect {

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kMultitask: return "multitask";
    case TrainMode::kVa: return "va";
    case TrainMode::kExpr: return "expr";
    case TrainMode::kAu: return "au";
  }
  throw ContractError("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& text) {
  if (text == "multitask") return TrainMode::kMultitask;
  if (text == "va") return TrainMode::kVa;
  if (text == "expr") return TrainMode::kExpr;
  if (text == "au") return TrainMode::kAu;
  throw ConfigError("unknown mode '" + text +
                    "' (expected multitask, va, expr or au)");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{
      {"va", w.va}, {"expr", w.expr}, {"au", w.au}, {"att", w.att}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.va = j.value("va", w.va);
  w.expr = j.value("expr", w.expr);
  w.au = j.value("au", w.au);
  w.att = j.value("att", w.att);
}

void to_json(nlohmann::json& j, const VaRange& r) {
  j = nlohmann::json{{"lo", r.lo}, {"hi", r.hi}};
}

void from_json(const nlohmann::json& j, VaRange& r) {
  r.lo = j.value("lo", r.lo);
  r.hi = j.value("hi", r.hi);
}

// ------------------------------------------------------------ TrainConfig

void TrainConfig::validate() const {
  if (batch_size < 2) {
    throw ConfigError("batch_size must be at least 2 (batch statistics)");
  }
  if (!(lr_stage1 > 0.0) || !std::isfinite(lr_stage1) || !(lr_stage2 > 0.0) ||
      !std::isfinite(lr_stage2)) {
    throw ConfigError("learning rates must be positive finite numbers");
  }
  weights.validate();
  va_range.validate();
  model.validate();
  for (double g : threshold_grid) {
    if (!(g > 0.0 && g < 1.0)) {
      throw ConfigError("threshold grid values must lie in (0,1)");
    }
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["batch_size"] = batch_size;
  j["stage1_epochs"] = stage1_epochs;
  j["stage2_epochs"] = stage2_epochs;
  j["lr_stage1"] = lr_stage1;
  j["lr_stage2"] = lr_stage2;
  j["weights"] = weights;
  j["threshold_grid"] = threshold_grid;
  j["train_dir"] = train_dir;
  j["val_dir"] = val_dir;
  j["mode"] = to_string(mode);
  j["image_size"] = model.input_size;
  j["model"] = model;
  j["va_range"] = va_range;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("bad config JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.stage1_epochs = j.value("stage1_epochs", cfg.stage1_epochs);
    cfg.stage2_epochs = j.value("stage2_epochs", cfg.stage2_epochs);
    cfg.lr_stage1 = j.value("lr_stage1", cfg.lr_stage1);
    cfg.lr_stage2 = j.value("lr_stage2", cfg.lr_stage2);
    if (j.contains("weights")) cfg.weights = j["weights"].get<LossWeights>();
    cfg.threshold_grid =
        j.value("threshold_grid", cfg.threshold_grid);
    cfg.train_dir = j.value("train_dir", cfg.train_dir);
    cfg.val_dir = j.value("val_dir", cfg.val_dir);
    if (j.contains("mode")) {
      cfg.mode = train_mode_from_string(j["mode"].get<std::string>());
    }
    if (j.contains("model")) cfg.model = j["model"].get<ModelConfig>();
    // Top-level shorthand; wins over any input_size nested inside "model".
    if (j.contains("image_size")) {
      cfg.model.input_size = j["image_size"].get<std::size_t>();
    }
    if (j.contains("va_range")) cfg.va_range = j["va_range"].get<VaRange>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------- AdamOptimizer

AdamOptimizer::AdamOptimizer(ParamList params, double lr)
    : params_(std::move(params)), lr_(lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ContractError("optimizer learning rate must be positive");
  }
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::size_t n = params_[i]->value.numel();
    slots_[i].m.assign(n, 0.0);
    slots_[i].v.assign(n, 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (Parameter* p : params_) p->value.zero_grad();
}

void AdamOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (p->frozen) continue;
    Slot& slot = slots_[i];
    auto& vals = p->value.values();
    const auto& g = p->value.grad();
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(slot.t));
    for (std::size_t k = 0; k < vals.size(); ++k) {
      slot.m[k] = kBeta1 * slot.m[k] + (1.0 - kBeta1) * g[k];
      slot.v[k] = kBeta2 * slot.v[k] + (1.0 - kBeta2) * g[k] * g[k];
      const double m_hat = slot.m[k] / bc1;
      const double v_hat = slot.v[k] / bc2;
      vals[k] -= lr_ * m_hat / (std::sqrt(v_hat) + kEps);
    }
  }
}

// ------------------------------------------------------------- evaluation

namespace {

int argmax_row(const std::vector<double>& flat, std::size_t row,
               std::size_t width) {
  int best = 0;
  double best_value = flat[row * width];
  for (std::size_t j = 1; j < width; ++j) {
    if (flat[row * width + j] > best_value) {
      best_value = flat[row * width + j];
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

MetricReport compute_report(std::span<const double> va_pred,
                            std::span<const double> va_true,
                            std::span<const int> expr_pred,
                            std::span<const int> expr_true,
                            std::span<const double> au_probs,
                            std::span<const int> au_true,
                            const ThresholdSet& thresholds) {
  if (va_pred.size() != va_true.size() || va_pred.empty() ||
      va_pred.size() % 2 != 0) {
    throw ContractError("compute_report needs matching [N,2] va arrays");
  }
  const std::size_t n = va_pred.size() / 2;
  if (expr_pred.size() != n || expr_true.size() != n ||
      au_probs.size() != n * kNumAus || au_true.size() != n * kNumAus) {
    throw ContractError("compute_report arrays disagree on sample count");
  }
  std::vector<double> pv(n), tv(n), pa(n), ta(n);
  for (std::size_t i = 0; i < n; ++i) {
    pv[i] = va_pred[2 * i];
    pa[i] = va_pred[2 * i + 1];
    tv[i] = va_true[2 * i];
    ta[i] = va_true[2 * i + 1];
  }
  MetricReport report;
  report.ccc_v = concordance(pv, tv);
  report.ccc_a = concordance(pa, ta);
  report.ccc_va = (report.ccc_v + report.ccc_a) / 2.0;
  report.f1_expr = macro_f1_expr(expr_pred, expr_true, &report.per_class_f1);
  report.f1_au =
      macro_f1_au(au_probs, au_true, thresholds.values, &report.per_au_f1);
  report.p = p_score(report.ccc_v, report.ccc_a, report.f1_expr,
                     report.f1_au);
  report.thresholds_used = thresholds.values;
  return report;
}

MetricReport evaluate(Model& model, std::span<const Sample> samples,
                      const ThresholdSet& thresholds,
                      std::size_t batch_size) {
  if (samples.empty()) throw ContractError("evaluate needs samples");
  model.set_training(false);
  std::vector<double> va_pred, va_true, au_probs;
  std::vector<int> expr_pred, expr_true, au_true;
  for (const Batch& batch : make_eval_batches(samples, batch_size)) {
    ModelOutput out = model.forward(batch.images);
    const std::size_t b = batch.images.dim(0);
    const auto& vp = out.va.values();
    const auto& vt = batch.targets.va.values();
    va_pred.insert(va_pred.end(), vp.begin(), vp.end());
    va_true.insert(va_true.end(), vt.begin(), vt.end());
    const auto& logits = out.expr_logits.values();
    for (std::size_t i = 0; i < b; ++i) {
      expr_pred.push_back(argmax_row(logits, i, kNumExpressions));
      expr_true.push_back(batch.targets.expr[i]);
    }
    const Tensor au_sig = sigmoid(out.au_logits);
    au_probs.insert(au_probs.end(), au_sig.values().begin(),
                    au_sig.values().end());
    for (double t : batch.targets.au.values()) {
      au_true.push_back(static_cast<int>(t));
    }
  }
  return compute_report(va_pred, va_true, expr_pred, expr_true, au_probs,
                        au_true, thresholds);
}

void collect_au_probs(Model& model, std::span<const Sample> samples,
                      std::size_t batch_size, std::vector<double>& probs,
                      std::vector<int>& truth) {
  if (samples.empty()) throw ContractError("collect_au_probs needs samples");
  model.set_training(false);
  probs.clear();
  truth.clear();
  for (const Batch& batch : make_eval_batches(samples, batch_size)) {
    ModelOutput out = model.forward(batch.images);
    const Tensor au_sig = sigmoid(out.au_logits);
    probs.insert(probs.end(), au_sig.values().begin(),
                 au_sig.values().end());
    for (double t : batch.targets.au.values()) {
      truth.push_back(static_cast<int>(t));
    }
  }
}

// ----------------------------------------------------------------- logs

std::string TrainResult::logs_to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochLog& log : logs) {
    nlohmann::json j;
    j["stage"] = log.stage;
    j["epoch"] = log.epoch;
    j["loss_total"] = log.loss_total;
    j["loss_va"] = log.loss_va;
    j["loss_expr"] = log.loss_expr;
    j["loss_au"] = log.loss_au;
    j["loss_att"] = log.loss_att;
    j["val_p"] = log.val.p;
    j["val_ccc_va"] = log.val.ccc_va;
    j["val_f1_expr"] = log.val.f1_expr;
    j["val_f1_au"] = log.val.f1_au;
    j["seconds"] = log.seconds;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

// --------------------------------------------------------------- Trainer

namespace {

std::vector<Sample> curate_samples(std::vector<Sample> in,
                                   const VaRange& range,
                                   CurationReport& report) {
  report = CurationReport{};
  report.total_in = in.size();
  std::vector<Sample> kept;
  kept.reserve(in.size());
  for (auto& sample : in) {
    switch (drop_reason(sample.record, range)) {
      case DropReason::kNone:
        kept.push_back(std::move(sample));
        ++report.kept;
        break;
      case DropReason::kVa:
        ++report.invalid_va;
        ++report.dropped;
        break;
      case DropReason::kExpr:
        ++report.invalid_expr;
        ++report.dropped;
        break;
      case DropReason::kAu:
        ++report.invalid_au;
        ++report.dropped;
        break;
    }
  }
  return kept;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config)
    : Trainer(
          config,
          [&config]() {
            if (config.train_dir.empty()) {
              throw ConfigError("train_dir is required");
            }
            return load_dataset(config.train_dir);
          }(),
          config.val_dir.empty() ? std::vector<Sample>{}
                                 : load_dataset(config.val_dir)) {}

Trainer::Trainer(const TrainConfig& config, std::vector<Sample> train_samples,
                 std::vector<Sample> val_samples)
    : cfg_([&config]() {
        config.validate();
        return config;
      }()),
      model_(cfg_.model, cfg_.seed) {
  train_ = curate_samples(std::move(train_samples), cfg_.va_range,
                          train_curation_);
  val_ = curate_samples(std::move(val_samples), cfg_.va_range, val_curation_);
  if (train_.empty()) {
    throw DataError("no training samples survive curation");
  }
}

void Trainer::apply_freeze(int stage) {
  ParamGroups groups = model_.groups();
  const bool freeze_trunk = stage == 1;
  for (auto* bucket : {&groups.backbone, &groups.dda, &groups.gdconv}) {
    for (Parameter* p : *bucket) p->frozen = freeze_trunk;
  }
  const char* selected = nullptr;
  switch (cfg_.mode) {
    case TrainMode::kMultitask: selected = nullptr; break;
    case TrainMode::kVa: selected = "head_va."; break;
    case TrainMode::kExpr: selected = "head_expr."; break;
    case TrainMode::kAu: selected = "head_au."; break;
  }
  for (Parameter* p : groups.heads) {
    p->frozen =
        selected != nullptr && p->name.rfind(selected, 0) != 0;
  }
}

EpochLog Trainer::train_epoch(int stage, std::size_t global_epoch,
                              AdamOptimizer& optimizer) {
  model_.set_training(true);
  const std::vector<Batch> batches = make_batches(
      train_, cfg_.batch_size, mix_seed(cfg_.seed, global_epoch),
      /*shuffle=*/true);
  if (batches.empty()) {
    throw DataError("training set smaller than the minimum batch of 2");
  }
  EpochLog log;
  log.stage = stage;
  log.epoch = global_epoch;
  for (const Batch& batch : batches) {
    optimizer.zero_grad();
    Tape tape;
    ModelOutput out = model_.forward(batch.images);
    Tensor loss;
    switch (cfg_.mode) {
      case TrainMode::kMultitask: {
        MultitaskLoss ml =
            multitask_loss(out, batch.targets, cfg_.weights, stage);
        loss = ml.total;
        log.loss_va += ml.va;
        log.loss_expr += ml.expr;
        log.loss_au += ml.au;
        log.loss_att += ml.att;
        break;
      }
      case TrainMode::kVa:
        loss = ccc_loss(out.va, batch.targets.va);
        log.loss_va += loss.value();
        break;
      case TrainMode::kExpr:
        loss = cross_entropy(out.expr_logits, batch.targets.expr);
        log.loss_expr += loss.value();
        break;
      case TrainMode::kAu:
        loss = binary_cross_entropy(out.au_logits, batch.targets.au);
        log.loss_au += loss.value();
        break;
    }
    if (!std::isfinite(loss.value())) {
      throw NumericError("loss diverged at stage " + std::to_string(stage) +
                         " epoch " + std::to_string(global_epoch));
    }
    log.loss_total += loss.value();
    tape.backward(loss);
    optimizer.step();
  }
  const double inv = 1.0 / static_cast<double>(batches.size());
  log.loss_total *= inv;
  log.loss_va *= inv;
  log.loss_expr *= inv;
  log.loss_au *= inv;
  log.loss_att *= inv;
  return log;
}

TrainResult Trainer::run() {
  TrainResult result;
  const std::span<const Sample> eval_set =
      val_.empty() ? std::span<const Sample>(train_)
                   : std::span<const Sample>(val_);
  const ThresholdSet default_thresholds;
  std::size_t global_epoch = 0;
  double best_p = -std::numeric_limits<double>::infinity();
  bool have_best = false;

  const auto run_stage = [&](int stage, std::size_t epochs, double lr) {
    if (epochs == 0) return;
    apply_freeze(stage);
    AdamOptimizer optimizer(model_.parameters(), lr);
    for (std::size_t e = 0; e < epochs; ++e) {
      ++global_epoch;
      const auto started = std::chrono::steady_clock::now();
      EpochLog log = train_epoch(stage, global_epoch, optimizer);
      log.val =
          evaluate(model_, eval_set, default_thresholds, cfg_.batch_size);
      log.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - started)
                        .count();
      if (!have_best || log.val.p > best_p) {
        have_best = true;
        best_p = log.val.p;
        result.best_state = model_.state();
        result.best_report = log.val;
        result.best_epoch = global_epoch;
      }
      result.logs.push_back(std::move(log));
    }
  };
  run_stage(1, cfg_.stage1_epochs, cfg_.lr_stage1);
  run_stage(2, cfg_.stage2_epochs, cfg_.lr_stage2);

  if (!have_best) {
    result.best_report =
        evaluate(model_, eval_set, default_thresholds, cfg_.batch_size);
    result.best_state = model_.state();
    result.best_epoch = 0;
  }
  return result;
}

}  // namespace affect
