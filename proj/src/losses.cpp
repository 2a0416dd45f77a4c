#include "affect/losses.hpp"

#include <algorithm>
#include <cmath>

#include "affect/errors.hpp"

namespace affect {

namespace {
constexpr double kStabilizer = 1e-8;
const std::vector<std::size_t> kBatchAxis = {0};
const std::vector<std::size_t> kClassAxis = {1};
}  // namespace

double concordance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) {
    throw ContractError("concordance needs two equal-length nonempty series");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= n;
  vy /= n;
  cov /= n;
  return 2.0 * cov / (vx + vy + (mx - my) * (mx - my) + kStabilizer);
}

Tensor ccc_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.defined() || !target.defined() || pred.rank() != 2 ||
      pred.shape() != target.shape()) {
    throw ShapeError("ccc_loss expects matching [B,D] tensors");
  }
  if (pred.dim(0) < 2) {
    throw ContractError("ccc_loss needs a batch of at least 2");
  }
  const std::size_t dims = pred.dim(1);
  Tensor mean_p = reduce_mean(pred, kBatchAxis, /*keepdims=*/true);
  Tensor mean_t = reduce_mean(target, kBatchAxis, /*keepdims=*/true);
  Tensor var_p = reduce_var(pred, kBatchAxis, /*keepdims=*/true);
  Tensor var_t = reduce_var(target, kBatchAxis, /*keepdims=*/true);
  Tensor cov = reduce_mean(mul(sub(pred, mean_p), sub(target, mean_t)),
                           kBatchAxis, /*keepdims=*/true);
  Tensor mean_gap = sub(mean_p, mean_t);
  Tensor denom = add_scalar(
      add(add(var_p, var_t), mul(mean_gap, mean_gap)), kStabilizer);
  Tensor ccc = div(mul_scalar(cov, 2.0), denom);  // [1,D]
  Tensor ones = Tensor::full({1, dims}, 1.0);
  return reduce_mean(sub(ones, ccc));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (!logits.defined() || logits.rank() != 2) {
    throw ShapeError("cross_entropy expects [B,K] logits");
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy got " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw ContractError("class label " + std::to_string(t) +
                          " outside [0," + std::to_string(classes) + ")");
    }
  }
  // Row max as a detached constant: shifting by it leaves the softmax (and
  // hence the gradient) unchanged while keeping exp() in range.
  std::vector<double> max_data(rows);
  const auto& lv = logits.values();
  for (std::size_t i = 0; i < rows; ++i) {
    double m = lv[i * classes];
    for (std::size_t j = 1; j < classes; ++j) {
      m = std::max(m, lv[i * classes + j]);
    }
    max_data[i] = m;
  }
  Tensor row_max({rows, 1}, std::move(max_data));
  Tensor shifted = sub(logits, row_max);
  Tensor sum_exp = reduce_sum(exp(shifted), kClassAxis, /*keepdims=*/true);
  Tensor lse = add(log(sum_exp), row_max);  // [B,1]
  Tensor picked = gather_rows(logits, targets);
  return reduce_mean(sub(reshape(lse, {rows}), picked));
}

Tensor binary_cross_entropy(const Tensor& logits, const Tensor& targets) {
  if (!logits.defined() || !targets.defined() ||
      logits.shape() != targets.shape()) {
    throw ShapeError("binary_cross_entropy expects matching shapes");
  }
  for (double t : targets.values()) {
    if (t != 0.0 && t != 1.0) {
      throw ContractError("binary targets must be exactly 0 or 1");
    }
  }
  return reduce_mean(sub(softplus(logits), mul(logits, targets)));
}

Tensor attention_consistency(const std::vector<Tensor>& maps) {
  if (maps.empty()) {
    throw ContractError("attention_consistency needs at least one map");
  }
  for (const auto& m : maps) {
    if (!m.defined() || m.shape() != maps[0].shape()) {
      throw ShapeError("attention maps must share one shape");
    }
  }
  if (maps.size() == 1) return Tensor::scalar(0.0);
  Tensor acc;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::size_t j = i + 1; j < maps.size(); ++j) {
      Tensor diff = sub(maps[i], maps[j]);
      Tensor term = reduce_mean(mul(diff, diff));
      acc = acc.defined() ? add(acc, term) : term;
      ++pairs;
    }
  }
  return mul_scalar(acc, 1.0 / (static_cast<double>(pairs) + kStabilizer));
}

void LossWeights::validate() const {
  if (va < 0 || expr < 0 || au < 0 || att < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

MultitaskLoss multitask_loss(const ModelOutput& out,
                             const BatchTargets& targets,
                             const LossWeights& weights, int stage) {
  if (stage != 1 && stage != 2) {
    throw ContractError("stage must be 1 or 2, got " + std::to_string(stage));
  }
  weights.validate();
  MultitaskLoss result;
  Tensor va_loss = ccc_loss(out.va, targets.va);
  Tensor expr_loss = cross_entropy(out.expr_logits, targets.expr);
  Tensor au_loss = binary_cross_entropy(out.au_logits, targets.au);
  result.va = va_loss.value();
  result.expr = expr_loss.value();
  result.au = au_loss.value();
  result.total = add(add(mul_scalar(va_loss, weights.va),
                         mul_scalar(expr_loss, weights.expr)),
                     mul_scalar(au_loss, weights.au));
  if (stage == 2) {
    Tensor att_loss = attention_consistency(out.attention_maps);
    result.att = att_loss.value();
    result.total = add(result.total, mul_scalar(att_loss, weights.att));
  }
  return result;
}

}  // namespace affect
