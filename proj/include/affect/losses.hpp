#pragma once

#include <span>
#include <vector>

#include "affect/model.hpp"
#include "affect/tensor.hpp"

namespace affect {

/// Concordance correlation between two sequences, population moments:
///   2*cov / (var_x + var_y + (mean_x - mean_y)^2 + 1e-8).
/// Plain double version used for reporting; the loss below mirrors it with
/// differentiable ops.
double concordance(std::span<const double> x, std::span<const double> y);

/// Mean over output dims of (1 - concordance). pred and target are [B,D]
/// with B >= 2; typically D = 2 (valence, arousal).
Tensor ccc_loss(const Tensor& pred, const Tensor& target);

/// Mean over rows of -log softmax(logits)[target]. Stabilized by shifting
/// each row by its max before exponentiation; the shift is a constant, not
/// part of the gradient graph.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Mean over all entries of softplus(z) - z*y, the overflow-safe form of
/// binary cross-entropy on logits. Targets must be exactly 0 or 1.
Tensor binary_cross_entropy(const Tensor& logits, const Tensor& targets);

/// Sum over unordered head pairs of mean squared map difference, scaled by
/// 1/(num_pairs + 1e-8). Zero (constant) for a single head.
Tensor attention_consistency(const std::vector<Tensor>& maps);

struct LossWeights {
  double va = 1.0;
  double expr = 1.0;
  double au = 1.0;
  double att = 0.1;

  void validate() const;  // all weights must be >= 0
};

/// Ground truth for one batch.
struct BatchTargets {
  Tensor va;               // [B,2]
  std::vector<int> expr;   // B values in [0,kNumExpressions)
  Tensor au;               // [B,kNumAus], entries 0/1
};

struct MultitaskLoss {
  Tensor total;
  double va = 0.0;
  double expr = 0.0;
  double au = 0.0;
  double att = 0.0;
};

/// Weighted sum of the task losses. The attention term participates only
/// in stage 2; stage 1 trains with the attention modules frozen.
MultitaskLoss multitask_loss(const ModelOutput& out,
                             const BatchTargets& targets,
                             const LossWeights& weights, int stage);

}  // namespace affect
