#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "affect/labels.hpp"

namespace affect {

/// F1 of the positive class for 0/1 sequences. Returns 0 when the
/// denominator 2*TP + FP + FN is zero (no positives anywhere).
double binary_f1(std::span<const int> pred, std::span<const int> truth);

/// Unweighted mean of one-vs-rest F1 over the expression classes. Labels
/// must lie in [0,kNumExpressions). per_class, when given, receives the
/// individual F1 values.
double macro_f1_expr(std::span<const int> pred, std::span<const int> truth,
                     std::array<double, kNumExpressions>* per_class = nullptr);

/// Unweighted mean of per-unit F1 after thresholding probabilities row by
/// row: active iff prob >= threshold. probs and truth are [N,kNumAus]
/// row-major; thresholds has one entry per unit.
double macro_f1_au(std::span<const double> probs, std::span<const int> truth,
                   std::span<const double> thresholds,
                   std::array<double, kNumAus>* per_au = nullptr);

/// Challenge score: mean of the two concordance values plus both macro F1
/// scores, each term already averaged over its own classes.
double p_score(double ccc_v, double ccc_a, double f1_expr, double f1_au);

struct MetricReport {
  double ccc_v = 0.0;
  double ccc_a = 0.0;
  double ccc_va = 0.0;  // mean of the two
  double f1_expr = 0.0;
  double f1_au = 0.0;
  double p = 0.0;
  std::array<double, kNumExpressions> per_class_f1 = {};
  std::array<double, kNumAus> per_au_f1 = {};
  std::array<double, kNumAus> thresholds_used = {};

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
  std::string to_table() const;

  /// Exact equality of every field, for reproducibility checks.
  bool identical(const MetricReport& other) const;
};

}  // namespace affect
