#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "affect/labels.hpp"

namespace affect {

/// One activation cutoff per action unit. A probability counts as active
/// when it is greater than or equal to the cutoff.
struct ThresholdSet {
  std::array<double, kNumAus> values;

  ThresholdSet() { values.fill(0.5); }

  std::string to_json() const;  // {"AU1": 0.45, ...}
  static ThresholdSet from_json(const std::string& text);
};

/// 0.05, 0.10, ..., 0.95.
std::vector<double> default_threshold_grid();

struct ThresholdResult {
  ThresholdSet thresholds;
  double f1_before = 0.0;  // macro F1 with every cutoff at 0.5
  double f1_after = 0.0;   // macro F1 with the selected cutoffs
};

/// Independent exhaustive search per unit over the grid, maximizing that
/// unit's F1. Ties keep the lowest cutoff (the grid is scanned ascending
/// and replaced only on strict improvement). probs and truth are
/// [N,kNumAus] row-major with N >= 1.
ThresholdResult optimize_thresholds(std::span<const double> probs,
                                    std::span<const int> truth,
                                    std::span<const double> grid);

}  // namespace affect
