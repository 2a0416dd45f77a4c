#include "affect/thresholds.hpp"

#include <algorithm>

#include "json.hpp"

#include "affect/errors.hpp"
#include "affect/metrics.hpp"

namespace affect {

std::string ThresholdSet::to_json() const {
  nlohmann::json j;
  for (std::size_t i = 0; i < kNumAus; ++i) j[kAuNames[i]] = values[i];
  return j.dump(2);
}

ThresholdSet ThresholdSet::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("bad threshold JSON: ") + e.what());
  }
  ThresholdSet set;
  for (std::size_t i = 0; i < kNumAus; ++i) {
    if (!j.contains(kAuNames[i]) || !j[kAuNames[i]].is_number()) {
      throw ParseError(std::string("threshold JSON missing numeric '") +
                       kAuNames[i] + "'");
    }
    const double v = j[kAuNames[i]].get<double>();
    if (!(v > 0.0 && v < 1.0)) {
      throw ParseError(std::string("threshold for ") + kAuNames[i] +
                       " must lie in (0,1)");
    }
    set.values[i] = v;
  }
  return set;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  grid.reserve(19);
  for (int i = 1; i <= 19; ++i) grid.push_back(i * 0.05);
  return grid;
}

ThresholdResult optimize_thresholds(std::span<const double> probs,
                                    std::span<const int> truth,
                                    std::span<const double> grid) {
  if (probs.size() != truth.size() || probs.empty() ||
      probs.size() % kNumAus != 0) {
    throw ContractError("optimize_thresholds needs matching [N," +
                        std::to_string(kNumAus) + "] probs and truth");
  }
  if (grid.empty()) throw ContractError("threshold grid must not be empty");
  for (double g : grid) {
    if (!(g > 0.0 && g < 1.0)) {
      throw ContractError("threshold grid values must lie in (0,1)");
    }
  }
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ContractError("probabilities must lie in [0,1]");
    }
  }
  // Ascending scan plus strict improvement keeps the lowest cutoff on ties,
  // whatever order the caller supplied.
  std::vector<double> ordered(grid.begin(), grid.end());
  std::sort(ordered.begin(), ordered.end());
  const std::size_t rows = probs.size() / kNumAus;
  ThresholdResult result;
  std::vector<int> bp(rows), bt(rows);
  for (std::size_t unit = 0; unit < kNumAus; ++unit) {
    for (std::size_t i = 0; i < rows; ++i) {
      bt[i] = truth[i * kNumAus + unit];
    }
    double best_f1 = -1.0;
    double best_thr = ordered[0];
    for (double thr : ordered) {
      for (std::size_t i = 0; i < rows; ++i) {
        bp[i] = probs[i * kNumAus + unit] >= thr ? 1 : 0;
      }
      const double f1 = binary_f1(bp, bt);
      if (f1 > best_f1) {
        best_f1 = f1;
        best_thr = thr;
      }
    }
    result.thresholds.values[unit] = best_thr;
  }
  ThresholdSet baseline;
  result.f1_before = macro_f1_au(probs, truth, baseline.values);
  result.f1_after = macro_f1_au(probs, truth, result.thresholds.values);
  return result;
}

}  // namespace affect
