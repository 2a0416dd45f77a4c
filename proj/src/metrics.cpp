#include "affect/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "affect/errors.hpp"

namespace affect {

double binary_f1(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw ContractError("binary_f1 needs equal-length sequences");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != 0 && pred[i] != 1) {
      throw ContractError("binary_f1 predictions must be 0 or 1");
    }
    if (truth[i] != 0 && truth[i] != 1) {
      throw ContractError("binary_f1 truth must be 0 or 1");
    }
    if (pred[i] == 1 && truth[i] == 1) ++tp;
    if (pred[i] == 1 && truth[i] == 0) ++fp;
    if (pred[i] == 0 && truth[i] == 1) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double macro_f1_expr(std::span<const int> pred, std::span<const int> truth,
                     std::array<double, kNumExpressions>* per_class) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw ContractError("macro_f1_expr needs equal-length nonempty labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int v : {pred[i], truth[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= kNumExpressions) {
        throw ContractError("expression label " + std::to_string(v) +
                            " outside [0," + std::to_string(kNumExpressions) +
                            ")");
      }
    }
  }
  double total = 0.0;
  std::vector<int> bp(pred.size()), bt(pred.size());
  for (std::size_t cls = 0; cls < kNumExpressions; ++cls) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      bp[i] = pred[i] == static_cast<int>(cls) ? 1 : 0;
      bt[i] = truth[i] == static_cast<int>(cls) ? 1 : 0;
    }
    const double f1 = binary_f1(bp, bt);
    if (per_class) (*per_class)[cls] = f1;
    total += f1;
  }
  return total / static_cast<double>(kNumExpressions);
}

double macro_f1_au(std::span<const double> probs, std::span<const int> truth,
                   std::span<const double> thresholds,
                   std::array<double, kNumAus>* per_au) {
  if (thresholds.size() != kNumAus) {
    throw ContractError("expected one threshold per action unit");
  }
  if (probs.size() != truth.size() || probs.empty() ||
      probs.size() % kNumAus != 0) {
    throw ContractError("macro_f1_au needs matching [N," +
                        std::to_string(kNumAus) + "] probs and truth");
  }
  const std::size_t rows = probs.size() / kNumAus;
  double total = 0.0;
  std::vector<int> bp(rows), bt(rows);
  for (std::size_t unit = 0; unit < kNumAus; ++unit) {
    for (std::size_t i = 0; i < rows; ++i) {
      bp[i] = probs[i * kNumAus + unit] >= thresholds[unit] ? 1 : 0;
      bt[i] = truth[i * kNumAus + unit];
    }
    const double f1 = binary_f1(bp, bt);
    if (per_au) (*per_au)[unit] = f1;
    total += f1;
  }
  return total / static_cast<double>(kNumAus);
}

double p_score(double ccc_v, double ccc_a, double f1_expr, double f1_au) {
  return (ccc_v + ccc_a) / 2.0 + f1_expr + f1_au;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["ccc_v"] = ccc_v;
  j["ccc_a"] = ccc_a;
  j["ccc_va"] = ccc_va;
  j["f1_expr"] = f1_expr;
  j["f1_au"] = f1_au;
  j["p"] = p;
  j["per_class_f1"] = per_class_f1;
  j["per_au_f1"] = per_au_f1;
  j["thresholds_used"] = thresholds_used;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("bad metric report JSON: ") + e.what());
  }
  MetricReport r;
  try {
    r.ccc_v = j.at("ccc_v").get<double>();
    r.ccc_a = j.at("ccc_a").get<double>();
    r.ccc_va = j.at("ccc_va").get<double>();
    r.f1_expr = j.at("f1_expr").get<double>();
    r.f1_au = j.at("f1_au").get<double>();
    r.p = j.at("p").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::array<double, kNumExpressions>>();
    r.per_au_f1 = j.at("per_au_f1").get<std::array<double, kNumAus>>();
    r.thresholds_used = j.at("thresholds_used").get<std::array<double, kNumAus>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metric report fields: ") + e.what());
  }
  return r;
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-14s %8.4f\n", "ccc_valence", ccc_v);
  os << line;
  std::snprintf(line, sizeof(line), "%-14s %8.4f\n", "ccc_arousal", ccc_a);
  os << line;
  std::snprintf(line, sizeof(line), "%-14s %8.4f\n", "ccc_mean", ccc_va);
  os << line;
  std::snprintf(line, sizeof(line), "%-14s %8.4f\n", "f1_expression", f1_expr);
  os << line;
  std::snprintf(line, sizeof(line), "%-14s %8.4f\n", "f1_action_unit", f1_au);
  os << line;
  std::snprintf(line, sizeof(line), "%-14s %8.4f\n", "p_score", p);
  os << line;
  for (std::size_t i = 0; i < kNumExpressions; ++i) {
    std::snprintf(line, sizeof(line), "  f1[%-9s] %8.4f\n",
                  kExpressionNames[i], per_class_f1[i]);
    os << line;
  }
  for (std::size_t i = 0; i < kNumAus; ++i) {
    std::snprintf(line, sizeof(line), "  f1[%-4s] %8.4f  thr %.2f\n",
                  kAuNames[i], per_au_f1[i], thresholds_used[i]);
    os << line;
  }
  return os.str();
}

bool MetricReport::identical(const MetricReport& other) const {
  return ccc_v == other.ccc_v && ccc_a == other.ccc_a &&
         ccc_va == other.ccc_va && f1_expr == other.f1_expr &&
         f1_au == other.f1_au && p == other.p &&
         per_class_f1 == other.per_class_f1 &&
         per_au_f1 == other.per_au_f1 &&
         thresholds_used == other.thresholds_used;
}

}  // namespace affect
