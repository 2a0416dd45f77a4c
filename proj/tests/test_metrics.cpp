#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "affect/errors.hpp"
#include "affect/metrics.hpp"
#include "affect/rng.hpp"
#include "affect/thresholds.hpp"
#include "doctest.h"

using namespace affect;

TEST_CASE("binary f1 values") {
  const std::vector<int> pred{1, 0, 1, 0};
  const std::vector<int> truth{1, 1, 0, 0};
  CHECK(binary_f1(pred, truth) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(binary_f1(truth, truth) == 1.0);
  const std::vector<int> none{0, 0, 0, 0};
  CHECK(binary_f1(none, none) == 0.0);
  CHECK_THROWS_AS(binary_f1(pred, std::vector<int>{1}), ContractError);
}

TEST_CASE("expression macro f1") {
  const std::vector<int> truth{0, 0, 1, 2};
  const std::vector<int> pred{0, 1, 1, 2};
  std::array<double, kNumExpressions> per_class{};
  const double macro = macro_f1_expr(pred, truth, &per_class);
  CHECK(macro == doctest::Approx(7.0 / 24.0).epsilon(1e-12));
  CHECK(per_class[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(per_class[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(per_class[2] == 1.0);
  for (std::size_t k = 3; k < kNumExpressions; ++k) {
    CHECK(per_class[k] == 0.0);
  }
  CHECK(macro_f1_expr(truth, truth) ==
        doctest::Approx(3.0 / 8.0).epsilon(1e-12));
  CHECK_THROWS_AS(macro_f1_expr(std::vector<int>{0, 8}, std::vector<int>{0, 0}),
                  ContractError);
}

TEST_CASE("expression macro f1 survives relabeling") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> truth(40), pred(40);
    for (auto& v : truth) v = static_cast<int>(rng.below(kNumExpressions));
    for (auto& v : pred) v = static_cast<int>(rng.below(kNumExpressions));
    std::vector<int> perm(kNumExpressions);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> truth2(40), pred2(40);
    for (int i = 0; i < 40; ++i) {
      truth2[i] = perm[truth[i]];
      pred2[i] = perm[pred[i]];
    }
    CHECK(macro_f1_expr(pred, truth) ==
          doctest::Approx(macro_f1_expr(pred2, truth2)).epsilon(1e-12));
  }
}

namespace {

// Reference implementation: threshold each column, then average binary F1.
double oracle_macro_au(std::span<const double> probs,
                       std::span<const int> truth,
                       std::span<const double> thresholds) {
  const std::size_t n = probs.size() / kNumAus;
  double sum = 0.0;
  for (std::size_t u = 0; u < kNumAus; ++u) {
    std::vector<int> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = probs[i * kNumAus + u] >= thresholds[u] ? 1 : 0;
      gold[i] = truth[i * kNumAus + u];
    }
    sum += binary_f1(pred, gold);
  }
  return sum / static_cast<double>(kNumAus);
}

}  // namespace

TEST_CASE("action unit macro f1 matches the per-column reference") {
  Rng rng(23);
  const std::vector<double> grid = default_threshold_grid();
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<double> probs(n * kNumAus);
    std::vector<int> truth(n * kNumAus);
    std::vector<double> thresholds(kNumAus);
    for (auto& v : probs) v = rng.uniform();
    for (auto& v : truth) v = rng.uniform() < 0.4 ? 1 : 0;
    for (auto& v : thresholds) v = grid[rng.below(grid.size())];

    std::array<double, kNumAus> per_au{};
    const double macro = macro_f1_au(probs, truth, thresholds, &per_au);
    CHECK(macro ==
          doctest::Approx(oracle_macro_au(probs, truth, thresholds))
              .epsilon(1e-12));
    double mean = 0.0;
    for (double f : per_au) mean += f;
    CHECK(macro == doctest::Approx(mean / kNumAus).epsilon(1e-12));
  }
}

TEST_CASE("threshold comparison is inclusive") {
  // One unit's probability sits exactly on the cutoff; it must count as
  // active. Remaining columns are padded with confident negatives.
  std::vector<double> probs(2 * kNumAus, 0.0);
  std::vector<int> truth(2 * kNumAus, 0);
  probs[0] = 0.5;   // row 0, unit 0: exactly at threshold
  probs[kNumAus] = 0.3;
  truth[0] = 1;
  std::vector<double> thresholds(kNumAus, 0.5);
  std::array<double, kNumAus> per_au{};
  macro_f1_au(probs, truth, thresholds, &per_au);
  CHECK(per_au[0] == 1.0);  // predicted active, truly active

  CHECK_THROWS_AS(
      macro_f1_au(probs, truth, std::vector<double>(kNumAus - 1, 0.5)),
      ContractError);
  CHECK_THROWS_AS(
      macro_f1_au(std::vector<double>{0.5}, std::vector<int>{1},
                  thresholds),
      ContractError);
}

TEST_CASE("challenge score") {
  CHECK(p_score(1, 1, 1, 1) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(p_score(0, 0, 0, 0) == 0.0);
  CHECK(p_score(0.6, 0.5, 0.25, 0.47) ==
        doctest::Approx(1.27).epsilon(1e-12));
  // Monotone in every argument.
  const double base = p_score(0.2, 0.3, 0.4, 0.5);
  CHECK(p_score(0.3, 0.3, 0.4, 0.5) > base);
  CHECK(p_score(0.2, 0.4, 0.4, 0.5) > base);
  CHECK(p_score(0.2, 0.3, 0.5, 0.5) > base);
  CHECK(p_score(0.2, 0.3, 0.4, 0.6) > base);
}

TEST_CASE("metric report round trips through json") {
  MetricReport r;
  r.ccc_v = 0.61;
  r.ccc_a = 0.52;
  r.ccc_va = (r.ccc_v + r.ccc_a) / 2;
  r.f1_expr = 0.31;
  r.f1_au = 0.44;
  r.p = p_score(r.ccc_v, r.ccc_a, r.f1_expr, r.f1_au);
  for (std::size_t k = 0; k < kNumExpressions; ++k) {
    r.per_class_f1[k] = 0.1 * static_cast<double>(k);
  }
  for (std::size_t u = 0; u < kNumAus; ++u) {
    r.per_au_f1[u] = 0.05 * static_cast<double>(u);
    r.thresholds_used[u] = 0.35;
  }

  const MetricReport back = MetricReport::from_json(r.to_json());
  CHECK(back.identical(r));

  MetricReport other = r;
  other.per_au_f1[3] += 1e-15;
  CHECK_FALSE(other.identical(r));

  CHECK_THROWS_AS(MetricReport::from_json("{\"ccc_v\": 0.5}"), ParseError);
  CHECK_THROWS_AS(MetricReport::from_json("not json"), ParseError);

  const std::string table = r.to_table();
  CHECK(table.find("p_score") != std::string::npos);
  CHECK(table.find("ccc_valence") != std::string::npos);
  CHECK(table.find("AU12") != std::string::npos);
  CHECK(table.find("happiness") != std::string::npos);
}
