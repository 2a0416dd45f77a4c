#include <cmath>
#include <vector>

#include "affect/errors.hpp"
#include "affect/losses.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace affect;
using affect::testutil::rand_tensor;

TEST_CASE("concordance values") {
  const std::vector<double> x{1, 2, 3};
  CHECK(concordance(x, x) == doctest::Approx(1.0).epsilon(1e-8));
  const std::vector<double> rev{3, 2, 1};
  CHECK(concordance(x, rev) == doctest::Approx(-1.0).epsilon(1e-8));
  // The stabilizing 1e-8 in the denominator nudges the exact ratio slightly.
  const std::vector<double> shifted{2, 3, 4};
  CHECK(concordance(x, shifted) == doctest::Approx(4.0 / 7.0).epsilon(1e-7));
  CHECK_THROWS_AS(concordance(x, std::vector<double>{1, 2}), ContractError);
  CHECK_THROWS_AS(
      concordance(std::vector<double>{}, std::vector<double>{}),
      ContractError);
}

TEST_CASE("concordance symmetry and shift penalty") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(16), y(16);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);
    CHECK(concordance(x, y) == concordance(y, x));
    std::vector<double> shifted = x;
    const double shift = rng.uniform(0.1, 2.0);
    for (auto& v : shifted) v += shift;
    CHECK(concordance(x, shifted) < 1.0);
  }
}

TEST_CASE("ccc loss values") {
  // Zero-mean columns, so negation is exact anti-correlation.
  Tensor t({3, 2}, {0.1, -0.2, 0.5, 0.3, -0.6, -0.1});
  CHECK(ccc_loss(t, t).value() == doctest::Approx(0.0).epsilon(1e-6));

  Tensor anti({3, 2}, {-0.1, 0.2, -0.5, -0.3, 0.6, 0.1});
  CHECK(ccc_loss(anti, t).value() == doctest::Approx(2.0).epsilon(1e-6));

  CHECK_THROWS_AS(ccc_loss(Tensor::zeros({1, 2}), Tensor::zeros({1, 2})),
                  ContractError);
  CHECK_THROWS_AS(ccc_loss(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})),
                  ShapeError);
}

TEST_CASE("ccc loss stays within its range") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = rand_tensor({8, 2}, rng, -1, 1, false);
    Tensor b = rand_tensor({8, 2}, rng, -1, 1, false);
    const double v = ccc_loss(a, b).value();
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
}

TEST_CASE("cross entropy values") {
  Tensor uniform = Tensor::zeros({3, 8});
  const int targets[] = {0, 4, 7};
  CHECK(std::abs(cross_entropy(uniform, targets).value() - std::log(8.0)) <=
        1e-9);

  Tensor logits({1, 8}, {2, 0, 0, 0, 0, 0, 0, 0});
  const int t0[] = {0};
  const int t1[] = {1};
  const double l0 = cross_entropy(logits, t0).value();
  const double l1 = cross_entropy(logits, t1).value();
  CHECK(l1 - l0 == doctest::Approx(2.0).epsilon(1e-12));

  Tensor huge({1, 8}, {1000, 0, 0, 0, 0, 0, 0, 0});
  const double stable = cross_entropy(huge, t0).value();
  CHECK(std::isfinite(stable));
  CHECK(stable == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cross_entropy(huge, t1).value() ==
        doctest::Approx(1000.0).epsilon(1e-12));

  const int bad[] = {8, 0, 0};
  CHECK_THROWS_AS(cross_entropy(uniform, bad), ContractError);
  const int short_targets[] = {0};
  CHECK_THROWS_AS(cross_entropy(uniform, short_targets), ShapeError);
}

TEST_CASE("binary cross entropy values") {
  Tensor zero({1, 1}, {0.0});
  Tensor one({1, 1}, {1.0});
  CHECK(std::abs(binary_cross_entropy(zero, one).value() - std::log(2.0)) <=
        1e-9);

  // Logit whose sigmoid is 0.9, positive target.
  Tensor z({1, 1}, {std::log(9.0)});
  CHECK(binary_cross_entropy(z, one).value() ==
        doctest::Approx(-std::log(0.9)).epsilon(1e-12));

  Tensor big({1, 1}, {50.0});
  const double v = binary_cross_entropy(big, one).value();
  CHECK(std::isfinite(v));
  CHECK(v <= 1e-21);

  Tensor soft({1, 1}, {0.5});
  CHECK_THROWS_AS(binary_cross_entropy(zero, soft), ContractError);
  CHECK_THROWS_AS(binary_cross_entropy(zero, Tensor::zeros({2, 1})),
                  ShapeError);
}

TEST_CASE("attention consistency values") {
  Tensor a({1, 1, 1, 1}, {0.0});
  Tensor b({1, 1, 1, 1}, {1.0});
  Tensor c({1, 1, 1, 1}, {2.0});

  CHECK(attention_consistency({a, a}).value() == 0.0);
  CHECK(attention_consistency({b}).value() == 0.0);
  CHECK(attention_consistency({a, b}).value() ==
        doctest::Approx(1.0 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(attention_consistency({a, b, c}).value() ==
        doctest::Approx(6.0 / (3.0 + 1e-8)).epsilon(1e-12));

  CHECK_THROWS_AS(attention_consistency({}), ContractError);
  CHECK_THROWS_AS(attention_consistency({a, Tensor::zeros({2, 1, 1, 1})}),
                  ShapeError);
}

TEST_CASE("attention consistency ignores head order") {
  Rng rng(7);
  Tensor a = rand_tensor({2, 3, 2, 2}, rng, 0, 1, false);
  Tensor b = rand_tensor({2, 3, 2, 2}, rng, 0, 1, false);
  Tensor c = rand_tensor({2, 3, 2, 2}, rng, 0, 1, false);
  CHECK(attention_consistency({a, b}).value() ==
        attention_consistency({b, a}).value());
  const double abc = attention_consistency({a, b, c}).value();
  const double cab = attention_consistency({c, a, b}).value();
  CHECK(abc == doctest::Approx(cab).epsilon(1e-14));
}

TEST_CASE("multitask loss composition") {
  Rng rng(9);
  ModelOutput out;
  out.va = affect::tanh(rand_tensor({4, 2}, rng, -1, 1, false));
  out.expr_logits = rand_tensor({4, kNumExpressions}, rng, -1, 1, false);
  out.au_logits = rand_tensor({4, kNumAus}, rng, -1, 1, false);
  out.attention_maps = {rand_tensor({4, 2, 2, 2}, rng, 0, 1, false),
                        rand_tensor({4, 2, 2, 2}, rng, 0, 1, false)};
  BatchTargets targets;
  targets.va = rand_tensor({4, 2}, rng, -1, 1, false);
  targets.expr = {0, 3, 5, 7};
  std::vector<double> au(4 * kNumAus);
  for (auto& v : au) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  targets.au = Tensor({4, kNumAus}, std::move(au));

  LossWeights weights;
  MultitaskLoss s1 = multitask_loss(out, targets, weights, 1);
  MultitaskLoss s2 = multitask_loss(out, targets, weights, 2);

  SUBCASE("stage one skips the attention term") {
    CHECK(s1.att == 0.0);
    CHECK(s2.att > 0.0);  // maps differ, so the penalty is live
    const double expected = s1.total.value() + weights.att * s2.att;
    CHECK(s2.total.value() == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("components recombine into the total") {
    const double sum = weights.va * s1.va + weights.expr * s1.expr +
                       weights.au * s1.au;
    CHECK(s1.total.value() == doctest::Approx(sum).epsilon(1e-12));
  }
  SUBCASE("zero weights zero the loss") {
    LossWeights off{0, 0, 0, 0};
    CHECK(multitask_loss(out, targets, off, 2).total.value() == 0.0);
  }
  SUBCASE("bad stage is rejected") {
    CHECK_THROWS_AS(multitask_loss(out, targets, weights, 3), ContractError);
    CHECK_THROWS_AS(multitask_loss(out, targets, weights, 0), ContractError);
  }
  SUBCASE("negative weights are rejected") {
    LossWeights bad;
    bad.expr = -0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("every loss passes a gradient check") {
  Rng rng(13);
  SUBCASE("ccc") {
    Tensor pred = rand_tensor({8, 2}, rng);
    Tensor target = rand_tensor({8, 2}, rng, -1, 1, false);
    std::vector<Tensor> params{pred};
    CHECK(grad_check([&] { return ccc_loss(pred, target); }, params) <= 1e-4);
  }
  SUBCASE("cross entropy") {
    Tensor logits = rand_tensor({8, kNumExpressions}, rng);
    const std::vector<int> targets{0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<Tensor> params{logits};
    CHECK(grad_check([&] { return cross_entropy(logits, targets); }, params) <=
          1e-4);
  }
  SUBCASE("binary cross entropy") {
    Tensor logits = rand_tensor({8, kNumAus}, rng);
    std::vector<double> targets(8 * kNumAus);
    for (auto& v : targets) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor y({8, kNumAus}, std::move(targets));
    std::vector<Tensor> params{logits};
    CHECK(grad_check([&] { return binary_cross_entropy(logits, y); },
                     params) <= 1e-4);
  }
  SUBCASE("attention consistency") {
    Tensor m0 = rand_tensor({2, 3, 2, 2}, rng, 0, 1);
    Tensor m1 = rand_tensor({2, 3, 2, 2}, rng, 0, 1);
    std::vector<Tensor> params{m0, m1};
    CHECK(grad_check([&] { return attention_consistency({m0, m1}); },
                     params) <= 1e-4);
  }
}
