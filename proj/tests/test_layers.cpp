#include <cmath>
#include <vector>

#include "affect/errors.hpp"
#include "affect/layers.hpp"
#include "affect/tensor.hpp"
#include "affect/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace affect;
using affect::testutil::rand_tensor;

namespace {

void fill(Tensor& t, const std::vector<double>& values) {
  REQUIRE(t.numel() == values.size());
  t.values() = values;
}

}  // namespace

TEST_CASE("linear layer values") {
  Rng rng(1);
  Linear lin("lin", 2, 3, rng);
  fill(lin.weight.value, {1, 2, 3, 4, 5, 6});
  fill(lin.bias.value, {0, 0, 0});
  Tensor x({1, 2}, {1, 2});
  CHECK(lin.forward(x).values() == std::vector<double>{9, 12, 15});

  Linear id("id", 2, 2, rng);
  fill(id.weight.value, {1, 0, 0, 1});
  fill(id.bias.value, {0, 0});
  Tensor y({2, 2}, {3, -4, 5, 6});
  CHECK(id.forward(y).same_values(y));

  Linear bias_only("b", 2, 1, rng);
  fill(bias_only.weight.value, {0, 0});
  fill(bias_only.bias.value, {7});
  CHECK(bias_only.forward(y).values() == std::vector<double>{7, 7});

  CHECK_THROWS_AS(lin.forward(Tensor::zeros({1, 3})), ShapeError);
}

TEST_CASE("initialization contract") {
  Rng rng_a(9), rng_b(9);
  Linear a("a", 100, 4, rng_a);
  Linear b("a", 100, 4, rng_b);
  CHECK(a.weight.value.same_values(b.weight.value));
  for (double w : a.weight.value.values()) CHECK(std::abs(w) <= 0.1);
  for (double v : a.bias.value.values()) CHECK(v == 0.0);

  BatchNorm2d bn("bn", 5);
  CHECK(bn.gamma.value.values() == std::vector<double>(5, 1.0));
  CHECK(bn.beta.value.values() == std::vector<double>(5, 0.0));
  CHECK(bn.running_mean.value.values() == std::vector<double>(5, 0.0));
  CHECK(bn.running_var.value.values() == std::vector<double>(5, 1.0));

  PReLU act("act", 3);
  CHECK(act.slope.value.values() == std::vector<double>(3, 0.25));
}

TEST_CASE("batchnorm values") {
  BatchNorm2d bn("bn", 1);
  SUBCASE("constant input normalizes to zero") {
    Tensor x = Tensor::full({2, 1, 2, 2}, 3.25);
    Tensor y = bn.forward(x, /*training=*/true);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("two-point batch lands on +-1") {
    Tensor x({2, 1, 1, 1}, {1, 3});
    Tensor y = bn.forward(x, true);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.values()[0] == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("eval mode applies the affine transform of the running stats") {
    fill(bn.gamma.value, {2});
    fill(bn.beta.value, {1});
    Tensor x({1, 1, 2, 2}, {0.5, -0.5, 2, 0});
    Tensor y = bn.forward(x, /*training=*/false);
    for (std::size_t i = 0; i < 4; ++i) {
      const double expect = 2.0 * x.values()[i] / std::sqrt(1.0 + 1e-5) + 1.0;
      CHECK(y.values()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("batchnorm train-mode moments") {
  BatchNorm2d bn("bn", 3);
  Rng rng(12);
  // Large spread keeps sigma^2/(sigma^2+eps) within 1e-6 of one.
  Tensor x = rand_tensor({4, 3, 5, 5}, rng, -100.0, 100.0, false);
  Tensor y = bn.forward(x, true);
  const std::size_t per = 4 * 5 * 5;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = y.values()[n * 75 + c * 25 + i];
        sum += v;
        sq += v * v;
      }
    }
    const double mean = sum / static_cast<double>(per);
    const double var = sq / static_cast<double>(per) - mean * mean;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("batchnorm folds running statistics") {
  BatchNorm2d bn("bn", 1);
  Tensor x({2, 1, 1, 1}, {1, 3});  // batch mean 2, population var 1
  bn.forward(x, true);
  CHECK(bn.running_mean.value.values()[0] == doctest::Approx(0.2));
  CHECK(bn.running_var.value.values()[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("gdconv values") {
  Rng rng(4);
  GdConv gd("gd", 2, 3, 3, rng);
  Tensor x = rand_tensor({2, 2, 3, 3}, rng, -1, 1, false);

  SUBCASE("averaging kernel equals the spatial mean") {
    fill(gd.weight.value, std::vector<double>(2 * 9, 1.0 / 9.0));
    Tensor y = gd.forward(x);
    const std::size_t axes[] = {2, 3};
    Tensor mean = reduce_mean(x, axes, /*keepdims=*/true);
    REQUIRE(y.shape() == mean.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) {
      CHECK(std::abs(y.values()[i] - mean.values()[i]) <= 1e-12);
    }
  }
  SUBCASE("one-hot kernel picks the top-left pixel") {
    std::vector<double> w(2 * 9, 0.0);
    w[0] = 1.0;
    w[9] = 1.0;
    fill(gd.weight.value, w);
    Tensor y = gd.forward(x);
    CHECK(y.at({0, 0, 0, 0}) == x.at({0, 0, 0, 0}));
    CHECK(y.at({1, 1, 0, 0}) == x.at({1, 1, 0, 0}));
  }
  SUBCASE("spatial mismatch is rejected") {
    CHECK_THROWS_AS(gd.forward(Tensor::zeros({1, 2, 4, 4})), ShapeError);
  }
}

TEST_CASE("gdconv on a single pixel multiplies by the kernel") {
  Rng rng(6);
  GdConv gd("gd", 3, 1, 1, rng);
  Tensor x = rand_tensor({2, 3, 1, 1}, rng, -1, 1, false);
  Tensor y = gd.forward(x);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(y.at({n, c, 0, 0}) ==
            x.at({n, c, 0, 0}) * gd.weight.value.values()[c]);
    }
  }
}

TEST_CASE("every layer passes a gradient check") {
  Rng rng(31);
  const auto run = [&](auto&& forward, ParamList params, Tensor input) {
    std::vector<Tensor> tracked;
    tracked.push_back(input);
    for (Parameter* p : params) tracked.push_back(p->value);
    const double err = grad_check([&] { return forward(input); }, tracked);
    CHECK(err <= 1e-4);
  };

  SUBCASE("linear") {
    Linear lin("lin", 3, 2, rng);
    ParamList params;
    lin.collect_params(params);
    run([&](const Tensor& x) { return reduce_mean(lin.forward(x)); }, params,
        rand_tensor({4, 3}, rng));
  }
  SUBCASE("conv-bn-act") {
    ConvBnAct block("blk", 2, 3, 3, 2, 1, rng);
    ParamList params;
    block.collect_params(params);
    run([&](const Tensor& x) { return reduce_mean(block.forward(x, true)); },
        params, rand_tensor({2, 2, 4, 4}, rng));
  }
  SUBCASE("depthwise block") {
    DepthwiseBlock block("blk", 2, 4, 2, rng);
    ParamList params;
    block.collect_params(params);
    run([&](const Tensor& x) { return reduce_mean(block.forward(x, true)); },
        params, rand_tensor({2, 2, 4, 4}, rng));
  }
  SUBCASE("batchnorm") {
    BatchNorm2d bn("bn", 2);
    ParamList params;
    bn.collect_params(params);
    // Project onto fixed random weights: a plain sum of normalized values
    // is nearly invariant to the input, which starves finite differences.
    const Tensor w = rand_tensor({3, 2, 2, 2}, rng, -1, 1, false);
    run([&](const Tensor& x) { return reduce_mean(mul(bn.forward(x, true), w)); },
        params, rand_tensor({3, 2, 2, 2}, rng));
  }
  SUBCASE("prelu layer") {
    PReLU act("act", 3);
    ParamList params;
    act.collect_params(params);
    run([&](const Tensor& x) { return reduce_mean(act.forward(x)); }, params,
        affect::testutil::rand_tensor_offzero({2, 3, 2, 2}, rng));
  }
  SUBCASE("gdconv") {
    GdConv gd("gd", 2, 3, 3, rng);
    ParamList params;
    gd.collect_params(params);
    run([&](const Tensor& x) { return reduce_mean(gd.forward(x)); }, params,
        rand_tensor({2, 2, 3, 3}, rng));
  }
  SUBCASE("depthwise conv with bias") {
    DepthwiseConv2d dw("dw", 2, 3, 1, 1, 1, 1, 0, /*with_bias=*/true, rng);
    ParamList params;
    dw.collect_params(params);
    run([&](const Tensor& x) { return reduce_mean(dw.forward(x)); }, params,
        rand_tensor({2, 2, 3, 1}, rng));
  }
}

TEST_CASE("frozen parameters survive an optimizer step bitwise") {
  Rng rng(8);
  Linear lin("lin", 3, 2, rng);
  ParamList params;
  lin.collect_params(params);
  const std::vector<double> w0 = lin.weight.value.values();
  const std::vector<double> b0 = lin.bias.value.values();
  for (Parameter* p : params) p->frozen = true;

  AdamOptimizer opt(params, 1e-2);
  opt.zero_grad();
  Tensor x = rand_tensor({4, 3}, rng);
  {
    Tape tape;
    Tensor loss = reduce_mean(mul(lin.forward(x), lin.forward(x)));
    tape.backward(loss);
  }
  opt.step();
  CHECK(lin.weight.value.values() == w0);
  CHECK(lin.bias.value.values() == b0);

  // Unfreezing makes the same gradients move the weights.
  for (Parameter* p : params) p->frozen = false;
  opt.step();
  CHECK(lin.weight.value.values() != w0);
}
