#pragma once

#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect::testutil {

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0,
                          double hi = 1.0, bool tracked = true) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(data), tracked);
}

/// Random values bounded away from zero, for kinked ops (relu, prelu).
inline Tensor rand_tensor_offzero(Shape shape, Rng& rng, bool tracked = true) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * rng.uniform(0.1, 1.0);
  }
  return Tensor(std::move(shape), std::move(data), tracked);
}

}  // namespace affect::testutil
