#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "hstrack/nn.hpp"
#include "hstrack/tensor.hpp"

namespace hstrack::testutil {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0,
                            double hi = 1.0) {
  int n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
  return m;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(),
                     a.values().size() * sizeof(double)) == 0;
}

}  // namespace hstrack::testutil
