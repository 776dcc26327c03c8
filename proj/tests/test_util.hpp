#pragma once

#include <random>
#include <vector>

#include "crispdec/tensor.hpp"

namespace testutil {

inline crispdec::Tensor random_tensor(crispdec::Shape shape, std::mt19937_64& rng,
                                      double lo = -1.0, double hi = 1.0,
                                      bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(crispdec::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return crispdec::Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
