#pragma once

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "parformer/rng.hpp"
#include "parformer/tensor.hpp"

namespace testutil {

inline parformer::Tensor rand_tensor(parformer::Shape shape, std::mt19937_64& rng,
                                     double scale = 1.0, bool grad = false) {
  std::vector<double> v(static_cast<size_t>(parformer::shape_numel(shape)));
  for (double& x : v) x = scale * (2.0 * parformer::uniform01(rng) - 1.0);
  return grad ? parformer::Tensor::param(std::move(shape), std::move(v))
              : parformer::Tensor::from_data(std::move(shape), std::move(v));
}

inline double max_abs_diff(const parformer::Tensor& a, const parformer::Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bits_equal(const parformer::Tensor& a, const parformer::Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(double)) == 0;
}

inline void fill_tensor(parformer::Tensor t, double v) {
  for (double& x : t.data()) x = v;
}

}  // namespace testutil
