#pragma once

#include "doctest.h"
#include "mvox/gradcheck.hpp"
#include "mvox/ops.hpp"
#include "mvox/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <type_traits>

namespace mvox::test {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

// Scalar probe loss sum(w * y) with fixed random weights, so gradients are
// not symmetric across elements.
template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& y, std::uint64_t seed = 99) {
  const Tensor<Scalar> w = random_tensor<Scalar>(y.shape(), seed);
  return sum(y * w);
}

// f64 graphs are checked against their own differences; f32 graphs against
// differences of an f64 twin built by the same lambda.
template <typename Scalar, typename Build>
void gradcheck_both(const std::string& name, Build build, std::uint64_t seed = 7) {
  auto [fn, inputs] = build.template operator()<Scalar>();
  auto [ref_fn, ref_inputs] = build.template operator()<double>();
  GradCheckOptions opt;
  opt.seed = seed;
  const auto r = std::is_same_v<Scalar, double>
                     ? check_gradients<Scalar>(name, fn, inputs, opt)
                     : check_gradients<Scalar>(name, {fn, inputs}, {ref_fn, ref_inputs}, opt);
  INFO(name << (sizeof(Scalar) == 4 ? " f32" : " f64") << " max rel err " << r.max_relative_error << " tol " << r.tolerance);
  CHECK(r.passed);
  CHECK(r.probes == 20);
}

#define GRADCHECK(name, ...)                   \
  do {                                         \
    gradcheck_both<float>(name, __VA_ARGS__);  \
    gradcheck_both<double>(name, __VA_ARGS__); \
  } while (0)

}  // namespace mvox::test
