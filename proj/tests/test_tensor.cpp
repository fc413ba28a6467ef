#include "doctest.h"

#include "mvox/errors.hpp"
#include "mvox/gradcheck.hpp"
#include "mvox/ops.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>
#include <algorithm>
#include <cstring>

using namespace mvox;
using mvox::test::random_tensor;
using mvox::test::weighted_sum;
using mvox::test::gradcheck_both;

namespace {

// Direct sliding dot product, written independently of the im2col path.
template <typename Scalar>
std::vector<double> naive_conv1d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                                 Index stride, Index dilation, Index padding, Index& out_len) {
  const Index cin = x.dim(0), t = x.dim(1), cout = w.dim(0), k = w.dim(2);
  out_len = (t + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout * out_len), 0.0);
  for (Index o = 0; o < cout; ++o)
    for (Index j = 0; j < out_len; ++j) {
      double acc = b.defined() ? b[o] : 0.0;
      for (Index c = 0; c < cin; ++c)
        for (Index q = 0; q < k; ++q) {
          const Index src = j * stride + q * dilation - padding;
          if (src >= 0 && src < t) acc += double(w[(o * cin + c) * k + q]) * double(x[c * t + src]);
        }
      y[static_cast<std::size_t>(o * out_len + j)] = acc;
    }
  return y;
}

template <typename Scalar>
double dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  double acc = 0;
  for (Index i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

}  // namespace

TEST_CASE("conv1d matches hand example and the naive oracle") {
  auto x = Tensor<double>::from({1, 3}, {1, 2, 3});
  auto w = Tensor<double>::from({1, 1, 2}, {1, 1});
  auto b = Tensor<double>::from({1}, {0});
  auto y = conv1d(x, w, b);
  REQUIRE(y.shape() == Shape{1, 2});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 5.0);

  for (Index stride : {1, 2, 3})
    for (Index dilation : {1, 2})
      for (Index padding : {0, 1, 3}) {
        auto xi = random_tensor<double>({3, 17}, 1 + stride);
        auto wi = random_tensor<double>({4, 3, 3}, 2 + dilation);
        auto bi = random_tensor<double>({4}, 3 + padding);
        Index out_len = 0;
        const auto ref = naive_conv1d(xi, wi, bi, stride, dilation, padding, out_len);
        auto yi = conv1d(xi, wi, bi, stride, dilation, padding);
        REQUIRE(yi.dim(1) == out_len);
        for (Index i = 0; i < yi.size(); ++i) CHECK(yi[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-12));
      }
}

TEST_CASE("conv1d with identity kernel is the identity") {
  auto x = random_tensor<float>({3, 11}, 5);
  Tensor<float> w({3, 3, 1});
  for (Index c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0f;
  auto y = conv1d(x, w, Tensor<float>::zeros({3}));
  for (Index i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv1d shape errors name the axis") {
  auto x = random_tensor<float>({2, 8}, 1);
  auto w = random_tensor<float>({4, 3, 3}, 2);
  CHECK_THROWS_WITH_AS(conv1d(x, w, Tensor<float>()), doctest::Contains("axis 0"), DimensionError);
  auto w2 = random_tensor<float>({4, 2, 9}, 2);
  CHECK_THROWS_AS(conv1d(x, w2, Tensor<float>()), DimensionError);
}

TEST_CASE("conv_transpose1d is the adjoint of conv1d") {
  for (Index stride : {1, 2, 4}) {
    const Index k = 4, t = 4 * 9 + k;  // (t - k) divisible by every stride used
    auto x = random_tensor<double>({3, t}, 11);
    auto w = random_tensor<double>({5, 3, k}, 12);
    auto y = conv1d(x, w, Tensor<double>(), stride);
    auto z = random_tensor<double>(y.shape(), 13);
    auto back = conv_transpose1d(z, w, Tensor<double>(), stride);
    REQUIRE(back.shape() == x.shape());
    const double lhs = dot(y, z), rhs = dot(x, back);
    CHECK(std::abs(lhs - rhs) / std::abs(lhs) <= 1e-5);
  }
}

TEST_CASE("conv_transpose1d copies a single input across an all-ones kernel") {
  auto x = Tensor<float>::from({1, 1}, {0.75f});
  auto w = Tensor<float>::full({1, 1, 4}, 1.0f);
  auto y = conv_transpose1d(x, w, Tensor<float>(), 4, 0);
  REQUIRE(y.shape() == Shape{1, 4});
  for (Index i = 0; i < 4; ++i) CHECK(y[i] == 0.75f);
}

TEST_CASE("avg_pool1d") {
  auto x = Tensor<float>::from({1, 4}, {1, 2, 3, 4});
  auto y = avg_pool1d(x, 2, 2);
  REQUIRE(y.size() == 2);
  CHECK(y[0] == 1.5f);
  CHECK(y[1] == 3.5f);
  auto id = avg_pool1d(x, 1, 1);
  for (Index i = 0; i < 4; ++i) CHECK(id[i] == x[i]);
  CHECK_THROWS_AS(avg_pool1d(x, 5, 1), DimensionError);
}

TEST_CASE("snake values") {
  auto alpha = Tensor<double>::from({2}, {0.0, std::log(3.0)});
  auto zeros = snake(Tensor<double>::zeros({2, 4}), alpha);
  for (Index i = 0; i < zeros.size(); ++i) CHECK(zeros[i] == 0.0);
  auto pi = snake(Tensor<double>::full({1, 1}, std::numbers::pi), Tensor<double>::zeros({1}));
  CHECK(pi[0] == doctest::Approx(std::numbers::pi).epsilon(1e-15));
  CHECK_THROWS_AS(snake(Tensor<double>::zeros({3, 4}), alpha), DimensionError);
}

TEST_CASE("matmul") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c[0] == 3.0);
  CHECK(c[1] == 7.0);
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto same = matmul(eye, a);
  for (Index i = 0; i < 4; ++i) CHECK(same[i] == a[i]);
  CHECK_THROWS_AS(matmul(a, Tensor<double>::zeros({3, 1})), DimensionError);
}

TEST_CASE("backward on simple losses") {
  auto x = random_tensor<double>({3, 5}, 3).set_requires_grad(true);
  backward(sum(x));
  for (Index i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);

  // mean |x - y|: sign(x - y) / N, zero at ties
  auto a = Tensor<double>::from({4}, {1.0, -2.0, 0.5, 3.0}).set_requires_grad(true);
  auto b = Tensor<double>::from({4}, {0.0, 1.0, 0.5, 1.0});
  backward(mean(abs(a - b)));
  CHECK(a.grad()[0] == 0.25);
  CHECK(a.grad()[1] == -0.25);
  CHECK(a.grad()[2] == 0.0);
  CHECK(a.grad()[3] == 0.25);

  // repeated calls accumulate on leaves
  auto loss = sum(x);
  backward(loss);
  backward(loss);
  for (Index i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 3.0);

  CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("graph order is topological and constants have no node") {
  auto c = Tensor<float>::full({2, 3}, 1.0f);
  CHECK(c.is_leaf());
  auto x = random_tensor<float>({2, 3}, 4).set_requires_grad(true);
  auto y = tanh(x * c) + x;
  auto loss = mean(square(y));
  const auto g = Graph<float>::build(loss);
  std::vector<const TensorImpl<float>*> seen;
  for (const auto& impl : g.order) {
    if (impl->node)
      for (const auto& in : impl->node->inputs)
        CHECK(std::find(seen.begin(), seen.end(), in.get()) != seen.end());
    seen.push_back(impl.get());
  }
  CHECK(g.order.back() == loss.impl());
  backward(loss);
  for (const auto& impl : g.order)
    if (impl->requires_grad) CHECK(impl->grad.size() == impl->data.size());
  CHECK(!c.has_grad());
}

TEST_CASE("no-grad mode records nothing") {
  auto x = random_tensor<float>({2, 3}, 4).set_requires_grad(true);
  NoGradGuard guard;
  auto y = square(x);
  CHECK(y.is_leaf());
  CHECK(!y.requires_grad());
}

TEST_CASE("forward evaluation is bitwise deterministic") {
  auto x = random_tensor<float>({4, 64}, 8);
  auto w = random_tensor<float>({6, 4, 5}, 9);
  auto a = snake(conv1d(x, w, Tensor<float>::zeros({6}), 1, 2, 4), Tensor<float>::zeros({6}));
  auto b = snake(conv1d(x, w, Tensor<float>::zeros({6}), 1, 2, 4), Tensor<float>::zeros({6}));
  CHECK(std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("finite-difference checks for every differentiable op") {
  GRADCHECK("conv1d", []<typename S>() {
    auto x = random_tensor<S>({4, 64}, 1), w = random_tensor<S>({3, 4, 5}, 2), b = random_tensor<S>({3}, 3);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(conv1d(x, w, b, 2, 3, 4)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x, w, b});
  });
  GRADCHECK("conv_transpose1d", []<typename S>() {
    auto x = random_tensor<S>({4, 16}, 1), w = random_tensor<S>({4, 3, 8}, 2), b = random_tensor<S>({3}, 3);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(conv_transpose1d(x, w, b, 4, 2)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x, w, b});
  });
  GRADCHECK("conv2d", []<typename S>() {
    auto x = random_tensor<S>({2, 9, 7}, 1), w = random_tensor<S>({3, 2, 3, 5}, 2), b = random_tensor<S>({3}, 3);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(conv2d(x, w, b, {2, 1, 1, 2})); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x, w, b});
  });
  GRADCHECK("avg_pool1d", []<typename S>() {
    auto x = random_tensor<S>({3, 20}, 1);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(avg_pool1d(x, 3, 2)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("snake", []<typename S>() {
    auto x = random_tensor<S>({3, 20}, 1, -3, 3), a = random_tensor<S>({3}, 2, -0.5, 0.5);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(snake(x, a)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x, a});
  });
  GRADCHECK("matmul", []<typename S>() {
    auto a = random_tensor<S>({4, 6}, 1), b = random_tensor<S>({6, 3}, 2);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(matmul(a, b)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{a, b});
  });
  GRADCHECK("pointwise", []<typename S>() {
    auto x = random_tensor<S>({3, 10}, 1, 0.5, 2.0);
    std::function<Tensor<S>()> fn = [=] {
      return weighted_sum(tanh(log(x)) + sqrt(x) + square(x) + leaky_relu(add_scalar(x, S(-1)), S(0.1)));
    };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("l1 away from ties", []<typename S>() {
    auto x = random_tensor<S>({40}, 1), y = random_tensor<S>({40}, 2);
    for (Index i = 0; i < x.size(); ++i)
      if (std::abs(double(x[i] - y[i])) < 0.05) x.data()[i] += S(0.1);
    std::function<Tensor<S>()> fn = [=] { return mean(abs(x - y)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("slice/concat/pad", []<typename S>() {
    auto x = random_tensor<S>({2, 9}, 1);
    std::function<Tensor<S>()> fn = [=] {
      auto p = pad_reflect(x, 4, 11);
      return weighted_sum(concat<S>({slice(p, 1, 2, 5), slice(p, 0, 1, 1).reshaped({2, 12})}, 1));
    };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("fir/zero_stuff", []<typename S>() {
    auto x = random_tensor<S>({2, 12}, 1);
    std::function<Tensor<S>()> fn = [=] {
      return weighted_sum(depthwise_fir(zero_stuff(x, 2), {0.25, -0.5, 1.0, 0.3}, 3, 2, 5));
    };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("conv->snake->mean", []<typename S>() {
    auto x = random_tensor<S>({4, 64}, 1), w = random_tensor<S>({4, 4, 3}, 2), a = random_tensor<S>({4}, 3, -0.3, 0.3);
    std::function<Tensor<S>()> fn = [=] { return mean(snake(conv1d(x, w, Tensor<S>(), 1, 2, 2), a)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x, w, a});
  });
}
