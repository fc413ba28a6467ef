#include "mvox/gradcheck.hpp"

#include "mvox/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <type_traits>

namespace mvox {

namespace {
constexpr int kMaxRedraws = 4;

double gaussian(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename Scalar>
std::vector<Array<double>> analytic_gradients(GradCheckCase<Scalar>& c) {
  for (auto& t : c.inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor<Scalar> loss = c.loss();
  backward(loss);
  std::vector<Array<double>> grads;
  for (const auto& t : c.inputs)
    grads.push_back(t.has_grad() ? Array<double>(t.grad().template cast<double>())
                                 : Array<double>(Array<double>::Zero(t.size())));
  return grads;
}

// Target and numeric case share a point; `numeric` may be the target itself.
template <typename Scalar, typename Ref>
GradCheckResult run_check(const std::string& name, GradCheckCase<Scalar>& target, GradCheckCase<Ref>& numeric,
                          const GradCheckOptions& options) {
  constexpr bool single = std::is_same_v<Ref, float>;
  const double step = options.step > 0 ? options.step : (single ? 1e-2 : 1e-4);
  GradCheckResult result;
  result.name = name;
  result.tolerance = options.tolerance > 0 ? options.tolerance
                                           : (std::is_same_v<Scalar, float> ? 1e-3 : 1e-6);
  if (target.inputs.size() != numeric.inputs.size())
    throw ContractError("gradcheck '" + name + "': reference has a different input list");

  const auto grads = analytic_gradients(target);

  std::vector<Array<Ref>> saved;
  for (std::size_t i = 0; i < numeric.inputs.size(); ++i) {
    if (numeric.inputs[i].shape() != target.inputs[i].shape())
      throw ContractError("gradcheck '" + name + "': reference input " + std::to_string(i) + " has shape " +
                          shape_string(numeric.inputs[i].shape()) + ", expected " +
                          shape_string(target.inputs[i].shape()));
    numeric.inputs[i].data() = target.inputs[i].data().template cast<Ref>();
    saved.push_back(numeric.inputs[i].data());
  }

  auto evaluate = [&](double h, const std::vector<Array<double>>& dirs) {
    for (std::size_t i = 0; i < saved.size(); ++i)
      numeric.inputs[i].data() = (saved[i].template cast<double>() + h * dirs[i]).template cast<Ref>();
    NoGradGuard no_grad;
    return static_cast<double>(numeric.loss().item());
  };
  // Directional derivative along the perturbation the numeric side really
  // applies, which differs from h*v once rounded to Ref.
  auto applied = [&](std::size_t i, double h, const Array<double>& d) {
    const Array<double> base = saved[i].template cast<double>();
    return Array<double>(((base + h * d).template cast<Ref>().template cast<double>() -
                          (base - h * d).template cast<Ref>().template cast<double>()) /
                         (2.0 * h));
  };

  // Typical size of <grad, v> for a unit Gaussian v.
  double grad_norm2 = 0.0;
  Index count = 0;
  for (const auto& g : grads) {
    grad_norm2 += g.square().sum();
    count += g.size();
  }
  const double typical = count > 0 ? std::sqrt(grad_norm2 / static_cast<double>(count)) : 0.0;

  std::mt19937_64 rng(options.seed);
  int redraws = 0;
  for (int probe = 0; probe < options.probes; ++probe) {
    // Unit-norm direction over all inputs, so the step length does not grow
    // with the number of probed elements.
    std::vector<Array<double>> dirs;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      Array<double> d(saved[i].size());
      for (Index j = 0; j < d.size(); ++j) d[j] = gaussian(rng);
      norm2 += d.square().sum();
      dirs.push_back(std::move(d));
    }
    double coarse_a = 0.0, fine_a = 0.0;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      dirs[i] /= std::sqrt(norm2);
      coarse_a += (grads[i] * applied(i, step, dirs[i])).sum();
      fine_a += (grads[i] * applied(i, step / 2, dirs[i])).sum();
    }
    // A direction nearly orthogonal to the gradient makes the relative error
    // meaningless; draw another one.
    if (std::abs(coarse_a) < 0.1 * typical && redraws < kMaxRedraws * options.probes) {
      ++redraws;
      --probe;
      continue;
    }
    const double coarse = (evaluate(step, dirs) - evaluate(-step, dirs)) / (2.0 * step);
    const double fine = (evaluate(step / 2, dirs) - evaluate(-step / 2, dirs)) / step;
    const double numeric_d = (4.0 * fine - coarse) / 3.0;
    const double analytic = (4.0 * fine_a - coarse_a) / 3.0;
    const double denom = std::max({std::abs(analytic), std::abs(numeric_d), 1e-12});
    const double rel = std::abs(analytic - numeric_d) / denom;
    if (!std::isfinite(rel)) throw NumericError("gradcheck '" + name + "' produced a non-finite probe");
    result.max_relative_error = std::max(result.max_relative_error, rel);
    ++result.probes;
  }
  for (std::size_t i = 0; i < saved.size(); ++i) numeric.inputs[i].data() = saved[i];
  result.passed = result.max_relative_error <= result.tolerance;
  return result;
}
}  // namespace

template <typename Scalar>
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor<Scalar>()>& loss_fn,
                                std::vector<Tensor<Scalar>> inputs, GradCheckOptions options) {
  GradCheckCase<Scalar> c{loss_fn, std::move(inputs)};
  return run_check(name, c, c, options);
}

template <typename Scalar>
GradCheckResult check_gradients(const std::string& name, GradCheckCase<Scalar> target,
                                GradCheckCase<double> reference, GradCheckOptions options) {
  return run_check(name, target, reference, options);
}

template GradCheckResult check_gradients(const std::string&, const std::function<Tensor<float>()>&,
                                         std::vector<Tensor<float>>, GradCheckOptions);
template GradCheckResult check_gradients(const std::string&, const std::function<Tensor<double>()>&,
                                         std::vector<Tensor<double>>, GradCheckOptions);
template GradCheckResult check_gradients(const std::string&, GradCheckCase<float>, GradCheckCase<double>,
                                         GradCheckOptions);
template GradCheckResult check_gradients(const std::string&, GradCheckCase<double>, GradCheckCase<double>,
                                         GradCheckOptions);

}  // namespace mvox
