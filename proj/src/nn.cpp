#include "mvox/nn.hpp"

#include "mvox/errors.hpp"

#include <cmath>

namespace mvox {

template <typename Scalar>
ParameterStore<Scalar>::ParameterStore(std::uint64_t seed, bool allocate)
    : rng_(seed), allocate_(allocate) {}

template <typename Scalar>
double ParameterStore<Scalar>::uniform() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

template <typename Scalar>
Tensor<Scalar> ParameterStore<Scalar>::declare(const std::string& name, Shape shape, Init init,
                                               Index fan_in) {
  for (const auto& [existing, _] : specs_)
    if (existing == name) throw ConfigError("duplicate parameter name '" + name + "'");
  specs_.emplace_back(name, shape);
  if (!allocate_) return {};
  Tensor<Scalar> t = Tensor<Scalar>::zeros(shape);
  if (init == Init::KaimingUniform) {
    const double bound = std::sqrt(3.0 / static_cast<double>(std::max<Index>(fan_in, 1)));
    for (Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<Scalar>((2.0 * uniform() - 1.0) * bound);
  }
  t.set_requires_grad(true);
  params_.push_back({name, t, false});
  return t;
}

template <typename Scalar>
Parameter<Scalar>* ParameterStore<Scalar>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename Scalar>
const Parameter<Scalar>* ParameterStore<Scalar>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename Scalar>
Index ParameterStore<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& [_, shape] : specs_) n += numel(shape);
  return n;
}

template <typename Scalar>
void ParameterStore<Scalar>::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) {
      p.frozen = frozen;
      p.tensor.set_requires_grad(!frozen);
    }
}

template <typename Scalar>
void ParameterStore<Scalar>::set_requires_grad(bool enabled) {
  for (auto& p : params_)
    if (!p.frozen) p.tensor.set_requires_grad(enabled);
}

template <typename Scalar>
void ParameterStore<Scalar>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename Scalar>
std::vector<TensorRecord> ParameterStore<Scalar>::state(const std::string& prefix) const {
  std::vector<TensorRecord> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    TensorRecord r;
    r.name = prefix + p.name;
    r.dtype = std::is_same_v<Scalar, float> ? DType::F32 : DType::F64;
    r.shape = p.tensor.shape();
    r.values = p.tensor.data().template cast<double>();
    out.push_back(std::move(r));
  }
  return out;
}

template <typename Scalar>
std::size_t ParameterStore<Scalar>::load_state(const std::vector<TensorRecord>& records,
                                               const std::string& from_prefix,
                                               const std::string& to_prefix) {
  std::size_t loaded = 0;
  for (const auto& r : records) {
    if (r.name.rfind(from_prefix, 0) != 0) continue;
    const std::string name = to_prefix + r.name.substr(from_prefix.size());
    Parameter<Scalar>* p = find(name);
    if (!p) continue;
    if (p->tensor.shape() != r.shape)
      throw DimensionError("parameter '" + name + "' has shape " + shape_string(p->tensor.shape()) +
                           " but the record '" + r.name + "' has " + shape_string(r.shape));
    p->tensor.data() = r.values.cast<Scalar>();
    ++loaded;
  }
  return loaded;
}

template <typename Scalar>
Conv1d<Scalar>::Conv1d(ParameterStore<Scalar>& store, const std::string& name, Index in_channels,
                       Index out_channels, Index kernel, Conv1dOptions options)
    : in_channels(in_channels), out_channels(out_channels), kernel(kernel), options(options) {
  const Index fan_in = in_channels * kernel;
  weight = store.declare(name + ".weight", {out_channels, in_channels, kernel}, options.init, fan_in);
  if (options.bias) bias = store.declare(name + ".bias", {out_channels}, Init::Zeros);
}

template <typename Scalar>
Tensor<Scalar> Conv1d<Scalar>::operator()(const Tensor<Scalar>& x) const {
  switch (options.padding) {
    case Padding::ReflectSame: {
      const Index total = options.dilation * (kernel - 1);
      const Index left = total / 2;
      const Tensor<Scalar> padded = total > 0 ? pad_reflect(x, left, total - left) : x;
      return conv1d(padded, weight, bias, options.stride, options.dilation, 0);
    }
    case Padding::Zero:
      return conv1d(x, weight, bias, options.stride, options.dilation, options.zero_padding);
    case Padding::None:
      break;
  }
  return conv1d(x, weight, bias, options.stride, options.dilation, 0);
}

template <typename Scalar>
Index Conv1d<Scalar>::output_length(Index length) const {
  switch (options.padding) {
    case Padding::ReflectSame:
      return conv_output_length(length + options.dilation * (kernel - 1), kernel, options.stride,
                                options.dilation, 0);
    case Padding::Zero:
      return conv_output_length(length, kernel, options.stride, options.dilation, options.zero_padding);
    case Padding::None:
      break;
  }
  return conv_output_length(length, kernel, options.stride, options.dilation, 0);
}

template <typename Scalar>
ConvTranspose1d<Scalar>::ConvTranspose1d(ParameterStore<Scalar>& store, const std::string& name,
                                         Index in_channels, Index out_channels, Index kernel,
                                         Index stride, Index padding)
    : in_channels(in_channels), out_channels(out_channels), kernel(kernel), stride(stride),
      padding(padding) {
  // Each output sample receives in_channels * kernel / stride contributions.
  const Index fan_in = std::max<Index>(1, in_channels * kernel / stride);
  weight = store.declare(name + ".weight", {in_channels, out_channels, kernel}, Init::KaimingUniform,
                         fan_in);
  bias = store.declare(name + ".bias", {out_channels}, Init::Zeros);
}

template <typename Scalar>
Tensor<Scalar> ConvTranspose1d<Scalar>::operator()(const Tensor<Scalar>& x) const {
  return conv_transpose1d(x, weight, bias, stride, padding);
}

template <typename Scalar>
Index ConvTranspose1d<Scalar>::output_length(Index length) const {
  return conv_transpose_output_length(length, kernel, stride, padding);
}

template <typename Scalar>
Conv2d<Scalar>::Conv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_channels,
                       Index out_channels, Index kernel_h, Index kernel_w, Conv2dGeometry geometry)
    : in_channels(in_channels), out_channels(out_channels), kernel_h(kernel_h), kernel_w(kernel_w),
      geometry(geometry) {
  weight = store.declare(name + ".weight", {out_channels, in_channels, kernel_h, kernel_w},
                         Init::KaimingUniform, in_channels * kernel_h * kernel_w);
  bias = store.declare(name + ".bias", {out_channels}, Init::Zeros);
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::operator()(const Tensor<Scalar>& x) const {
  return conv2d(x, weight, bias, geometry);
}

template <typename Scalar>
Snake<Scalar>::Snake(ParameterStore<Scalar>& store, const std::string& name, Index channels) {
  log_alpha = store.declare(name + ".log_alpha", {channels}, Init::Zeros);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Conv1d<float>;
template struct Conv1d<double>;
template struct ConvTranspose1d<float>;
template struct ConvTranspose1d<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Snake<float>;
template struct Snake<double>;

}  // namespace mvox
