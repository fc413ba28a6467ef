#pragma once

#include "mvox/ops.hpp"
#include "mvox/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mvox {

enum class Init { Zeros, KaimingUniform };

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

// Precision-neutral copy of a named tensor. float -> double -> float is
// exact, so records round-trip bitwise for both precisions.
struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  Eigen::ArrayXd values;
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  bool frozen = false;
};

// Owns every parameter of a model under hierarchical dotted names. A
// shape-only store records names and shapes without allocating, which is how
// paper-scale presets are counted.
template <typename Scalar>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, bool allocate = true);

  // fan_in sizes the Kaiming-uniform bound sqrt(3 / fan_in).
  Tensor<Scalar> declare(const std::string& name, Shape shape, Init init, Index fan_in = 1);

  bool allocating() const { return allocate_; }
  std::vector<Parameter<Scalar>>& params() { return params_; }
  const std::vector<Parameter<Scalar>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Shape>>& specs() const { return specs_; }

  Parameter<Scalar>* find(const std::string& name);
  const Parameter<Scalar>* find(const std::string& name) const;

  Index parameter_count() const;

  // Freezes/unfreezes every parameter whose name starts with `prefix`.
  // Frozen tensors also stop requesting gradients.
  void set_frozen(const std::string& prefix, bool frozen);
  // Toggles gradient recording for every non-frozen parameter without
  // touching frozen markers (used to skip critic gradients in a G step).
  void set_requires_grad(bool enabled);
  void zero_grad();

  std::vector<TensorRecord> state(const std::string& prefix = "") const;
  // Copies values for every record whose name (after replacing
  // `from_prefix` with `to_prefix`) names a parameter here. Returns the
  // number of tensors loaded; shape mismatches throw.
  std::size_t load_state(const std::vector<TensorRecord>& records, const std::string& from_prefix = "",
                         const std::string& to_prefix = "");

 private:
  double uniform();  // [0,1), platform independent

  std::mt19937_64 rng_;
  bool allocate_;
  std::vector<Parameter<Scalar>> params_;
  std::vector<std::pair<std::string, Shape>> specs_;
};

enum class Padding { None, Zero, ReflectSame };

struct Conv1dOptions {
  Index stride = 1;
  Index dilation = 1;
  Padding padding = Padding::ReflectSame;
  Index zero_padding = 0;  // used with Padding::Zero
  bool bias = true;
  Init init = Init::KaimingUniform;
};

template <typename Scalar>
struct Conv1d {
  Tensor<Scalar> weight, bias;
  Index in_channels = 0, out_channels = 0, kernel = 1;
  Conv1dOptions options;

  Conv1d() = default;
  Conv1d(ParameterStore<Scalar>& store, const std::string& name, Index in_channels,
         Index out_channels, Index kernel, Conv1dOptions options = {});

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
  Index output_length(Index length) const;
};

template <typename Scalar>
struct ConvTranspose1d {
  Tensor<Scalar> weight, bias;
  Index in_channels = 0, out_channels = 0, kernel = 1, stride = 1, padding = 0;

  ConvTranspose1d() = default;
  ConvTranspose1d(ParameterStore<Scalar>& store, const std::string& name, Index in_channels,
                  Index out_channels, Index kernel, Index stride, Index padding);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
  Index output_length(Index length) const;
};

template <typename Scalar>
struct Conv2d {
  Tensor<Scalar> weight, bias;
  Index in_channels = 0, out_channels = 0, kernel_h = 1, kernel_w = 1;
  Conv2dGeometry geometry;

  Conv2d() = default;
  Conv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_channels,
         Index out_channels, Index kernel_h, Index kernel_w, Conv2dGeometry geometry);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
};

// Learnable per-channel snake, alpha stored as log(alpha) starting at 0.
template <typename Scalar>
struct Snake {
  Tensor<Scalar> log_alpha;

  Snake() = default;
  Snake(ParameterStore<Scalar>& store, const std::string& name, Index channels);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return snake(x, log_alpha); }
};

}  // namespace mvox
