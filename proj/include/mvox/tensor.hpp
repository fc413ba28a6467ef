#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace mvox {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
struct TensorImpl;

// One recorded operation. The backward rule receives the gradient of the
// node's output and accumulates into the gradients of `inputs`.
template <typename Scalar>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs;
  std::function<void(const Array<Scalar>&)> backward;
};

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  Array<Scalar> data;
  Array<Scalar> grad;  // empty until populated
  bool requires_grad = false;
  std::shared_ptr<Node<Scalar>> node;

  // Returns the gradient buffer, allocating zeros on first use.
  Array<Scalar>& grad_buffer() {
    if (grad.size() != data.size()) grad = Array<Scalar>::Zero(data.size());
    return grad;
  }
};

// Shared handle to a dense row-major tensor that may participate in a
// reverse-mode graph. Copies alias the same storage; use clone() for a
// deep copy.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, Array<Scalar> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value) { return Tensor(std::move(shape), value); }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values);
  static Tensor scalar(Scalar value) { return Tensor({1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int axis) const;
  Index size() const { return impl_->data.size(); }

  Array<Scalar>& data() { return impl_->data; }
  const Array<Scalar>& data() const { return impl_->data; }
  Scalar* ptr() { return impl_->data.data(); }
  const Scalar* ptr() const { return impl_->data.data(); }
  Scalar item() const;
  Scalar operator[](Index i) const { return impl_->data[i]; }

  // 2-D row-major view; 1-D tensors view as a single row.
  MatrixMap<Scalar> matrix();
  ConstMatrixMap<Scalar> matrix() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  const Array<Scalar>& grad() const { return impl_->grad; }
  Array<Scalar>& grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.resize(0); }

  bool is_leaf() const { return impl_->node == nullptr; }
  const std::shared_ptr<Node<Scalar>>& node() const { return impl_->node; }

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // differentiable

  const std::shared_ptr<TensorImpl<Scalar>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<Scalar>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl<Scalar>> impl_;
};

// Gradient recording is on by default; NoGradGuard disables it for the
// current thread within a scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
using BackwardFn = std::function<void(const Array<Scalar>&)>;

// Builds an op output. A graph node is attached only when recording is on
// and at least one input requires a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> data,
                           std::initializer_list<Tensor<Scalar>> inputs, const char* op,
                           BackwardFn<Scalar> backward);
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> data,
                           const std::vector<Tensor<Scalar>>& inputs, const char* op,
                           BackwardFn<Scalar> backward);

// Topologically ordered view of everything reachable from a root tensor:
// inputs always precede the tensors computed from them.
template <typename Scalar>
struct Graph {
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> order;

  static Graph build(const Tensor<Scalar>& root);
  std::size_t size() const { return order.size(); }
};

// Populates gradients of every requires_grad tensor reachable from a scalar
// loss. Leaf gradients accumulate across calls; interior ones are reset.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

}  // namespace mvox
