#include "mvox/tensor.hpp"

#include "mvox/errors.hpp"

#include <sstream>
#include <unordered_set>

namespace mvox {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] <= 0)
      throw DimensionError("tensor axis " + std::to_string(i) + " has non-positive extent " +
                           std::to_string(shape[i]));
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : impl_(std::make_shared<TensorImpl<Scalar>>()) {
  check_shape(shape);
  impl_->data = Array<Scalar>::Constant(numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array<Scalar> data)
    : impl_(std::make_shared<TensorImpl<Scalar>>()) {
  check_shape(shape);
  if (numel(shape) != data.size())
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values) {
  Array<Scalar> data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  if (axis < 0) axis += ndim();
  if (axis < 0 || axis >= ndim())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

template <typename Scalar>
MatrixMap<Scalar> Tensor<Scalar>::matrix() {
  const Index rows = ndim() == 1 ? 1 : dim(0);
  return MatrixMap<Scalar>(ptr(), rows, size() / rows);
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix() const {
  const Index rows = ndim() == 1 ? 1 : dim(0);
  return ConstMatrixMap<Scalar>(ptr(), rows, size() / rows);
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  auto impl = std::make_shared<TensorImpl<Scalar>>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw DimensionError("reshape from " + shape_string(this->shape()) + " to " +
                         shape_string(shape) + " changes element count");
  auto in = impl_;
  return make_result<Scalar>(std::move(shape), impl_->data, {*this}, "reshape",
                             [in](const Array<Scalar>& g) { in->grad_buffer() += g; });
}

namespace {
template <typename Scalar>
Tensor<Scalar> attach(Shape shape, Array<Scalar> data, bool needs_node,
                      std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs, const char* op,
                      BackwardFn<Scalar> backward) {
  Tensor<Scalar> out(std::move(shape), std::move(data));
  if (needs_node) {
    auto node = std::make_shared<Node<Scalar>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  return out;
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> data, const std::vector<Tensor<Scalar>>& inputs,
                           const char* op, BackwardFn<Scalar> backward) {
  bool needs = false;
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> impls;
  if (grad_enabled()) {
    for (const auto& t : inputs)
      if (t.defined() && t.requires_grad()) needs = true;
    if (needs)
      for (const auto& t : inputs)
        if (t.defined()) impls.push_back(t.impl());
  }
  return attach(std::move(shape), std::move(data), needs, std::move(impls), op,
                needs ? std::move(backward) : BackwardFn<Scalar>{});
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> data,
                           std::initializer_list<Tensor<Scalar>> inputs, const char* op,
                           BackwardFn<Scalar> backward) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor<Scalar>>(inputs), op,
                     std::move(backward));
}

template <typename Scalar>
Graph<Scalar> Graph<Scalar>::build(const Tensor<Scalar>& root) {
  Graph g;
  std::unordered_set<const TensorImpl<Scalar>*> visited;
  // Iterative post-order DFS; deep decoders would overflow a recursive walk.
  std::vector<std::pair<std::shared_ptr<TensorImpl<Scalar>>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node && next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    g.order.push_back(impl);
    stack.pop_back();
  }
  return g;
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;
  const auto graph = Graph<Scalar>::build(loss);
  for (const auto& impl : graph.order)
    if (impl->node) impl->grad.resize(0);
  loss.impl()->grad_buffer() += Scalar(1);
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    const auto& impl = *it;
    if (impl->node && impl->grad.size() == impl->data.size()) impl->node->backward(impl->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template struct Graph<float>;
template struct Graph<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> make_result(Shape, Array<float>, std::initializer_list<Tensor<float>>,
                                   const char*, BackwardFn<float>);
template Tensor<double> make_result(Shape, Array<double>, std::initializer_list<Tensor<double>>,
                                    const char*, BackwardFn<double>);
template Tensor<float> make_result(Shape, Array<float>, const std::vector<Tensor<float>>&,
                                   const char*, BackwardFn<float>);
template Tensor<double> make_result(Shape, Array<double>, const std::vector<Tensor<double>>&,
                                    const char*, BackwardFn<double>);

}  // namespace mvox
