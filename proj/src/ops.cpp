#include "mvox/ops.hpp"

#include "mvox/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mvox {

Index conv_output_length(Index length, Index kernel, Index stride, Index dilation, Index padding) {
  if (kernel < 1) throw DimensionError("conv: kernel size must be >= 1");
  if (stride < 1 || dilation < 1) throw DimensionError("conv: stride and dilation must be >= 1");
  if (padding < 0) throw DimensionError("conv: padding must be >= 0");
  const Index span = dilation * (kernel - 1) + 1;
  if (length + 2 * padding < span)
    throw DimensionError("conv: time axis (last axis) length " + std::to_string(length) +
                         " with padding " + std::to_string(padding) +
                         " is shorter than the dilated kernel span " + std::to_string(span));
  return (length + 2 * padding - span) / stride + 1;
}

Index conv_transpose_output_length(Index length, Index kernel, Index stride, Index padding) {
  if (kernel < 1 || stride < 1) throw DimensionError("conv_transpose: kernel and stride must be >= 1");
  if (length < 1) throw DimensionError("conv_transpose: time axis must be non-empty");
  const Index out = (length - 1) * stride - 2 * padding + kernel;
  if (out < 1) throw DimensionError("conv_transpose: padding removes the whole output");
  return out;
}

namespace {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

template <typename Scalar>
void require_ndim(const Tensor<Scalar>& t, int n, const char* op, const char* what) {
  if (t.ndim() != n)
    throw DimensionError(std::string(op) + ": " + what + " must have " + std::to_string(n) +
                         " axes, got " + shape_string(t.shape()));
}

bool wants_grad(std::initializer_list<bool> flags) {
  if (!grad_enabled()) return false;
  for (bool f : flags)
    if (f) return true;
  return false;
}

// Elementwise op whose derivative is precomputed during the forward pass.
template <typename Scalar, typename Fn, typename Deriv>
Tensor<Scalar> unary(const Tensor<Scalar>& x, const char* op, Fn fn, Deriv deriv) {
  Array<Scalar> y = x.data().unaryExpr(fn);
  if (!wants_grad({x.requires_grad()})) return Tensor<Scalar>(x.shape(), std::move(y));
  Array<Scalar> d = deriv(x.data(), y);
  auto in = x.impl();
  return make_result<Scalar>(x.shape(), std::move(y), {x}, op,
                             [in, d = std::move(d)](const Array<Scalar>& g) {
                               in->grad_buffer() += g * d;
                             });
}

// First output index t with t*stride + offset >= 0, and one past the last
// with t*stride + offset < length, clipped to [0, count).
std::pair<Index, Index> valid_range(Index offset, Index stride, Index length, Index count) {
  Index lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  Index hi = count;
  const Index last = length - 1 - offset;  // need t*stride <= last
  if (last < 0) {
    hi = 0;
  } else {
    hi = std::min(count, last / stride + 1);
  }
  return {std::min(lo, hi), hi};
}

// cols[(c*K + k), t] = x[c, t*stride + k*dilation - padding]
template <typename Scalar>
RowMatrix<Scalar> im2col1d(const Scalar* x, Index channels, Index length, Index kernel,
                           Index stride, Index dilation, Index padding, Index out_len) {
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(channels * kernel, out_len);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* row_in = x + c * length;
    for (Index k = 0; k < kernel; ++k) {
      Scalar* row = cols.data() + (c * kernel + k) * out_len;
      const Index offset = k * dilation - padding;
      const auto [lo, hi] = valid_range(offset, stride, length, out_len);
      if (stride == 1) {
        std::copy(row_in + lo + offset, row_in + hi + offset, row + lo);
      } else {
        for (Index t = lo; t < hi; ++t) row[t] = row_in[t * stride + offset];
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im1d(const RowMatrix<Scalar>& cols, Scalar* dx, Index channels, Index length, Index kernel,
              Index stride, Index dilation, Index padding, Index out_len) {
  for (Index c = 0; c < channels; ++c) {
    Scalar* row_out = dx + c * length;
    for (Index k = 0; k < kernel; ++k) {
      const Scalar* row = cols.data() + (c * kernel + k) * out_len;
      const Index offset = k * dilation - padding;
      const auto [lo, hi] = valid_range(offset, stride, length, out_len);
      for (Index t = lo; t < hi; ++t) row_out[t * stride + offset] += row[t];
    }
  }
}

template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  auto ia = a.impl(), ib = b.impl();
  return make_result<Scalar>(a.shape(), a.data() + b.data(), {a, b}, "add",
                             [ia, ib](const Array<Scalar>& g) {
                               if (ia->requires_grad) ia->grad_buffer() += g;
                               if (ib->requires_grad) ib->grad_buffer() += g;
                             });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  auto ia = a.impl(), ib = b.impl();
  return make_result<Scalar>(a.shape(), a.data() - b.data(), {a, b}, "sub",
                             [ia, ib](const Array<Scalar>& g) {
                               if (ia->requires_grad) ia->grad_buffer() += g;
                               if (ib->requires_grad) ib->grad_buffer() -= g;
                             });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  auto ia = a.impl(), ib = b.impl();
  return make_result<Scalar>(a.shape(), a.data() * b.data(), {a, b}, "mul",
                             [ia, ib](const Array<Scalar>& g) {
                               if (ia->requires_grad) ia->grad_buffer() += g * ib->data;
                               if (ib->requires_grad) ib->grad_buffer() += g * ia->data;
                             });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  auto in = x.impl();
  return make_result<Scalar>(x.shape(), x.data() * factor, {x}, "scale",
                             [in, factor](const Array<Scalar>& g) { in->grad_buffer() += g * factor; });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar value) {
  auto in = x.impl();
  return make_result<Scalar>(x.shape(), x.data() + value, {x}, "add_scalar",
                             [in](const Array<Scalar>& g) { in->grad_buffer() += g; });
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& x) {
  return unary(
      x, "abs", [](Scalar v) { return std::abs(v); },
      [](const Array<Scalar>& in, const Array<Scalar>&) {
        return in.unaryExpr([](Scalar v) { return Scalar(v > 0) - Scalar(v < 0); }).eval();
      });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& x) {
  return unary(
      x, "square", [](Scalar v) { return v * v; },
      [](const Array<Scalar>& in, const Array<Scalar>&) { return (Scalar(2) * in).eval(); });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& x) {
  return unary(
      x, "sqrt", [](Scalar v) { return std::sqrt(v); },
      [](const Array<Scalar>&, const Array<Scalar>& y) { return (Scalar(0.5) / y).eval(); });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  return unary(
      x, "log", [](Scalar v) { return std::log(v); },
      [](const Array<Scalar>& in, const Array<Scalar>&) { return in.inverse().eval(); });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  return unary(
      x, "tanh", [](Scalar v) { return std::tanh(v); },
      [](const Array<Scalar>&, const Array<Scalar>& y) { return (Scalar(1) - y.square()).eval(); });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, Scalar slope) {
  return unary(
      x, "leaky_relu", [slope](Scalar v) { return v > 0 ? v : v * slope; },
      [slope](const Array<Scalar>& in, const Array<Scalar>&) {
        return in.unaryExpr([slope](Scalar v) { return v > 0 ? Scalar(1) : slope; }).eval();
      });
}

template <typename Scalar>
Tensor<Scalar> clamp_min(const Tensor<Scalar>& x, Scalar floor) {
  return unary(
      x, "clamp_min", [floor](Scalar v) { return v > floor ? v : floor; },
      [floor](const Array<Scalar>& in, const Array<Scalar>&) {
        return in.unaryExpr([floor](Scalar v) { return Scalar(v > floor); }).eval();
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  double acc = 0.0;
  const Scalar* p = x.ptr();
  for (Index i = 0; i < x.size(); ++i) acc += static_cast<double>(p[i]);
  auto in = x.impl();
  return make_result<Scalar>({1}, Array<Scalar>::Constant(1, static_cast<Scalar>(acc)), {x}, "sum",
                             [in](const Array<Scalar>& g) { in->grad_buffer() += g[0]; });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  double acc = 0.0;
  const Scalar* p = x.ptr();
  for (Index i = 0; i < x.size(); ++i) acc += static_cast<double>(p[i]);
  const double n = static_cast<double>(x.size());
  auto in = x.impl();
  return make_result<Scalar>({1}, Array<Scalar>::Constant(1, static_cast<Scalar>(acc / n)), {x},
                             "mean", [in, n](const Array<Scalar>& g) {
                               in->grad_buffer() += static_cast<Scalar>(g[0] / n);
                             });
}

namespace {
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index start, Index length) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim()) throw DimensionError("slice: axis out of range");
  const AxisSplit s = split_axis(x.shape(), axis);
  if (start < 0 || length < 1 || start + length > s.extent)
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis " + std::to_string(axis) +
                         " of extent " + std::to_string(s.extent));
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  Array<Scalar> out(numel(shape));
  for (Index o = 0; o < s.outer; ++o)
    out.segment(o * length * s.inner, length * s.inner) =
        x.data().segment((o * s.extent + start) * s.inner, length * s.inner);
  auto in = x.impl();
  return make_result<Scalar>(shape, std::move(out), {x}, "slice",
                             [in, s, start, length](const Array<Scalar>& g) {
                               auto& gx = in->grad_buffer();
                               for (Index o = 0; o < s.outer; ++o)
                                 gx.segment((o * s.extent + start) * s.inner, length * s.inner) +=
                                     g.segment(o * length * s.inner, length * s.inner);
                             });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const int nd = parts.front().ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimensionError("concat: axis out of range");
  Shape shape = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && p.dim(i) != shape[static_cast<std::size_t>(i)])
        throw DimensionError("concat: axis " + std::to_string(i) + " mismatch " +
                             shape_string(p.shape()) + " vs " + shape_string(shape));
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit s = split_axis(shape, axis);
  Array<Scalar> out(numel(shape));
  std::vector<Index> extents;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index e = p.dim(axis);
    for (Index o = 0; o < s.outer; ++o)
      out.segment((o * total + offset) * s.inner, e * s.inner) =
          p.data().segment(o * e * s.inner, e * s.inner);
    extents.push_back(e);
    offset += e;
  }
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_result<Scalar>(shape, std::move(out), parts, "concat",
                             [impls, extents, s, total](const Array<Scalar>& g) {
                               Index offset = 0;
                               for (std::size_t i = 0; i < impls.size(); ++i) {
                                 const Index e = extents[i];
                                 if (impls[i]->requires_grad) {
                                   auto& gp = impls[i]->grad_buffer();
                                   for (Index o = 0; o < s.outer; ++o)
                                     gp.segment(o * e * s.inner, e * s.inner) +=
                                         g.segment((o * total + offset) * s.inner, e * s.inner);
                                 }
                                 offset += e;
                               }
                             });
}

namespace {
Index reflect_index(Index i, Index length) {
  if (length == 1) return 0;
  const Index period = 2 * (length - 1);
  Index m = i % period;
  if (m < 0) m += period;
  return m < length ? m : period - m;
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> pad_reflect(const Tensor<Scalar>& x, Index left, Index right) {
  require_ndim(x, 2, "pad_reflect", "input");
  if (left < 0 || right < 0) throw DimensionError("pad_reflect: negative padding");
  const Index channels = x.dim(0), length = x.dim(1), out_len = length + left + right;
  std::vector<Index> map(static_cast<std::size_t>(out_len));
  for (Index t = 0; t < out_len; ++t) map[static_cast<std::size_t>(t)] = reflect_index(t - left, length);
  Array<Scalar> out(channels * out_len);
  for (Index c = 0; c < channels; ++c)
    for (Index t = 0; t < out_len; ++t)
      out[c * out_len + t] = x.data()[c * length + map[static_cast<std::size_t>(t)]];
  auto in = x.impl();
  return make_result<Scalar>({channels, out_len}, std::move(out), {x}, "pad_reflect",
                             [in, map, channels, length, out_len](const Array<Scalar>& g) {
                               auto& gx = in->grad_buffer();
                               for (Index c = 0; c < channels; ++c)
                                 for (Index t = 0; t < out_len; ++t)
                                   gx[c * length + map[static_cast<std::size_t>(t)]] += g[c * out_len + t];
                             });
}

template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride, Index dilation, Index padding) {
  require_ndim(input, 2, "conv1d", "input");
  require_ndim(weight, 3, "conv1d", "weight");
  const Index cin = input.dim(0), length = input.dim(1);
  const Index cout = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != cin)
    throw DimensionError("conv1d: input channel axis (axis 0) has " + std::to_string(cin) +
                         " channels but weight axis 1 expects " + std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
    throw DimensionError("conv1d: bias must have shape [" + std::to_string(cout) + "], got " +
                         shape_string(bias.shape()));
  const Index out_len = conv_output_length(length, kernel, stride, dilation, padding);

  RowMatrix<Scalar> cols =
      im2col1d(input.ptr(), cin, length, kernel, stride, dilation, padding, out_len);
  ConstMatrixMap<Scalar> w(weight.ptr(), cout, cin * kernel);
  Array<Scalar> out(cout * out_len);
  MatrixMap<Scalar> y(out.data(), cout, out_len);
  y.noalias() = w * cols;
  if (bias.defined()) y.colwise() += Eigen::Map<const ColVector<Scalar>>(bias.ptr(), cout);

  if (!wants_grad({input.requires_grad(), weight.requires_grad(),
                   bias.defined() && bias.requires_grad()}))
    return Tensor<Scalar>({cout, out_len}, std::move(out));

  auto ix = input.impl(), iw = weight.impl();
  auto ib = bias.defined() ? bias.impl() : nullptr;
  return make_result<Scalar>(
      {cout, out_len}, std::move(out), {input, weight, bias}, "conv1d",
      [ix, iw, ib, cols = std::move(cols), cin, length, cout, kernel, stride, dilation, padding,
       out_len](const Array<Scalar>& g) {
        ConstMatrixMap<Scalar> gy(g.data(), cout, out_len);
        if (iw->requires_grad) {
          MatrixMap<Scalar> gw(iw->grad_buffer().data(), cout, cin * kernel);
          gw.noalias() += gy * cols.transpose();
        }
        if (ib && ib->requires_grad) ib->grad_buffer() += gy.rowwise().sum().transpose().array();
        if (ix->requires_grad) {
          ConstMatrixMap<Scalar> w(iw->data.data(), cout, cin * kernel);
          RowMatrix<Scalar> gcols = w.transpose() * gy;
          col2im1d(gcols, ix->grad_buffer().data(), cin, length, kernel, stride, dilation, padding,
                   out_len);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> conv_transpose1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias, Index stride, Index padding) {
  require_ndim(input, 2, "conv_transpose1d", "input");
  require_ndim(weight, 3, "conv_transpose1d", "weight");
  const Index cin = input.dim(0), length = input.dim(1);
  const Index cout = weight.dim(1), kernel = weight.dim(2);
  if (weight.dim(0) != cin)
    throw DimensionError("conv_transpose1d: input channel axis (axis 0) has " +
                         std::to_string(cin) + " channels but weight axis 0 expects " +
                         std::to_string(weight.dim(0)));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
    throw DimensionError("conv_transpose1d: bias must have shape [" + std::to_string(cout) + "]");
  if (padding < 0) throw DimensionError("conv_transpose1d: negative padding");
  const Index out_len = conv_transpose_output_length(length, kernel, stride, padding);

  // The transposed convolution is the adjoint of conv1d(stride, padding):
  // scatter W^T x back through the same im2col geometry.
  ConstMatrixMap<Scalar> w(weight.ptr(), cin, cout * kernel);
  ConstMatrixMap<Scalar> x(input.ptr(), cin, length);
  RowMatrix<Scalar> cols = w.transpose() * x;
  Array<Scalar> out = Array<Scalar>::Zero(cout * out_len);
  col2im1d(cols, out.data(), cout, out_len, kernel, stride, 1, padding, length);
  if (bias.defined()) {
    MatrixMap<Scalar> y(out.data(), cout, out_len);
    y.colwise() += Eigen::Map<const ColVector<Scalar>>(bias.ptr(), cout);
  }
  if (!wants_grad({input.requires_grad(), weight.requires_grad(),
                   bias.defined() && bias.requires_grad()}))
    return Tensor<Scalar>({cout, out_len}, std::move(out));

  auto ix = input.impl(), iw = weight.impl();
  auto ib = bias.defined() ? bias.impl() : nullptr;
  return make_result<Scalar>(
      {cout, out_len}, std::move(out), {input, weight, bias}, "conv_transpose1d",
      [ix, iw, ib, cin, length, cout, kernel, stride, padding, out_len](const Array<Scalar>& g) {
        RowMatrix<Scalar> gcols =
            im2col1d(g.data(), cout, out_len, kernel, stride, 1, padding, length);
        if (iw->requires_grad) {
          ConstMatrixMap<Scalar> x(ix->data.data(), cin, length);
          MatrixMap<Scalar> gw(iw->grad_buffer().data(), cin, cout * kernel);
          gw.noalias() += x * gcols.transpose();
        }
        if (ib && ib->requires_grad) {
          ConstMatrixMap<Scalar> gy(g.data(), cout, out_len);
          ib->grad_buffer() += gy.rowwise().sum().transpose().array();
        }
        if (ix->requires_grad) {
          ConstMatrixMap<Scalar> w(iw->data.data(), cin, cout * kernel);
          MatrixMap<Scalar> gx(ix->grad_buffer().data(), cin, length);
          gx.noalias() += w * gcols;
        }
      });
}

namespace {
struct Conv2dShape {
  Index cin, h, w, cout, kh, kw, oh, ow;
  Conv2dGeometry geo;
};

template <typename Scalar>
RowMatrix<Scalar> im2col2d(const Scalar* x, const Conv2dShape& s) {
  const Index plane = s.oh * s.ow;
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(s.cin * s.kh * s.kw, plane);
  for (Index c = 0; c < s.cin; ++c)
    for (Index a = 0; a < s.kh; ++a)
      for (Index b = 0; b < s.kw; ++b) {
        Scalar* row = cols.data() + ((c * s.kh + a) * s.kw + b) * plane;
        const Index off_w = b - s.geo.pad_w;
        const auto [wlo, whi] = valid_range(off_w, s.geo.stride_w, s.w, s.ow);
        for (Index i = 0; i < s.oh; ++i) {
          const Index src_h = i * s.geo.stride_h + a - s.geo.pad_h;
          if (src_h < 0 || src_h >= s.h) continue;
          const Scalar* src = x + (c * s.h + src_h) * s.w;
          Scalar* dst = row + i * s.ow;
          for (Index j = wlo; j < whi; ++j) dst[j] = src[j * s.geo.stride_w + off_w];
        }
      }
  return cols;
}

template <typename Scalar>
void col2im2d(const RowMatrix<Scalar>& cols, Scalar* dx, const Conv2dShape& s) {
  const Index plane = s.oh * s.ow;
  for (Index c = 0; c < s.cin; ++c)
    for (Index a = 0; a < s.kh; ++a)
      for (Index b = 0; b < s.kw; ++b) {
        const Scalar* row = cols.data() + ((c * s.kh + a) * s.kw + b) * plane;
        const Index off_w = b - s.geo.pad_w;
        const auto [wlo, whi] = valid_range(off_w, s.geo.stride_w, s.w, s.ow);
        for (Index i = 0; i < s.oh; ++i) {
          const Index src_h = i * s.geo.stride_h + a - s.geo.pad_h;
          if (src_h < 0 || src_h >= s.h) continue;
          Scalar* dst = dx + (c * s.h + src_h) * s.w;
          const Scalar* src = row + i * s.ow;
          for (Index j = wlo; j < whi; ++j) dst[j * s.geo.stride_w + off_w] += src[j];
        }
      }
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Conv2dGeometry geometry) {
  require_ndim(input, 3, "conv2d", "input");
  require_ndim(weight, 4, "conv2d", "weight");
  Conv2dShape s{};
  s.cin = input.dim(0);
  s.h = input.dim(1);
  s.w = input.dim(2);
  s.cout = weight.dim(0);
  s.kh = weight.dim(2);
  s.kw = weight.dim(3);
  s.geo = geometry;
  if (weight.dim(1) != s.cin)
    throw DimensionError("conv2d: input channel axis (axis 0) has " + std::to_string(s.cin) +
                         " channels but weight axis 1 expects " + std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != s.cout))
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(s.cout) + "]");
  s.oh = conv_output_length(s.h, s.kh, geometry.stride_h, 1, geometry.pad_h);
  s.ow = conv_output_length(s.w, s.kw, geometry.stride_w, 1, geometry.pad_w);
  const Index plane = s.oh * s.ow;

  RowMatrix<Scalar> cols = im2col2d(input.ptr(), s);
  ConstMatrixMap<Scalar> w(weight.ptr(), s.cout, s.cin * s.kh * s.kw);
  Array<Scalar> out(s.cout * plane);
  MatrixMap<Scalar> y(out.data(), s.cout, plane);
  y.noalias() = w * cols;
  if (bias.defined()) y.colwise() += Eigen::Map<const ColVector<Scalar>>(bias.ptr(), s.cout);

  const Shape shape{s.cout, s.oh, s.ow};
  if (!wants_grad({input.requires_grad(), weight.requires_grad(),
                   bias.defined() && bias.requires_grad()}))
    return Tensor<Scalar>(shape, std::move(out));

  auto ix = input.impl(), iw = weight.impl();
  auto ib = bias.defined() ? bias.impl() : nullptr;
  // Columns are only needed for the weight gradient.
  if (!weight.requires_grad()) cols.resize(0, 0);
  return make_result<Scalar>(
      shape, std::move(out), {input, weight, bias}, "conv2d",
      [ix, iw, ib, cols = std::move(cols), s, plane](const Array<Scalar>& g) {
        ConstMatrixMap<Scalar> gy(g.data(), s.cout, plane);
        if (iw->requires_grad) {
          MatrixMap<Scalar> gw(iw->grad_buffer().data(), s.cout, s.cin * s.kh * s.kw);
          if (cols.size() > 0) {
            gw.noalias() += gy * cols.transpose();
          } else {
            gw.noalias() += gy * im2col2d(ix->data.data(), s).transpose();
          }
        }
        if (ib && ib->requires_grad) ib->grad_buffer() += gy.rowwise().sum().transpose().array();
        if (ix->requires_grad) {
          ConstMatrixMap<Scalar> w(iw->data.data(), s.cout, s.cin * s.kh * s.kw);
          RowMatrix<Scalar> gcols = w.transpose() * gy;
          col2im2d(gcols, ix->grad_buffer().data(), s);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> avg_pool1d(const Tensor<Scalar>& input, Index kernel, Index stride) {
  require_ndim(input, 2, "avg_pool1d", "input");
  const Index channels = input.dim(0), length = input.dim(1);
  if (kernel < 1 || stride < 1) throw DimensionError("avg_pool1d: kernel and stride must be >= 1");
  if (kernel > length)
    throw DimensionError("avg_pool1d: kernel " + std::to_string(kernel) +
                         " exceeds time axis (axis 1) length " + std::to_string(length));
  const Index out_len = (length - kernel) / stride + 1;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(kernel);
  Array<Scalar> out(channels * out_len);
  for (Index c = 0; c < channels; ++c)
    for (Index t = 0; t < out_len; ++t)
      out[c * out_len + t] = input.data().segment(c * length + t * stride, kernel).sum() * inv;
  auto in = input.impl();
  return make_result<Scalar>({channels, out_len}, std::move(out), {input}, "avg_pool1d",
                             [in, channels, length, out_len, kernel, stride, inv](const Array<Scalar>& g) {
                               auto& gx = in->grad_buffer();
                               for (Index c = 0; c < channels; ++c)
                                 for (Index t = 0; t < out_len; ++t)
                                   gx.segment(c * length + t * stride, kernel) += g[c * out_len + t] * inv;
                             });
}

template <typename Scalar>
Tensor<Scalar> snake(const Tensor<Scalar>& x, const Tensor<Scalar>& log_alpha) {
  if (x.ndim() < 1) throw DimensionError("snake: input must have a channel axis");
  const Index channels = x.dim(0), inner = x.size() / channels;
  if (log_alpha.ndim() != 1 || log_alpha.dim(0) != channels)
    throw DimensionError("snake: alpha must have one entry per channel (axis 0 has " +
                         std::to_string(channels) + "), got " + shape_string(log_alpha.shape()));
  Array<Scalar> out(x.size());
  const bool grad = wants_grad({x.requires_grad(), log_alpha.requires_grad()});
  Array<Scalar> dx, dlog;
  if (grad) {
    dx.resize(x.size());
    dlog.resize(x.size());
  }
  for (Index c = 0; c < channels; ++c) {
    const Scalar alpha = std::exp(log_alpha[c]);
    const Scalar inv = Scalar(1) / alpha;
    const auto v = x.data().segment(c * inner, inner);
    const Array<Scalar> a = alpha * v;
    const Array<Scalar> s = a.sin();
    const Array<Scalar> sq = s.square() * inv;
    out.segment(c * inner, inner) = v + sq;
    if (grad) {
      const Array<Scalar> s2 = Scalar(2) * s * a.cos();  // sin(2 alpha x)
      dx.segment(c * inner, inner) = Scalar(1) + s2;
      dlog.segment(c * inner, inner) = v * s2 - sq;  // d/d(log alpha)
    }
  }
  if (!grad) return Tensor<Scalar>(x.shape(), std::move(out));
  auto ix = x.impl(), ia = log_alpha.impl();
  return make_result<Scalar>(x.shape(), std::move(out), {x, log_alpha}, "snake",
                             [ix, ia, dx = std::move(dx), dlog = std::move(dlog), channels,
                              inner](const Array<Scalar>& g) {
                               if (ix->requires_grad) ix->grad_buffer() += g * dx;
                               if (ia->requires_grad) {
                                 auto& ga = ia->grad_buffer();
                                 for (Index c = 0; c < channels; ++c)
                                   ga[c] += (g.segment(c * inner, inner) * dlog.segment(c * inner, inner)).sum();
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_ndim(a, 2, "matmul", "left operand");
  require_ndim(b, 2, "matmul", "right operand");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ (left axis 1 = " + std::to_string(k) +
                         ", right axis 0 = " + std::to_string(b.dim(0)) + ")");
  Array<Scalar> out(m * n);
  MatrixMap<Scalar>(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  auto ia = a.impl(), ib = b.impl();
  return make_result<Scalar>({m, n}, std::move(out), {a, b}, "matmul",
                             [ia, ib, m, k, n](const Array<Scalar>& g) {
                               ConstMatrixMap<Scalar> gy(g.data(), m, n);
                               if (ia->requires_grad) {
                                 MatrixMap<Scalar> ga(ia->grad_buffer().data(), m, k);
                                 ga.noalias() += gy * ConstMatrixMap<Scalar>(ib->data.data(), k, n).transpose();
                               }
                               if (ib->requires_grad) {
                                 MatrixMap<Scalar> gb(ib->grad_buffer().data(), k, n);
                                 gb.noalias() += ConstMatrixMap<Scalar>(ia->data.data(), m, k).transpose() * gy;
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> zero_stuff(const Tensor<Scalar>& x, Index factor) {
  require_ndim(x, 2, "zero_stuff", "input");
  if (factor < 1) throw DimensionError("zero_stuff: factor must be >= 1");
  const Index channels = x.dim(0), length = x.dim(1);
  Array<Scalar> out = Array<Scalar>::Zero(channels * length * factor);
  for (Index c = 0; c < channels; ++c)
    for (Index t = 0; t < length; ++t) out[(c * length + t) * factor] = x[c * length + t];
  auto in = x.impl();
  return make_result<Scalar>({channels, length * factor}, std::move(out), {x}, "zero_stuff",
                             [in, channels, length, factor](const Array<Scalar>& g) {
                               auto& gx = in->grad_buffer();
                               for (Index i = 0; i < channels * length; ++i) gx[i] += g[i * factor];
                             });
}

template <typename Scalar>
Tensor<Scalar> depthwise_fir(const Tensor<Scalar>& x, const std::vector<double>& taps, Index stride,
                             Index pad_left, Index pad_right) {
  require_ndim(x, 2, "depthwise_fir", "input");
  const Index channels = x.dim(0), length = x.dim(1), k = static_cast<Index>(taps.size());
  if (k < 1 || stride < 1) throw DimensionError("depthwise_fir: empty taps or bad stride");
  const Index padded = length + pad_left + pad_right;
  if (padded < k) throw DimensionError("depthwise_fir: signal shorter than filter");
  const Index out_len = (padded - k) / stride + 1;
  std::vector<Scalar> h(taps.begin(), taps.end());
  // Source index for each padded position (edge replicate).
  std::vector<Index> src(static_cast<std::size_t>(padded));
  for (Index p = 0; p < padded; ++p)
    src[static_cast<std::size_t>(p)] = std::clamp<Index>(p - pad_left, 0, length - 1);
  Array<Scalar> out(channels * out_len);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* xc = x.ptr() + c * length;
    for (Index t = 0; t < out_len; ++t) {
      Scalar acc = 0;
      const Index base = t * stride;
      for (Index j = 0; j < k; ++j) acc += h[static_cast<std::size_t>(j)] * xc[src[static_cast<std::size_t>(base + j)]];
      out[c * out_len + t] = acc;
    }
  }
  auto in = x.impl();
  return make_result<Scalar>({channels, out_len}, std::move(out), {x}, "depthwise_fir",
                             [in, h, src, channels, length, out_len, k, stride](const Array<Scalar>& g) {
                               auto& gx = in->grad_buffer();
                               for (Index c = 0; c < channels; ++c) {
                                 Scalar* gc = gx.data() + c * length;
                                 for (Index t = 0; t < out_len; ++t) {
                                   const Scalar gv = g[c * out_len + t];
                                   const Index base = t * stride;
                                   for (Index j = 0; j < k; ++j)
                                     gc[src[static_cast<std::size_t>(base + j)]] += h[static_cast<std::size_t>(j)] * gv;
                                 }
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> straight_through(const Tensor<Scalar>& x, const Tensor<Scalar>& value) {
  require_same_shape(x, value, "straight_through");
  if (!wants_grad({x.requires_grad()})) return Tensor<Scalar>(value.shape(), value.data());
  auto in = x.impl();
  return make_result<Scalar>(value.shape(), value.data(), {x}, "straight_through",
                             [in](const Array<Scalar>& g) { in->grad_buffer() += g; });
}

#define MVOX_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> scale(const Tensor<S>&, S);                                                 \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                            \
  template Tensor<S> abs(const Tensor<S>&);                                                      \
  template Tensor<S> square(const Tensor<S>&);                                                   \
  template Tensor<S> sqrt(const Tensor<S>&);                                                     \
  template Tensor<S> log(const Tensor<S>&);                                                      \
  template Tensor<S> tanh(const Tensor<S>&);                                                     \
  template Tensor<S> leaky_relu(const Tensor<S>&, S);                                            \
  template Tensor<S> clamp_min(const Tensor<S>&, S);                                             \
  template Tensor<S> sum(const Tensor<S>&);                                                      \
  template Tensor<S> mean(const Tensor<S>&);                                                     \
  template Tensor<S> straight_through(const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                                 \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                                 \
  template Tensor<S> pad_reflect(const Tensor<S>&, Index, Index);                                \
  template Tensor<S> conv1d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index,  \
                            Index);                                                              \
  template Tensor<S> conv_transpose1d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                      Index, Index);                                             \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Conv2dGeometry); \
  template Tensor<S> avg_pool1d(const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> snake(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> zero_stuff(const Tensor<S>&, Index);                                        \
  template Tensor<S> depthwise_fir(const Tensor<S>&, const std::vector<double>&, Index, Index, Index);

MVOX_INSTANTIATE_OPS(float)
MVOX_INSTANTIATE_OPS(double)

}  // namespace mvox
