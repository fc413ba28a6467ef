#pragma once

#include "mvox/tensor.hpp"

#include <vector>

namespace mvox {

// Output length of a 1-D convolution; throws DimensionError when the
// dilated kernel does not fit.
Index conv_output_length(Index length, Index kernel, Index stride, Index dilation, Index padding);
Index conv_transpose_output_length(Index length, Index kernel, Index stride, Index padding);

// Elementwise arithmetic. Shapes must match exactly; there is no broadcasting.
template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);
template <typename Scalar> Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar value);

template <typename Scalar> Tensor<Scalar> abs(const Tensor<Scalar>& x);  // d|x| at 0 is 0
template <typename Scalar> Tensor<Scalar> square(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> sqrt(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> log(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> tanh(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, Scalar slope);
// max(x, floor); no gradient flows where the floor is active.
template <typename Scalar> Tensor<Scalar> clamp_min(const Tensor<Scalar>& x, Scalar floor);

// Reductions return shape [1]. Accumulation runs in double.
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index start, Index length);
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis);

// Pads the last axis of [C,T] by mirroring about the edge samples
// (the edge itself is not repeated). Pads longer than T keep reflecting.
template <typename Scalar>
Tensor<Scalar> pad_reflect(const Tensor<Scalar>& x, Index left, Index right);

// x:[C_in,T] w:[C_out,C_in,K] bias:[C_out] (may be undefined) -> [C_out,T'].
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride = 1, Index dilation = 1,
                      Index padding = 0);

// x:[C_in,T] w:[C_in,C_out,K] -> [C_out,(T-1)*stride-2*padding+K].
template <typename Scalar>
Tensor<Scalar> conv_transpose1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias, Index stride = 1, Index padding = 0);

struct Conv2dGeometry {
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 0, pad_w = 0;
};

// x:[C_in,H,W] w:[C_out,C_in,KH,KW] -> [C_out,H',W'] with zero padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Conv2dGeometry geometry = {});

template <typename Scalar>
Tensor<Scalar> avg_pool1d(const Tensor<Scalar>& input, Index kernel, Index stride);

// x + sin^2(alpha*x)/alpha per channel, alpha = exp(log_alpha[c]).
template <typename Scalar>
Tensor<Scalar> snake(const Tensor<Scalar>& x, const Tensor<Scalar>& log_alpha);

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Inserts factor-1 zeros after every sample of [C,T] -> [C,T*factor].
template <typename Scalar>
Tensor<Scalar> zero_stuff(const Tensor<Scalar>& x, Index factor);

// Per-channel FIR with fixed taps over an edge-replicated signal:
// out[c,t] = sum_k taps[k] * x[c, clamp(t*stride + k - pad_left)].
template <typename Scalar>
Tensor<Scalar> depthwise_fir(const Tensor<Scalar>& x, const std::vector<double>& taps,
                             Index stride, Index pad_left, Index pad_right);

// Forward value is `value` exactly; backward hands the incoming gradient to
// `x` unchanged (straight-through estimator). `value` gets no gradient.
template <typename Scalar>
Tensor<Scalar> straight_through(const Tensor<Scalar>& x, const Tensor<Scalar>& value);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

}  // namespace mvox
