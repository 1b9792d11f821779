#pragma once

#include <cstdint>
#include <vector>

#include "gosvae/common.hpp"
#include "gosvae/tensor.hpp"

namespace gosvae::ops {

// Elementwise (operands must have identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor square(const Tensor& a);

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Forward identity, zero gradient into the argument.
Tensor stop_gradient(const Tensor& a);

// Forward value of z_q; whole incoming gradient is routed to z_e, none to z_q.
Tensor straight_through(const Tensor& z_e, const Tensor& z_q);

// Per-pixel softmax over the channel axis of an [H,W,m] tensor, with
// subtract-max stabilization.
Tensor softmax_channels(const Tensor& a);

// Per-position channel vector v -> v / sqrt(sum v^2 + 1e-10), for [H,W,C].
Tensor unit_normalize_channels(const Tensor& a);

// input [H,W,Cin], kernel [kh,kw,Cin,Cout], bias [Cout].
// Output [Ho,Wo,Cout] with Ho = floor((H + 2*padding - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding);

// input [h,w,Cin], kernel [kh,kw,Cin,Cout], bias [Cout] -> [h*stride, w*stride, Cout].
// Exact adjoint of conv2d at the same stride with padding (kh - stride)/2;
// requires kh >= stride and kh - stride even.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride);

// Mean over pixels of -log softmax(logits)[label]; logits [H,W,m].
Tensor cross_entropy_with_labels(const Tensor& logits, const LabelMap& labels);

// rows[i] of matrix [K,D] gathered into an [h,w,D] map; gradient scatters
// back into the matrix.
Tensor gather_rows(const Tensor& matrix, const std::vector<std::uint32_t>& rows, int h, int w);

}  // namespace gosvae::ops
