#pragma once

// Internal dense convolution kernels (cross-correlation convention), shared by
// the autodiff ops. Instantiated for float (Single mode) and double. All
// routines are deterministic for a fixed input regardless of thread count:
// parallel chunks either write disjoint outputs or reduce over a fixed number
// of partial buffers in a fixed order.

#include <cstddef>

namespace gosvae::convk {

struct ConvDims {
  int H, W, Ci;      // input
  int kh, kw, Co;    // kernel
  int stride, pad;
  int Ho, Wo;        // output
};

// out[Ho,Wo,Co] = cross_correlate(in, w) + bias (bias may be null)
template <typename T>
void conv_fwd(const ConvDims& d, const T* in, const T* w, const T* bias, T* out);

// din[H,W,Ci] = adjoint of conv_fwd applied to dout[Ho,Wo,Co]
template <typename T>
void conv_bwd_input(const ConvDims& d, const T* dout, const T* w, T* din);

// dw[kh,kw,Ci,Co] += correlation of in with dout; db[Co] += column sums
template <typename T>
void conv_bwd_kernel(const ConvDims& d, const T* in, const T* dout, T* dw, T* db);

}  // namespace gosvae::convk
