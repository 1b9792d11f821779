#include "gosvae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "conv_kernels.hpp"

namespace gosvae::ops {

using detail::Node;

namespace {

bool want_single() { return precision() == Precision::Single; }

void squash_all(std::vector<double>& v) {
  if (!want_single()) return;
  for (double& x : v) x = squash_single(x);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void add_into(Node* parent, const double* contrib, std::size_t n) {
  parent->ensure_grad();
  double* g = parent->grad.data();
  for (std::size_t i = 0; i < n; ++i) g[i] += contrib[i];
}

// Builds the result node. When the graph is disabled or no parent needs a
// gradient, the result is a detached constant.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  squash_all(values);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool track = detail::grad_enabled();
  bool any_grad = false;
  for (const Tensor& p : parents) any_grad = any_grad || p.requires_grad();
  if (track && any_grad) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

std::vector<float> to_float(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

std::vector<double> to_double(const std::vector<float>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (pa->requires_grad) add_into(pa, self.grad.data(), self.grad.size());
    if (pb->requires_grad) add_into(pb, self.grad.data(), self.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (pa->requires_grad) add_into(pa, self.grad.data(), self.grad.size());
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->values[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->values[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= s;
  return make_result(a.shape(), std::move(v), {a}, [s](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x += c;
  return make_result(a.shape(), std::move(v), {a}, [](Node& self) {
    Node* pa = self.parents[0].get();
    if (pa->requires_grad) add_into(pa, self.grad.data(), self.grad.size());
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  return make_result(a.shape(), std::move(v), {a}, [](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pa->values[i] > 0.0) pa->grad[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return make_result(a.shape(), std::move(v), {a}, [](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.values[i];
      pa->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor log_elem(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = std::log(x);
  return make_result(a.shape(), std::move(v), {a}, [](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] += self.grad[i] / pa->values[i];
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= x;
  return make_result(a.shape(), std::move(v), {a}, [](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] += 2.0 * pa->values[i] * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result({1}, {s}, {a}, [](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self.grad[0];
    for (double& x : pa->grad) x += g;
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double x : a.values()) s += x;
  s *= inv;
  return make_result({1}, {s}, {a}, [inv](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self.grad[0] * inv;
    for (double& x : pa->grad) x += g;
  });
}

Tensor stop_gradient(const Tensor& a) {
  auto n = std::make_shared<Node>();
  n->shape = a.shape();
  n->values = a.values();
  n->requires_grad = false;
  return Tensor(std::move(n));
}

// Routing only: the forward values are bit-identical to z_q in every
// precision mode, so this bypasses the single-mode rounding of make_result.
Tensor straight_through(const Tensor& z_e, const Tensor& z_q) {
  check_same_shape(z_e, z_q, "straight_through");
  auto n = std::make_shared<Node>();
  n->shape = z_q.shape();
  n->values = z_q.values();
  if (detail::grad_enabled() && z_e.requires_grad()) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents.push_back(z_e.node());
    n->backward_fn = [](Node& self) {
      Node* pe = self.parents[0].get();
      if (pe->requires_grad) add_into(pe, self.grad.data(), self.grad.size());
    };
  }
  return Tensor(std::move(n));
}

Tensor softmax_channels(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("softmax_channels: expected rank-3 [H,W,m]");
  const int m = a.dim(2);
  const std::size_t pixels = static_cast<std::size_t>(a.dim(0)) * a.dim(1);
  std::vector<double> v(a.values());
  for (std::size_t p = 0; p < pixels; ++p) {
    double* row = v.data() + p * m;
    double mx = row[0];
    for (int c = 1; c < m; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int c = 0; c < m; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    const double inv = 1.0 / z;
    for (int c = 0; c < m; ++c) row[c] *= inv;
  }
  return make_result(a.shape(), std::move(v), {a}, [m, pixels](Node& self) {
    Node* pa = self.parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* y = self.values.data() + p * m;
      const double* g = self.grad.data() + p * m;
      double dot = 0.0;
      for (int c = 0; c < m; ++c) dot += g[c] * y[c];
      double* out = pa->grad.data() + p * m;
      for (int c = 0; c < m; ++c) out[c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor unit_normalize_channels(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("unit_normalize_channels: expected rank-3 [H,W,C]");
  constexpr double kEps = 1e-10;
  const int C = a.dim(2);
  const std::size_t pixels = static_cast<std::size_t>(a.dim(0)) * a.dim(1);
  std::vector<double> v(a.values());
  std::vector<double> inv_norm(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    double* row = v.data() + p * C;
    double n2 = kEps;
    for (int c = 0; c < C; ++c) n2 += row[c] * row[c];
    const double inv = 1.0 / std::sqrt(n2);
    inv_norm[p] = inv;
    for (int c = 0; c < C; ++c) row[c] *= inv;
  }
  return make_result(a.shape(), std::move(v), {a},
                     [C, pixels, inv_norm = std::move(inv_norm)](Node& self) {
                       Node* pa = self.parents[0].get();
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (std::size_t p = 0; p < pixels; ++p) {
                         const double* x = pa->values.data() + p * C;
                         const double* g = self.grad.data() + p * C;
                         const double inv = inv_norm[p];
                         double xg = 0.0;
                         for (int c = 0; c < C; ++c) xg += x[c] * g[c];
                         const double k = xg * inv * inv * inv;
                         double* out = pa->grad.data() + p * C;
                         for (int c = 0; c < C; ++c) out[c] += g[c] * inv - x[c] * k;
                       }
                     });
}

namespace {

convk::ConvDims conv_dims(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                          int stride, int padding) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be [H,W,Cin]");
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout]");
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
  convk::ConvDims d;
  d.H = input.dim(0);
  d.W = input.dim(1);
  d.Ci = input.dim(2);
  d.kh = kernel.dim(0);
  d.kw = kernel.dim(1);
  d.Co = kernel.dim(3);
  d.stride = stride;
  d.pad = padding;
  if (kernel.dim(2) != d.Ci)
    throw ShapeError("conv2d: input channels " + std::to_string(d.Ci) +
                     " != kernel channels " + std::to_string(kernel.dim(2)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.Co))
    throw ShapeError("conv2d: bias must be [Cout]");
  if (d.H + 2 * padding < d.kh || d.W + 2 * padding < d.kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
  return d;
}

// Dispatches a conv routine in the active precision.
template <typename FwdF, typename FwdD>
std::vector<double> run_conv(std::size_t out_size, FwdF&& ff, FwdD&& fd) {
  if (want_single()) {
    std::vector<float> out(out_size, 0.0f);
    ff(out.data());
    return to_double(out);
  }
  std::vector<double> out(out_size, 0.0);
  fd(out.data());
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
  convk::ConvDims d = conv_dims(input, kernel, bias, stride, padding);
  const std::size_t out_size = static_cast<std::size_t>(d.Ho) * d.Wo * d.Co;

  std::vector<double> out = run_conv(
      out_size,
      [&](float* o) {
        auto in = to_float(input.values());
        auto w = to_float(kernel.values());
        std::vector<float> b;
        if (bias.defined()) b = to_float(bias.values());
        convk::conv_fwd<float>(d, in.data(), w.data(), bias.defined() ? b.data() : nullptr, o);
      },
      [&](double* o) {
        convk::conv_fwd<double>(d, input.values().data(), kernel.values().data(),
                                bias.defined() ? bias.values().data() : nullptr, o);
      });

  std::vector<Tensor> parents = {input, kernel};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result({d.Ho, d.Wo, d.Co}, std::move(out), std::move(parents),
                     [d, has_bias](Node& self) {
                       Node* pin = self.parents[0].get();
                       Node* pker = self.parents[1].get();
                       Node* pbias = has_bias ? self.parents[2].get() : nullptr;
                       const bool single = want_single();
                       if (single) {
                         auto g = to_float(self.grad);
                         if (pin->requires_grad) {
                           auto w = to_float(pker->values);
                           std::vector<float> din(pin->values.size());
                           convk::conv_bwd_input<float>(d, g.data(), w.data(), din.data());
                           pin->ensure_grad();
                           for (std::size_t i = 0; i < din.size(); ++i)
                             pin->grad[i] += static_cast<double>(din[i]);
                         }
                         if (pker->requires_grad || (pbias && pbias->requires_grad)) {
                           auto in = to_float(pin->values);
                           std::vector<float> dw(pker->values.size(), 0.0f);
                           std::vector<float> db(pbias ? pbias->values.size() : 0, 0.0f);
                           convk::conv_bwd_kernel<float>(d, in.data(), g.data(), dw.data(),
                                                         pbias ? db.data() : nullptr);
                           if (pker->requires_grad) {
                             pker->ensure_grad();
                             for (std::size_t i = 0; i < dw.size(); ++i)
                               pker->grad[i] += static_cast<double>(dw[i]);
                           }
                           if (pbias && pbias->requires_grad) {
                             pbias->ensure_grad();
                             for (std::size_t i = 0; i < db.size(); ++i)
                               pbias->grad[i] += static_cast<double>(db[i]);
                           }
                         }
                         return;
                       }
                       if (pin->requires_grad) {
                         std::vector<double> din(pin->values.size());
                         convk::conv_bwd_input<double>(d, self.grad.data(), pker->values.data(),
                                                       din.data());
                         add_into(pin, din.data(), din.size());
                       }
                       if (pker->requires_grad || (pbias && pbias->requires_grad)) {
                         std::vector<double> dw(pker->values.size(), 0.0);
                         std::vector<double> db(pbias ? pbias->values.size() : 0, 0.0);
                         convk::conv_bwd_kernel<double>(d, pin->values.data(), self.grad.data(),
                                                        dw.data(), pbias ? db.data() : nullptr);
                         if (pker->requires_grad) add_into(pker, dw.data(), dw.size());
                         if (pbias && pbias->requires_grad) add_into(pbias, db.data(), db.size());
                       }
                     });
}

namespace {

// Kernel with channel axes swapped: out[ky,kx,co,ci] = w[ky,kx,ci,co].
std::vector<double> transpose_kernel_channels(const std::vector<double>& w, int kh, int kw, int ci,
                                              int co) {
  std::vector<double> out(w.size());
  for (int k = 0; k < kh * kw; ++k) {
    const double* src = w.data() + static_cast<std::size_t>(k) * ci * co;
    double* dst = out.data() + static_cast<std::size_t>(k) * ci * co;
    for (int a = 0; a < ci; ++a)
      for (int b = 0; b < co; ++b) dst[b * ci + a] = src[a * co + b];
  }
  return out;
}

}  // namespace

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        int stride) {
  if (input.rank() != 3) throw ShapeError("conv_transpose2d: input must be [h,w,Cin]");
  if (kernel.rank() != 4) throw ShapeError("conv_transpose2d: kernel must be [kh,kw,Cin,Cout]");
  if (stride < 1) throw ValueError("conv_transpose2d: stride must be >= 1");
  const int h = input.dim(0), w = input.dim(1), Ci = input.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), Co = kernel.dim(3);
  if (kernel.dim(2) != Ci)
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(Ci) +
                     " != kernel channels " + std::to_string(kernel.dim(2)));
  if (kh < stride || kw < stride || (kh - stride) % 2 != 0 || (kw - stride) % 2 != 0)
    throw ShapeError("conv_transpose2d: kernel must satisfy k >= stride with k - stride even");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Co))
    throw ShapeError("conv_transpose2d: bias must be [Cout]");

  // Equivalent forward conv whose input-adjoint realizes this upsampling.
  convk::ConvDims d;
  d.H = h * stride;
  d.W = w * stride;
  d.Ci = Co;
  d.kh = kh;
  d.kw = kw;
  d.Co = Ci;
  d.stride = stride;
  d.pad = (kh - stride) / 2;
  d.Ho = h;
  d.Wo = w;

  const std::size_t out_size = static_cast<std::size_t>(d.H) * d.W * d.Ci;
  std::vector<double> wt = transpose_kernel_channels(kernel.values(), kh, kw, Ci, Co);

  std::vector<double> out = run_conv(
      out_size,
      [&](float* o) {
        auto in = to_float(input.values());
        auto wf = to_float(wt);
        convk::conv_bwd_input<float>(d, in.data(), wf.data(), o);
      },
      [&](double* o) { convk::conv_bwd_input<double>(d, input.values().data(), wt.data(), o); });
  if (bias.defined()) {
    const auto& bv = bias.values();
    for (std::size_t p = 0; p < out_size / Co; ++p)
      for (int c = 0; c < Co; ++c) out[p * Co + c] += bv[c];
    squash_all(out);
  }

  std::vector<Tensor> parents = {input, kernel};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  const int Ci_c = Ci, Co_c = Co, kh_c = kh, kw_c = kw;
  return make_result(
      {d.H, d.W, Co}, std::move(out), std::move(parents),
      [d, has_bias, Ci_c, Co_c, kh_c, kw_c](Node& self) {
        Node* pin = self.parents[0].get();
        Node* pker = self.parents[1].get();
        Node* pbias = has_bias ? self.parents[2].get() : nullptr;
        std::vector<double> wt =
            transpose_kernel_channels(pker->values, kh_c, kw_c, Ci_c, Co_c);
        const bool single = want_single();

        auto accum_dw = [&](const std::vector<double>& dwt) {
          // dwt is [kh,kw,Co,Ci]; fold back into [kh,kw,Ci,Cout] layout.
          pker->ensure_grad();
          for (int k = 0; k < kh_c * kw_c; ++k) {
            const double* src = dwt.data() + static_cast<std::size_t>(k) * Ci_c * Co_c;
            double* dst = pker->grad.data() + static_cast<std::size_t>(k) * Ci_c * Co_c;
            for (int b = 0; b < Co_c; ++b)
              for (int a = 0; a < Ci_c; ++a) dst[a * Co_c + b] += src[b * Ci_c + a];
          }
        };

        if (pin->requires_grad) {
          std::vector<double> din(pin->values.size());
          if (single) {
            auto g = to_float(self.grad);
            auto wf = to_float(wt);
            std::vector<float> dinf(din.size(), 0.0f);
            convk::conv_fwd<float>(d, g.data(), wf.data(), nullptr, dinf.data());
            for (std::size_t i = 0; i < din.size(); ++i) din[i] = dinf[i];
          } else {
            convk::conv_fwd<double>(d, self.grad.data(), wt.data(), nullptr, din.data());
          }
          add_into(pin, din.data(), din.size());
        }
        if (pker->requires_grad) {
          std::vector<double> dwt(wt.size(), 0.0);
          if (single) {
            auto g = to_float(self.grad);
            auto in = to_float(pin->values);
            std::vector<float> dwf(wt.size(), 0.0f);
            convk::conv_bwd_kernel<float>(d, g.data(), in.data(), dwf.data(), nullptr);
            for (std::size_t i = 0; i < dwt.size(); ++i) dwt[i] = dwf[i];
          } else {
            convk::conv_bwd_kernel<double>(d, self.grad.data(), pin->values.data(), dwt.data(),
                                           nullptr);
          }
          accum_dw(dwt);
        }
        if (pbias && pbias->requires_grad) {
          pbias->ensure_grad();
          const std::size_t pixels = self.values.size() / Co_c;
          for (std::size_t p = 0; p < pixels; ++p)
            for (int c = 0; c < Co_c; ++c) pbias->grad[c] += self.grad[p * Co_c + c];
        }
      });
}

Tensor cross_entropy_with_labels(const Tensor& logits, const LabelMap& labels) {
  if (logits.rank() != 3) throw ShapeError("cross_entropy_with_labels: logits must be [H,W,m]");
  const int H = logits.dim(0), W = logits.dim(1), m = logits.dim(2);
  if (labels.h != H || labels.w != W)
    throw ShapeError("cross_entropy_with_labels: label map size mismatch");
  const std::size_t pixels = static_cast<std::size_t>(H) * W;

  std::vector<double> probs(logits.values());
  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::uint8_t lbl = labels.v[p];
    if (lbl >= m) throw ValueError("cross_entropy_with_labels: label out of range");
    double* row = probs.data() + p * m;
    double mx = row[0];
    for (int c = 1; c < m; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int c = 0; c < m; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    total += std::log(z) + mx - logits.values()[p * m + lbl];
    const double inv = 1.0 / z;
    for (int c = 0; c < m; ++c) row[c] *= inv;
  }
  total /= static_cast<double>(pixels);

  std::vector<std::uint8_t> lbl_copy = labels.v;
  return make_result(
      {1}, {total}, {logits},
      [m, pixels, probs = std::move(probs), lbl = std::move(lbl_copy)](Node& self) {
        Node* pa = self.parents[0].get();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
          const double* pr = probs.data() + p * m;
          double* out = pa->grad.data() + p * m;
          for (int c = 0; c < m; ++c) out[c] += g * pr[c];
          out[lbl[p]] -= g;
        }
      });
}

Tensor gather_rows(const Tensor& matrix, const std::vector<std::uint32_t>& rows, int h, int w) {
  if (matrix.rank() != 2) throw ShapeError("gather_rows: matrix must be [K,D]");
  const int K = matrix.dim(0), D = matrix.dim(1);
  if (static_cast<std::size_t>(h) * w != rows.size())
    throw ShapeError("gather_rows: h*w does not match index count");
  std::vector<double> v(rows.size() * static_cast<std::size_t>(D));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::uint32_t>(K))
      throw ValueError("gather_rows: index " + std::to_string(rows[i]) + " out of range for K=" +
                       std::to_string(K));
    std::memcpy(v.data() + i * D, matrix.values().data() + static_cast<std::size_t>(rows[i]) * D,
                sizeof(double) * static_cast<std::size_t>(D));
  }
  // Pure gather: values are copied rows, bit-exact in every precision mode.
  auto n = std::make_shared<Node>();
  n->shape = {h, w, D};
  n->values = std::move(v);
  if (detail::grad_enabled() && matrix.requires_grad()) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents.push_back(matrix.node());
    n->backward_fn = [D, rows](Node& self) {
      Node* pm = self.parents[0].get();
      if (!pm->requires_grad) return;
      pm->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* g = self.grad.data() + i * D;
        double* out = pm->grad.data() + static_cast<std::size_t>(rows[i]) * D;
        for (int c = 0; c < D; ++c) out[c] += g[c];
      }
    };
  }
  return Tensor(std::move(n));
}

}  // namespace gosvae::ops
