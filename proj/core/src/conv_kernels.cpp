#include "conv_kernels.hpp"

#include <cstring>
#include <vector>

#include "gosvae/common.hpp"

namespace gosvae::convk {

namespace {

// Partial-buffer count for reductions that would otherwise race. Fixed so the
// accumulation order never depends on the machine's thread count.
constexpr std::size_t kReduceChunks = 8;

template <typename T>
void im2col_one(const ConvDims& d, const T* in, std::size_t r, T* row) {
  const int oy = static_cast<int>(r) / d.Wo;
  const int ox = static_cast<int>(r) % d.Wo;
  for (int ky = 0; ky < d.kh; ++ky) {
    const int iy = oy * d.stride + ky - d.pad;
    for (int kx = 0; kx < d.kw; ++kx) {
      const int ix = ox * d.stride + kx - d.pad;
      T* dst = row + (ky * d.kw + kx) * d.Ci;
      if (iy < 0 || iy >= d.H || ix < 0 || ix >= d.W) {
        for (int c = 0; c < d.Ci; ++c) dst[c] = T(0);
      } else {
        const T* src = in + (static_cast<std::size_t>(iy) * d.W + ix) * d.Ci;
        std::memcpy(dst, src, sizeof(T) * static_cast<std::size_t>(d.Ci));
      }
    }
  }
}

}  // namespace

template <typename T>
void conv_fwd(const ConvDims& d, const T* in, const T* w, const T* bias, T* out) {
  const std::size_t rows = static_cast<std::size_t>(d.Ho) * d.Wo;
  const int kdim = d.kh * d.kw * d.Ci;
  std::vector<T> col(rows * static_cast<std::size_t>(kdim));
  const std::size_t grain = std::max<std::size_t>(1, 65536 / (static_cast<std::size_t>(kdim) * d.Co + 1));
  parallel_for(rows, grain, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) im2col_one(d, in, r, col.data() + r * kdim);
    for (std::size_t r = r0; r < r1; ++r) {
      const T* a = col.data() + r * kdim;
      T* o = out + r * d.Co;
      if (bias) {
        std::memcpy(o, bias, sizeof(T) * static_cast<std::size_t>(d.Co));
      } else {
        for (int j = 0; j < d.Co; ++j) o[j] = T(0);
      }
      for (int k = 0; k < kdim; ++k) {
        const T av = a[k];
        if (av == T(0)) continue;
        const T* wrow = w + static_cast<std::size_t>(k) * d.Co;
        for (int j = 0; j < d.Co; ++j) o[j] += av * wrow[j];
      }
    }
  });
}

template <typename T>
void conv_bwd_input(const ConvDims& d, const T* dout, const T* w, T* din) {
  // Channel-transposed kernel so the inner update is an axpy over the Ci
  // lanes (vectorizes without FP reassociation).
  const std::size_t ksz = static_cast<std::size_t>(d.kh) * d.kw;
  std::vector<T> wt(ksz * static_cast<std::size_t>(d.Ci) * d.Co);
  for (std::size_t k = 0; k < ksz; ++k) {
    const T* src = w + k * d.Ci * d.Co;
    T* dst = wt.data() + k * d.Ci * d.Co;
    for (int c = 0; c < d.Ci; ++c)
      for (int j = 0; j < d.Co; ++j) dst[static_cast<std::size_t>(j) * d.Ci + c] =
          src[static_cast<std::size_t>(c) * d.Co + j];
  }
  const std::size_t pixels = static_cast<std::size_t>(d.H) * d.W;
  const std::size_t grain =
      std::max<std::size_t>(1, 65536 / (static_cast<std::size_t>(d.kh) * d.kw * d.Ci * d.Co + 1));
  parallel_for(pixels, grain, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      const int iy = static_cast<int>(p) / d.W;
      const int ix = static_cast<int>(p) % d.W;
      T* acc = din + p * d.Ci;
      for (int c = 0; c < d.Ci; ++c) acc[c] = T(0);
      for (int ky = 0; ky < d.kh; ++ky) {
        const int ynum = iy + d.pad - ky;
        if (ynum < 0 || ynum % d.stride != 0) continue;
        const int oy = ynum / d.stride;
        if (oy >= d.Ho) continue;
        for (int kx = 0; kx < d.kw; ++kx) {
          const int xnum = ix + d.pad - kx;
          if (xnum < 0 || xnum % d.stride != 0) continue;
          const int ox = xnum / d.stride;
          if (ox >= d.Wo) continue;
          const T* g = dout + (static_cast<std::size_t>(oy) * d.Wo + ox) * d.Co;
          const T* wbase = wt.data() + (static_cast<std::size_t>(ky) * d.kw + kx) * d.Ci * d.Co;
          for (int j = 0; j < d.Co; ++j) {
            const T gv = g[j];
            if (gv == T(0)) continue;
            const T* wrow = wbase + static_cast<std::size_t>(j) * d.Ci;
            for (int c = 0; c < d.Ci; ++c) acc[c] += gv * wrow[c];
          }
        }
      }
    }
  });
}

template <typename T>
void conv_bwd_kernel(const ConvDims& d, const T* in, const T* dout, T* dw, T* db) {
  const std::size_t rows = static_cast<std::size_t>(d.Ho) * d.Wo;
  const std::size_t wsize = static_cast<std::size_t>(d.kh) * d.kw * d.Ci * d.Co;
  const int kdim = d.kh * d.kw * d.Ci;

  const std::size_t chunks = std::min(kReduceChunks, std::max<std::size_t>(1, rows));
  std::vector<T> partial(chunks * wsize, T(0));
  std::vector<T> pbias(db ? chunks * static_cast<std::size_t>(d.Co) : 0, T(0));
  std::vector<std::size_t> bounds(chunks + 1);
  for (std::size_t c = 0; c <= chunks; ++c) bounds[c] = rows * c / chunks;

  parallel_for(chunks, 1, [&](std::size_t c0, std::size_t c1) {
    std::vector<T> colrow(static_cast<std::size_t>(kdim));
    for (std::size_t c = c0; c < c1; ++c) {
      T* pw = partial.data() + c * wsize;
      T* pb = db ? pbias.data() + c * d.Co : nullptr;
      for (std::size_t r = bounds[c]; r < bounds[c + 1]; ++r) {
        im2col_one(d, in, r, colrow.data());
        const T* g = dout + r * d.Co;
        if (pb) {
          for (int j = 0; j < d.Co; ++j) pb[j] += g[j];
        }
        for (int k = 0; k < kdim; ++k) {
          const T av = colrow[static_cast<std::size_t>(k)];
          if (av == T(0)) continue;
          T* wrow = pw + static_cast<std::size_t>(k) * d.Co;
          for (int j = 0; j < d.Co; ++j) wrow[j] += av * g[j];
        }
      }
    }
  });

  for (std::size_t c = 0; c < chunks; ++c) {
    const T* pw = partial.data() + c * wsize;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += pw[i];
    if (db) {
      const T* pb = pbias.data() + c * d.Co;
      for (int j = 0; j < d.Co; ++j) db[j] += pb[j];
    }
  }
}

template void conv_fwd<float>(const ConvDims&, const float*, const float*, const float*, float*);
template void conv_fwd<double>(const ConvDims&, const double*, const double*, const double*,
                               double*);
template void conv_bwd_input<float>(const ConvDims&, const float*, const float*, float*);
template void conv_bwd_input<double>(const ConvDims&, const double*, const double*, double*);
template void conv_bwd_kernel<float>(const ConvDims&, const float*, const float*, float*, float*);
template void conv_bwd_kernel<double>(const ConvDims&, const double*, const double*, double*,
                                      double*);

}  // namespace gosvae::convk
