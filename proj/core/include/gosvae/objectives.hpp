#pragma once

#include <string>

#include "gosvae/nets.hpp"
#include "gosvae/tensor.hpp"

namespace gosvae {

inline constexpr double kDivergenceEps = 1e-8;

// Pixel-wise mean squared error over all H*W*3 entries.
Tensor mse(const Tensor& x, const Tensor& xhat);

// Mean over pixels of sum_c P ln((P+eps)/(Q+eps)), natural log.
Tensor kld(const Tensor& P, const Tensor& Q);

// Jensen-Shannon divergence against the pixelwise mixture M = (S+Shat)/2;
// symmetric and bounded by ln 2.
Tensor jsd(const Tensor& S, const Tensor& Shat);

// Hard-teacher cross-entropy: per pixel -ln(Shat[argmax_c S] + eps), mean
// over pixels; argmax ties go to the lowest class index.
Tensor ce(const Tensor& S, const Tensor& Shat);

// Perceptual distance under a frozen extractor: per scale, unit-normalize
// channel vectors, take squared differences, average over positions and
// channels, then sum the three scales.
Tensor perceptual(const FeatureExtractor& fx, const Tensor& x, const Tensor& xhat);

// The term sets of the training objectives. Every composite carries the
// codebook and beta-weighted commitment terms; the rest varies:
//   Lv   mse                     Ls   perceptual + jsd
//   Lsc  ce                      Lvk  mse + kld
//   Lvp  perceptual              Lk   kld
//   Lkp  perceptual + kld
enum class CompositeScheme { Lv, Ls, Lsc, Lvk, Lvp, Lk, Lkp };

const char* composite_name(CompositeScheme s);

struct LossBreakdown {
  double reconstruction = 0.0;  // mse term
  double divergence = 0.0;      // jsd / kld / ce term
  double perceptual = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double total = 0.0;
};

struct CompositeLoss {
  Tensor total;  // scalar graph node for backward()
  LossBreakdown values;
};

struct CompositeInputs {
  const Tensor* x = nullptr;
  const Tensor* xhat = nullptr;
  const Tensor* S = nullptr;     // teacher; stop-gradient is applied internally
  const Tensor* Shat = nullptr;
  const FeatureExtractor* fx = nullptr;
};

CompositeLoss composite(CompositeScheme scheme, const CompositeInputs& in, const Tensor& z_e,
                        const Tensor& z_q, double beta);

// Simplex check used by tests and input validation.
bool is_segdist(const Tensor& t, double tol = 1e-6);

}  // namespace gosvae
