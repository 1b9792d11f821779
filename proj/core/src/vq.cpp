#include "gosvae/vq.hpp"

#include <limits>

#include "gosvae/ops.hpp"
#include "gosvae/rng.hpp"

namespace gosvae {

Codebook Codebook::init(int K, int D, std::uint64_t seed) {
  if (K < 1 || D < 1) throw ValueError("codebook needs K >= 1 and D >= 1");
  Rng rng(seed);
  const double bound = 1.0 / static_cast<double>(K);
  const bool single = precision() == Precision::Single;
  std::vector<double> vals(static_cast<std::size_t>(K) * D);
  for (double& v : vals) {
    v = rng.uniform(-bound, bound);
    if (single) v = squash_single(v);
  }
  Codebook cb;
  cb.e.tensor = make_leaf({K, D}, std::move(vals));
  cb.e.name = "codebook";
  return cb;
}

IndexMap quantize(const Tensor& z_e, const Codebook& cb) {
  if (z_e.rank() != 3) throw ShapeError("quantize: feature map must be [h,w,D]");
  const int D = cb.D();
  if (z_e.dim(2) != D)
    throw ShapeError("quantize: feature channels " + std::to_string(z_e.dim(2)) +
                     " != codeword length " + std::to_string(D));
  const int K = cb.K();
  const double* e = cb.e.tensor.values().data();
  const double* z = z_e.values().data();
  IndexMap out;
  out.h = z_e.dim(0);
  out.w = z_e.dim(1);
  out.K = static_cast<std::uint32_t>(K);
  const std::size_t positions = static_cast<std::size_t>(out.h) * out.w;
  out.idx.resize(positions);
  parallel_for(positions, 64, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      const double* v = z + p * D;
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (int k = 0; k < K; ++k) {
        const double* row = e + static_cast<std::size_t>(k) * D;
        double d = 0.0;
        for (int c = 0; c < D; ++c) {
          const double diff = v[c] - row[c];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          arg = static_cast<std::uint32_t>(k);
        }
      }
      out.idx[p] = arg;
    }
  });
  return out;
}

Tensor dequantize(const IndexMap& idx, const Codebook& cb) {
  if (idx.K != static_cast<std::uint32_t>(cb.K()))
    throw ValueError("dequantize: index map was produced against K=" + std::to_string(idx.K) +
                     ", codebook has K=" + std::to_string(cb.K()));
  return ops::gather_rows(cb.e.tensor, idx.idx, idx.h, idx.w);
}

VqLossTerms vq_losses(const Tensor& z_e, const Tensor& z_q, double beta) {
  if (z_e.shape() != z_q.shape())
    throw ShapeError("vq_losses: shape mismatch " + shape_str(z_e.shape()) + " vs " +
                     shape_str(z_q.shape()));
  if (beta <= 0.0) throw ValueError("vq_losses: beta must be > 0");
  const double positions = static_cast<double>(z_e.dim(0)) * z_e.dim(1);
  Tensor cb_diff = ops::sub(ops::stop_gradient(z_e), z_q);
  Tensor codebook_term = ops::scale(ops::sum(ops::square(cb_diff)), 1.0 / positions);
  Tensor cm_diff = ops::sub(z_e, ops::stop_gradient(z_q));
  Tensor commitment_term = ops::scale(ops::sum(ops::square(cm_diff)), beta / positions);
  return {codebook_term, commitment_term};
}

std::vector<std::int64_t> codebook_usage(const IndexMap& idx) {
  std::vector<std::int64_t> hist(idx.K, 0);
  for (std::uint32_t k : idx.idx) {
    if (k >= idx.K) throw ValueError("codebook_usage: index out of range");
    ++hist[k];
  }
  return hist;
}

}  // namespace gosvae
