#pragma once

#include <cstdint>
#include <vector>

#include "gosvae/tensor.hpp"

namespace gosvae {

// Learnable codebook e in R^{K x D}, serialized under the name "codebook".
struct Codebook {
  Parameter e;

  int K() const { return e.tensor.dim(0); }
  int D() const { return e.tensor.dim(1); }

  // Components drawn uniformly from [-1/K, 1/K].
  static Codebook init(int K, int D, std::uint64_t seed);
};

// Codeword indices of a quantized (H/r)x(W/r) feature map; the only payload
// that crosses the wire.
struct IndexMap {
  int h = 0;
  int w = 0;
  std::uint32_t K = 0;
  std::vector<std::uint32_t> idx;

  std::size_t count() const { return idx.size(); }
  bool operator==(const IndexMap& o) const = default;
};

// Nearest codeword per position (exact argmin over squared L2, ties to the
// lowest index). Pure lookup; no gradient flows through it.
IndexMap quantize(const Tensor& z_e, const Codebook& cb);

// z_q[i][j] = e[idx[i][j]]. Differentiable w.r.t. the codebook (scatter-add).
Tensor dequantize(const IndexMap& idx, const Codebook& cb);

struct VqLossTerms {
  Tensor codebook_term;    // mean over positions of ||sg[z_e] - z_q||^2
  Tensor commitment_term;  // beta * mean over positions of ||z_e - sg[z_q]||^2
};

VqLossTerms vq_losses(const Tensor& z_e, const Tensor& z_q, double beta);

std::vector<std::int64_t> codebook_usage(const IndexMap& idx);

}  // namespace gosvae
