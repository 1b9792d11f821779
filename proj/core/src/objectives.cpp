#include "gosvae/objectives.hpp"

#include <cmath>

#include "gosvae/ops.hpp"
#include "gosvae/vq.hpp"

namespace gosvae {

namespace {

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined()) throw ValueError(std::string(op) + ": undefined input");
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// mean over pixels == sum over all entries / (H*W)
Tensor pixel_mean(const Tensor& per_entry_sum_terms) {
  const double pixels =
      static_cast<double>(per_entry_sum_terms.dim(0)) * per_entry_sum_terms.dim(1);
  return ops::scale(ops::sum(per_entry_sum_terms), 1.0 / pixels);
}

}  // namespace

Tensor mse(const Tensor& x, const Tensor& xhat) {
  check_pair(x, xhat, "mse");
  return ops::mean(ops::square(ops::sub(x, xhat)));
}

Tensor kld(const Tensor& P, const Tensor& Q) {
  check_pair(P, Q, "kld");
  if (P.rank() != 3) throw ShapeError("kld: expected [H,W,m]");
  Tensor log_ratio = ops::sub(ops::log_elem(ops::add_scalar(P, kDivergenceEps)),
                              ops::log_elem(ops::add_scalar(Q, kDivergenceEps)));
  return pixel_mean(ops::mul(P, log_ratio));
}

Tensor jsd(const Tensor& S, const Tensor& Shat) {
  check_pair(S, Shat, "jsd");
  Tensor M = ops::scale(ops::add(S, Shat), 0.5);
  return ops::add(ops::scale(kld(S, M), 0.5), ops::scale(kld(Shat, M), 0.5));
}

Tensor ce(const Tensor& S, const Tensor& Shat) {
  check_pair(S, Shat, "ce");
  if (S.rank() != 3) throw ShapeError("ce: expected [H,W,m]");
  const int m = S.dim(2);
  const std::size_t pixels = static_cast<std::size_t>(S.dim(0)) * S.dim(1);
  // Teacher argmax with ties to the lowest index; the teacher side carries no
  // gradient by construction.
  LabelMap hard;
  hard.h = S.dim(0);
  hard.w = S.dim(1);
  hard.v.resize(pixels);
  const double* sv = S.values().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* row = sv + p * m;
    int arg = 0;
    for (int c = 1; c < m; ++c)
      if (row[c] > row[arg]) arg = c;
    hard.v[p] = static_cast<std::uint8_t>(arg);
  }
  // -ln(Shat[hard] + eps) via a one-hot mask so the gradient reaches Shat.
  std::vector<double> mask(pixels * static_cast<std::size_t>(m), 0.0);
  for (std::size_t p = 0; p < pixels; ++p) mask[p * m + hard.v[p]] = 1.0;
  Tensor mask_t = Tensor::from_values(S.shape(), std::move(mask));
  Tensor picked = ops::mul(mask_t, ops::log_elem(ops::add_scalar(Shat, kDivergenceEps)));
  return ops::scale(pixel_mean(picked), -1.0);
}

Tensor perceptual(const FeatureExtractor& fx, const Tensor& x, const Tensor& xhat) {
  check_pair(x, xhat, "perceptual");
  auto ta = fx.taps(x);
  auto tb = fx.taps(xhat);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < ta.size(); ++s) {
    Tensor da = ops::unit_normalize_channels(ta[s]);
    Tensor db = ops::unit_normalize_channels(tb[s]);
    total = ops::add(total, ops::mean(ops::square(ops::sub(da, db))));
  }
  return total;
}

const char* composite_name(CompositeScheme s) {
  switch (s) {
    case CompositeScheme::Lv: return "Lv";
    case CompositeScheme::Ls: return "Ls";
    case CompositeScheme::Lsc: return "Lsc";
    case CompositeScheme::Lvk: return "Lvk";
    case CompositeScheme::Lvp: return "Lvp";
    case CompositeScheme::Lk: return "Lk";
    case CompositeScheme::Lkp: return "Lkp";
  }
  return "?";
}

CompositeLoss composite(CompositeScheme scheme, const CompositeInputs& in, const Tensor& z_e,
                        const Tensor& z_q, double beta) {
  const bool needs_images = scheme == CompositeScheme::Lv || scheme == CompositeScheme::Lvk;
  const bool needs_perceptual = scheme == CompositeScheme::Ls || scheme == CompositeScheme::Lvp ||
                                scheme == CompositeScheme::Lkp;
  const bool needs_segdists = scheme == CompositeScheme::Ls || scheme == CompositeScheme::Lsc ||
                              scheme == CompositeScheme::Lvk || scheme == CompositeScheme::Lk ||
                              scheme == CompositeScheme::Lkp;
  const char* name = composite_name(scheme);
  if ((needs_images || needs_perceptual) && (!in.x || !in.xhat))
    throw ValueError(std::string(name) + ": missing image pair");
  if (needs_perceptual && !in.fx)
    throw ValueError(std::string(name) + ": missing feature extractor");
  if (needs_segdists && (!in.S || !in.Shat))
    throw ValueError(std::string(name) + ": missing segmentation distributions");

  VqLossTerms vql = vq_losses(z_e, z_q, beta);
  CompositeLoss out;
  Tensor total = ops::add(vql.codebook_term, vql.commitment_term);
  out.values.codebook = vql.codebook_term.value();
  out.values.commitment = vql.commitment_term.value();

  Tensor teacher;
  if (needs_segdists) teacher = ops::stop_gradient(*in.S);

  if (needs_images) {
    Tensor rec = mse(*in.x, *in.xhat);
    out.values.reconstruction = rec.value();
    total = ops::add(total, rec);
  }
  if (needs_perceptual) {
    Tensor per = perceptual(*in.fx, *in.x, *in.xhat);
    out.values.perceptual = per.value();
    total = ops::add(total, per);
  }
  if (needs_segdists) {
    Tensor div;
    if (scheme == CompositeScheme::Ls) {
      div = jsd(teacher, *in.Shat);
    } else if (scheme == CompositeScheme::Lsc) {
      div = ce(teacher, *in.Shat);
    } else {
      div = kld(teacher, *in.Shat);
    }
    out.values.divergence = div.value();
    total = ops::add(total, div);
  }

  out.total = total;
  // The reported total is the exact sum of the reported terms; the graph
  // total may differ by single-mode rounding.
  out.values.total = out.values.reconstruction + out.values.divergence + out.values.perceptual +
                     out.values.codebook + out.values.commitment;
  return out;
}

bool is_segdist(const Tensor& t, double tol) {
  if (!t.defined() || t.rank() != 3) return false;
  const int m = t.dim(2);
  const std::size_t pixels = static_cast<std::size_t>(t.dim(0)) * t.dim(1);
  const double* v = t.values().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    double s = 0.0;
    for (int c = 0; c < m; ++c) {
      const double x = v[p * m + c];
      if (x < -tol) return false;
      s += x;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace gosvae
