#include "gosvae/adam.hpp"

#include <cmath>

namespace gosvae {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ValueError("adam: lr must be > 0");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::size_t n = params_[i]->tensor.values().size();
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  const bool single = precision() == Precision::Single;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (p->frozen) continue;
    auto node = p->tensor.node();
    if (node->grad.empty()) continue;
    double* w = node->values.data();
    const double* g = node->grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const std::size_t n = node->values.size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (single) {
        m[k] = squash_single(m[k]);
        v[k] = squash_single(v[k]);
        w[k] = squash_single(w[k]);
      }
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->tensor.zero_grad();
}

}  // namespace gosvae
