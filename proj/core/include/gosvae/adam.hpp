#pragma once

#include <vector>

#include "gosvae/tensor.hpp"

namespace gosvae {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Moment buffers persist per
// parameter slot; frozen parameters are never touched.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  // Applies one update from the gradients currently accumulated on the
  // parameters, then clears them. Parameters without a gradient are skipped.
  void step();

  void zero_grad();
  int t() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

}  // namespace gosvae
