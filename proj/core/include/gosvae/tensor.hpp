#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gosvae/common.hpp"

namespace gosvae {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily by backward()
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// While false, newly built ops record no graph (values only). Used for
// teacher targets and evaluation passes.
bool grad_enabled();

}  // namespace detail

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Value-semantic handle to a graph node. Image-like data is laid out
// channels-last: shape {H, W, C}, index (y, x, c) -> (y*W + x)*C + c.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->values.size()); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values() { return node_->values; }
  double value() const;  // scalar tensors only

  double at(int y, int x, int c) const;  // rank-3 convenience accessor

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  std::uint64_t value_digest() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode pass from a scalar loss. Gradients accumulate into leaf nodes
// (parameters); repeated calls without zero_grad keep accumulating.
void backward(const Tensor& loss);

struct Parameter {
  Tensor tensor;
  std::string name;
  bool frozen = false;

  void freeze();
  std::int64_t numel() const { return tensor.numel(); }
};

// Fresh leaf with requires_grad set, for trainable weights.
Tensor make_leaf(Shape shape, std::vector<double> values);

}  // namespace gosvae
