#include "gosvae/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace gosvae {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
namespace {
thread_local bool g_grad_enabled = true;
}
bool grad_enabled() { return g_grad_enabled; }
}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->values.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

double Tensor::value() const {
  if (numel() != 1) throw ValueError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->values[0];
}

double Tensor::at(int y, int x, int c) const {
  const Shape& s = node_->shape;
  if (s.size() != 3) throw ShapeError("at(y,x,c): tensor rank is not 3");
  return node_->values[(static_cast<std::size_t>(y) * s[1] + x) * s[2] + c];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw ValueError("grad(): no gradient present (run backward first)");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

std::uint64_t Tensor::value_digest() const {
  return fnv1a64(node_->values.data(), node_->values.size() * sizeof(double));
}

void Parameter::freeze() {
  frozen = true;
  tensor.node()->requires_grad = false;
  tensor.node()->grad.clear();
}

Tensor make_leaf(Shape shape, std::vector<double> values) {
  Tensor t = Tensor::from_values(std::move(shape), std::move(values), true);
  t.node()->is_leaf = true;
  return t;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined tensor");
  if (loss.numel() != 1)
    throw ValueError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  using detail::Node;
  Node* root = loss.node().get();
  if (!root->requires_grad) {
    // Nothing reachable wants a gradient; still legal, just a no-op.
    return;
  }

  // Iterative DFS postorder over the requires_grad subgraph.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch for this pass; leaves keep accumulating.
  for (Node* n : topo) {
    if (!n->is_leaf) n->grad.assign(n->values.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace gosvae
