#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ght/common.hpp"
#include "ght/rng.hpp"

namespace ght {

// Dynamic grad mode. Eval-only passes (validation, the voting epoch) run
// under NoGradGuard so no graph is recorded.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// One node of the define-by-run tape. `backward` pulls this node's grad into
// the parents' grad buffers; it is only installed when grad mode is on and
// some ancestor requires gradients.
template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily
  bool requires_grad = false;
  bool tracked = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void(TensorNode<S>&)> backward;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Value-semantic handle onto a tape node.
template <class S>
class Tensor {
 public:
  using Node = TensorNode<S>;
  using scalar_type = S;

  Tensor() : n_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape, S fill = S(0), bool requires_grad = false)
      : n_(std::make_shared<Node>()) {
    n_->shape = std::move(shape);
    n_->value.assign(static_cast<size_t>(numel_of(n_->shape)), fill);
    n_->requires_grad = requires_grad;
    n_->tracked = requires_grad;
  }

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError(strprintf("from_data: shape %s does not hold %zu values",
                                 shape_str(shape).c_str(), data.size()));
    Tensor t;
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    t.n_->tracked = requires_grad;
    return t;
  }

  static Tensor scalar(S v) { return from_data({}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    Tensor t(std::move(shape), S(0), requires_grad);
    for (auto& x : t.n_->value) x = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
    Tensor t(std::move(shape), S(0), requires_grad);
    for (auto& x : t.n_->value) x = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return n_->numel(); }
  int dim() const { return static_cast<int>(n_->shape.size()); }
  int64_t extent(int axis) const { return n_->shape[static_cast<size_t>(axis)]; }

  std::vector<S>& data() { return n_->value; }
  const std::vector<S>& data() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    n_->tracked = n_->tracked || rg;
  }

  bool tracked() const { return n_->tracked; }

  bool has_grad() const { return n_->grad.size() == n_->value.size(); }
  std::vector<S>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<S>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(n_->value.size(), S(0)); }

  S item() const {
    if (numel() != 1)
      throw ContractError(strprintf("item: tensor %s is not a scalar", shape_str(shape()).c_str()));
    return n_->value[0];
  }

  // Copy of the values, cut from the graph.
  Tensor detach() const {
    Tensor t;
    t.n_->shape = n_->shape;
    t.n_->value = n_->value;
    return t;
  }

  // Reverse-mode sweep from a scalar. Gradients accumulate into every
  // tracked node reachable through the parent links.
  void backward() const {
    if (numel() != 1)
      throw ContractError(strprintf("backward: loss must be scalar, got %s",
                                    shape_str(shape()).c_str()));
    std::vector<Node*> topo;
    topo_order(topo);
    n_->ensure_grad();
    n_->grad[0] += S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* node = *it;
      if (node->backward) node->backward(*node);
    }
  }

  std::shared_ptr<Node> node() const { return n_; }

  // Graph construction helper used by ops: result node with parents wired.
  static Tensor make_op(Shape shape, std::vector<S> value,
                        std::vector<std::shared_ptr<Node>> parents,
                        std::function<void(Node&)> backward_fn) {
    Tensor t;
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(value);
    bool track = false;
    if (grad_enabled()) {
      for (const auto& p : parents)
        if (p && p->tracked) track = true;
    }
    if (track) {
      t.n_->tracked = true;
      t.n_->parents = std::move(parents);
      t.n_->backward = std::move(backward_fn);
    }
    return t;
  }

 private:
  void topo_order(std::vector<Node*>& topo) const {
    // Iterative post-order DFS; recursion depth is unbounded on long graphs.
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    if (!n_->tracked) return;
    stack.emplace_back(n_.get(), 0);
    visited.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* parent = node->parents[idx].get();
        ++idx;
        if (parent && parent->tracked && !visited.count(parent)) {
          visited.insert(parent);
          parent->ensure_grad();
          stack.emplace_back(parent, 0);
        }
      } else {
        topo.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> n_;
};

// Integer id tensor (token ids, labels). Not differentiable.
struct IntTensor {
  Shape shape;
  std::vector<int32_t> data;

  IntTensor() = default;
  IntTensor(Shape s, std::vector<int32_t> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("IntTensor: shape/data mismatch");
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// Boolean attention mask; 1 = position may be attended to.
struct Mask {
  Shape shape;
  std::vector<uint8_t> allow;

  static Mask causal(int64_t t) {
    Mask m;
    m.shape = {t, t};
    m.allow.assign(static_cast<size_t>(t * t), 0);
    for (int64_t q = 0; q < t; ++q)
      for (int64_t k = 0; k <= q; ++k) m.allow[static_cast<size_t>(q * t + k)] = 1;
    return m;
  }
};

}  // namespace ght
