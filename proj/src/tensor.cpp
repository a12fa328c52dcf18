#include "mbc/tensor.hpp"

#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace mbc {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string to_string(Shape s) {
  return "(" + std::to_string(s.rows) + ", " + std::to_string(s.cols) + ")";
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (values.size() != shape.numel()) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + to_string(shape));
  }
  node_->shape = shape;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.numel(), 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1, 1}, {v}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw std::logic_error("tensor: cannot mutate an interior node");
  return node_->value;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw std::out_of_range("tensor: index out of range");
  return node_->value[r * cols() + c];
}

std::span<const double> Tensor::row(std::size_t r) const {
  if (r >= rows()) throw std::out_of_range("tensor: row out of range");
  return std::span<const double>(node_->value).subspan(r * cols(), cols());
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on shape " + to_string(shape()));
  return node_->value[0];
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + to_string(shape()));
  }
  if (node_->consumed) {
    throw std::logic_error("backward: record already consumed; run a new forward pass");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        if (p->consumed) {
          throw std::logic_error("backward: record already consumed; run a new forward pass");
        }
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->leaf) continue;
    if (!n->grad.empty() && n->backward_fn) n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (n->leaf) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  return Tensor(shape(), node_->value, node_->requires_grad);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace mbc
