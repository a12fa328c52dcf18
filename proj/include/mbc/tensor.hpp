#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mbc {

// Row-major matrix extent. Scalars are 1x1; zero rows are allowed so that an
// empty prefix can flow through concatenation.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t numel() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(Shape s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized; empty means "no gradient yet"
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Handle onto a node of the computation record. Copies share the node, so a
// parameter Tensor held in two places is one parameter.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  Shape shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t numel() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  std::span<const double> values() const { return node_->value; }
  // Only leaves may be written; interior values are owned by the record.
  std::span<double> mutable_values();
  double at(std::size_t r, std::size_t c) const;
  std::span<const double> row(std::size_t r) const;
  double item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls until zero_grad(); the interior record is released afterwards, so a
  // second call on the same loss throws.
  void backward() const;

  // Deep copy as a fresh leaf with the same requires_grad flag.
  Tensor clone() const;
  // Fresh leaf holding a copy of the values, never requiring grad.
  Tensor detach() const;

  const void* id() const { return node_.get(); }

  // For op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables recording on the current thread while alive. Ops still compute
// values but attach no parents, so nothing downstream requires grad.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

// 64-bit FNV-1a over the bit patterns of the values.
std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace mbc
