#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mbc/tensor.hpp"

// The closed primitive set. Everything else in the library is composed from
// these; each one records its own backward rule.
namespace mbc::ops {

Tensor matmul(const Tensor& a, const Tensor& b);     // a · b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a · bᵀ

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a (n×d) + row (1×d) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);

// tanh-form GELU.
Tensor gelu(const Tensor& a);

// Row-wise softmax. With causal_offset = k, row i only sees columns j <= i + k;
// masked entries come out exactly zero.
Tensor softmax_rows(const Tensor& a, std::optional<std::size_t> causal_offset = std::nullopt);

// Per-row normalization with learned gain and bias (1×d each).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Gathers rows of `table`; gradient scatters back additively.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// Mean negative log-likelihood of targets under row-softmax(logits). Entries
// equal to kIgnore are masked out of the mean.
inline constexpr long kIgnore = -1;
Tensor cross_entropy(const Tensor& logits, std::span<const long> targets);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);

Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);

// sg[x]: forward identity, backward zero.
Tensor stop_gradient(const Tensor& x);

// Convenience compositions.
inline Tensor sum_squares(const Tensor& a) { return sum(mul(a, a)); }

// Test hook that pins every non-differentiable choice made during a forward
// pass: stop_gradient outputs and discrete selections (code assignments).
// Record once at a base point, then replay so a perturbed forward keeps those
// branches constant; this is what a finite-difference oracle has to compare
// a straight-through gradient against.
class FrozenBranches {
 public:
  enum class Mode { record, replay };

  FrozenBranches();
  ~FrozenBranches();
  FrozenBranches(const FrozenBranches&) = delete;
  FrozenBranches& operator=(const FrozenBranches&) = delete;

  void start_replay();

  static FrozenBranches* active();

  // Returns the value to use for a stop-gradient output.
  std::vector<double> pass_value(std::vector<double> computed);
  // Returns the selection to use for a discrete choice.
  std::vector<std::size_t> pass_choice(std::vector<std::size_t> computed);

 private:
  Mode mode_ = Mode::record;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<std::size_t>> choices_;
  std::size_t value_cursor_ = 0;
  std::size_t choice_cursor_ = 0;
  FrozenBranches* previous_;
};

}  // namespace mbc::ops
