#pragma once

#include <functional>
#include <vector>

#include "mbc/gradcheck.hpp"
#include "mbc/ops.hpp"
#include "mbc/optim.hpp"
#include "mbc/rng.hpp"
#include "mbc/tensor.hpp"

namespace mbc::test {

// Denominator floor for relative gradient errors. Central differences at
// h = 1e-5 in double precision carry roughly 1e-11 absolute noise, so a
// coordinate whose true derivative is below ~1e-5 cannot be compared in
// relative terms; those are compared against the floor instead.
inline constexpr double kGradFloor = 1e-5;

inline Tensor uniform(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0, bool rg = true) {
  std::vector<double> v(s.numel());
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(s, std::move(v), rg);
}

// Max relative error between backward() and central differences of a scalar
// function of one input tensor.
inline double grad_error(const std::function<Tensor(const Tensor&)>& build, const Tensor& x, double h = 1e-5) {
  Tensor leaf = x.detach();
  Tensor rg(leaf.shape(), {leaf.values().begin(), leaf.values().end()}, true);
  build(rg).backward();
  std::vector<double> analytic(rg.grad().begin(), rg.grad().end());
  if (analytic.empty()) analytic.assign(rg.numel(), 0.0);
  Tensor numeric = finite_difference_gradient([&](const Tensor& p) { return build(p).item(); }, leaf, h);
  return max_relative_error(analytic, numeric.values(), kGradFloor);
}

// Same check for a parameter the loss reads implicitly; `coords` selects
// which coordinates to probe (all when empty). Gradients must already be
// populated by the caller's backward().
inline double param_grad_error(const std::function<double()>& loss, Tensor param, const std::vector<std::size_t>& coords,
                               double h = 1e-5) {
  std::vector<double> analytic(param.grad().begin(), param.grad().end());
  if (analytic.empty()) analytic.assign(param.numel(), 0.0);
  double worst = 0.0;
  auto values = param.mutable_values();
  auto probe = [&](std::size_t i) {
    const double fd = finite_difference_at(loss, values, i, h);
    worst = std::max(worst, relative_error(analytic[i], fd, kGradFloor));
  };
  if (coords.empty()) {
    for (std::size_t i = 0; i < values.size(); ++i) probe(i);
  } else {
    for (std::size_t i : coords) probe(i);
  }
  return worst;
}

inline std::vector<std::size_t> sample_coords(Rng& rng, std::size_t n, std::size_t k) {
  return rng.sample_without_replacement(n, std::min(n, k));
}

}  // namespace mbc::test
