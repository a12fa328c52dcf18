#include "mbc/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mbc {

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
               std::string_view name) {
  if (param.size() != grad.size()) {
    throw std::invalid_argument("adam_step: gradient size mismatch for " + std::string(name));
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw std::runtime_error("adam_step: non-finite gradient in " + std::string(name) + " at index " +
                               std::to_string(i));
    }
  }
  if (state.m.size() != param.size()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

Adam::Adam(std::vector<NamedParam> params, double beta1, double beta2, double eps)
    : params_(std::move(params)) {
  states_.resize(params_.size());
  for (auto& s : states_) {
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
  }
}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;
    adam_step(t.mutable_values(), t.grad(), states_[i], lr, params_[i].name);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace mbc
