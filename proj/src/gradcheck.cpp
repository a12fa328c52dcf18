#include "mbc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mbc {

namespace {

double checked(double v) {
  if (!std::isfinite(v)) throw std::runtime_error("finite difference: non-finite function value");
  return v;
}

}  // namespace

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference: step must be positive");
  NoGradGuard guard;
  Tensor probe = x.detach();
  std::vector<double> out(x.numel());
  auto values = probe.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = checked(f(probe));
    values[i] = saved - h;
    const double down = checked(f(probe));
    values[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(out));
}

double finite_difference_at(const std::function<double()>& f, std::span<double> values, std::size_t index,
                            double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference: step must be positive");
  if (index >= values.size()) throw std::out_of_range("finite difference: index out of range");
  NoGradGuard guard;
  const double saved = values[index];
  values[index] = saved + h;
  const double up = checked(f());
  values[index] = saved - h;
  const double down = checked(f());
  values[index] = saved;
  return (up - down) / (2.0 * h);
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace mbc
