#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "mbc/tensor.hpp"

namespace mbc {

// Central-difference estimate (f(x+h·e_i) − f(x−h·e_i)) / 2h for every
// coordinate of x. f is evaluated with recording disabled.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

// Same estimate for one coordinate of a value buffer that f reads implicitly
// (a model parameter). The buffer is restored before returning.
double finite_difference_at(const std::function<double()>& f, std::span<double> values, std::size_t index,
                            double h = 1e-5);

// |a − b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
// gradient is near zero from reporting cancellation noise as relative error.
double relative_error(double a, double b, double floor = 1e-8);

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace mbc
