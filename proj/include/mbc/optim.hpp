#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbc/tensor.hpp"

namespace mbc {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update, in place. `name` is reported when the
// gradient holds a non-finite value.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
               std::string_view name = "parameter");

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Adam over a fixed list of parameters. Parameters that received no gradient
// this step are skipped (their moments do not decay).
class Adam {
 public:
  explicit Adam(std::vector<NamedParam> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(double lr);
  void zero_grad();

  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<AdamState> states_;
};

}  // namespace mbc
