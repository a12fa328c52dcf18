#include "mbc/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "mbc/ops.hpp"

namespace mbc::layers {

Tensor normal(Rng& rng, Shape shape, double stddev, bool requires_grad) {
  std::vector<double> v(shape.numel());
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor constant(Shape shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

LayerNormParams LayerNormParams::init(std::size_t dim, bool requires_grad) {
  return {constant({1, dim}, 1.0, requires_grad), constant({1, dim}, 0.0, requires_grad)};
}

void LayerNormParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias); }

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t num_heads,
                            std::optional<std::size_t> causal_offset) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw std::invalid_argument("attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) +
                                ", v " + to_string(v.shape()));
  }
  if (num_heads == 0 || d % num_heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(d) + " not divisible into " +
                                std::to_string(num_heads) + " heads");
  }
  const std::size_t dh = d / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    Tensor qh = num_heads == 1 ? q : ops::slice_cols(q, h * dh, dh);
    Tensor kh = num_heads == 1 ? k : ops::slice_cols(k, h * dh, dh);
    Tensor vh = num_heads == 1 ? v : ops::slice_cols(v, h * dh, dh);
    Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
    heads.push_back(ops::matmul(ops::softmax_rows(scores, causal_offset), vh));
  }
  return num_heads == 1 ? heads[0] : ops::concat_cols(heads);
}

FeedForward FeedForward::init(Rng& rng, std::size_t dim, std::size_t hidden, double stddev, double out_stddev,
                              bool requires_grad) {
  FeedForward f;
  f.w1 = normal(rng, {dim, hidden}, stddev, requires_grad);
  f.b1 = constant({1, hidden}, 0.0, requires_grad);
  f.w2 = normal(rng, {hidden, dim}, out_stddev, requires_grad);
  f.b2 = constant({1, dim}, 0.0, requires_grad);
  return f;
}

void FeedForward::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

Tensor FeedForward::operator()(const Tensor& x) const {
  Tensor h = ops::gelu(ops::add_row(ops::matmul(x, w1), b1));
  return ops::add_row(ops::matmul(h, w2), b2);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> v(length * dim);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * freq;
      v[p * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, dim}, std::move(v));
}

std::vector<NamedParam> clone_params(const std::vector<NamedParam>& params) {
  std::vector<NamedParam> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone()});
  return out;
}

std::uint64_t hash_params(const std::vector<NamedParam>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) h = hash_values(p.tensor.values(), h);
  return h;
}

std::size_t count_params(const std::vector<NamedParam>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace mbc::layers
