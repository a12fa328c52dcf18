#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mbc/optim.hpp"
#include "mbc/rng.hpp"
#include "mbc/tensor.hpp"

// Building blocks shared by the encoders, the aggregator and the decoder.
namespace mbc::layers {

Tensor normal(Rng& rng, Shape shape, double stddev, bool requires_grad);
Tensor constant(Shape shape, double value, bool requires_grad);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t dim, bool requires_grad);
  LayerNormParams clone() const { return {gain.clone(), bias.clone()}; }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  Tensor operator()(const Tensor& x) const;
};

// softmax(q kᵀ / sqrt(d_head)) v computed per head over column slices of the
// already-projected q, k, v; heads are concatenated back to q.cols() columns.
// causal_offset as in ops::softmax_rows.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t num_heads,
                            std::optional<std::size_t> causal_offset = std::nullopt);

// Position-wise two-layer GELU network.
struct FeedForward {
  Tensor w1, b1, w2, b2;

  static FeedForward init(Rng& rng, std::size_t dim, std::size_t hidden, double stddev, double out_stddev,
                          bool requires_grad);
  FeedForward clone() const { return {w1.clone(), b1.clone(), w2.clone(), b2.clone()}; }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  Tensor operator()(const Tensor& x) const;
};

// Fixed sinusoidal position table, rows = positions.
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

std::vector<NamedParam> clone_params(const std::vector<NamedParam>& params);
std::uint64_t hash_params(const std::vector<NamedParam>& params);
std::size_t count_params(const std::vector<NamedParam>& params);

}  // namespace mbc::layers
