#include "mbc/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mbc/ops.hpp"

namespace mbc::aggregator {

void AggregatorConfig::validate() const {
  if (dim == 0 || num_heads == 0 || dim % num_heads != 0) {
    throw std::invalid_argument("aggregator: dim must be divisible by num_heads");
  }
  if (tokens == 0) throw std::invalid_argument("aggregator: tokens must be >= 1");
  if (num_blocks < 2) throw std::invalid_argument("aggregator: need a query block and at least one memory block");
}

AggregatorParams AggregatorParams::init(const AggregatorConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  AggregatorParams p;
  p.seed = layers::normal(rng, {cfg.tokens, d}, 1.0, true);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    CrossAttentionBlock blk;
    blk.norm_q = layers::LayerNormParams::init(d, true);
    blk.norm_kv = layers::LayerNormParams::init(d, true);
    blk.wq = layers::normal(rng, {d, d}, proj, true);
    blk.wk = layers::normal(rng, {d, d}, proj, true);
    blk.wv = layers::normal(rng, {d, d}, proj, true);
    blk.wo = layers::normal(rng, {d, d}, proj, true);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

AggregatorParams AggregatorParams::clone() const {
  AggregatorParams p;
  p.seed = seed.clone();
  for (const auto& b : blocks) {
    p.blocks.push_back({b.norm_q.clone(), b.norm_kv.clone(), b.wq.clone(), b.wk.clone(), b.wv.clone(), b.wo.clone()});
  }
  return p;
}

std::vector<NamedParam> AggregatorParams::named(const std::string& prefix) const {
  std::vector<NamedParam> out;
  out.push_back({prefix + ".seed", seed});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    const auto& b = blocks[i];
    b.norm_q.collect(bp + ".norm_q", out);
    b.norm_kv.collect(bp + ".norm_kv", out);
    out.push_back({bp + ".wq", b.wq});
    out.push_back({bp + ".wk", b.wk});
    out.push_back({bp + ".wv", b.wv});
    out.push_back({bp + ".wo", b.wo});
  }
  return out;
}

std::vector<std::size_t> canonical_order(std::span<const Tensor> entries) {
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto va = entries[a].values();
    auto vb = entries[b].values();
    return std::lexicographical_compare(va.begin(), va.end(), vb.begin(), vb.end());
  });
  return order;
}

namespace {

Tensor cross_block(const CrossAttentionBlock& b, const Tensor& x, const Tensor& k, const Tensor& v,
                   std::size_t heads) {
  Tensor q = ops::matmul(b.norm_q(x), b.wq);
  return ops::add(x, ops::matmul(layers::multi_head_attention(q, k, v, heads), b.wo));
}

void check_config(const AggregatorParams& params, const AggregatorConfig& cfg) {
  if (params.blocks.size() != cfg.num_blocks || params.seed.rows() != cfg.tokens || params.seed.cols() != cfg.dim) {
    throw std::invalid_argument("aggregator: parameters do not match the configuration");
  }
}

}  // namespace

PreparedMemory prepare_memory(std::span<const Tensor> entries, const AggregatorParams& params,
                              const AggregatorConfig& cfg) {
  check_config(params, cfg);
  if (entries.empty()) throw std::invalid_argument("aggregator: no memorized documents");
  std::vector<Tensor> sorted;
  sorted.reserve(entries.size());
  for (std::size_t i : canonical_order(entries)) {
    const Tensor& e = entries[i];
    if (e.rows() != cfg.tokens || e.cols() != cfg.dim) {
      throw std::invalid_argument("aggregator: entry shape " + to_string(e.shape()) + ", expected " +
                                  std::to_string(cfg.tokens) + "x" + std::to_string(cfg.dim));
    }
    sorted.push_back(e);
  }
  Tensor rows = sorted.size() == 1 ? sorted[0] : ops::concat_rows(sorted);
  PreparedMemory mem;
  mem.num_entries = entries.size();
  mem.entry_rows = rows.rows();
  for (std::size_t b = 1; b < params.blocks.size(); ++b) {
    const auto& blk = params.blocks[b];
    Tensor normed = blk.norm_kv(rows);
    mem.keys.push_back(ops::matmul(normed, blk.wk));
    mem.values.push_back(ops::matmul(normed, blk.wv));
  }
  return mem;
}

Tensor attend(const Tensor& query_rep, const PreparedMemory& memory, const AggregatorParams& params,
              const AggregatorConfig& cfg, AggregateStats* stats) {
  check_config(params, cfg);
  if (memory.num_entries == 0) throw std::invalid_argument("aggregator: no memorized documents");
  if (query_rep.cols() != cfg.dim || query_rep.rows() == 0) {
    throw std::invalid_argument("aggregator: query representation is " + to_string(query_rep.shape()));
  }
  const auto& b0 = params.blocks[0];
  Tensor qn = b0.norm_kv(query_rep);
  Tensor x = cross_block(b0, params.seed, ops::matmul(qn, b0.wk), ops::matmul(qn, b0.wv), cfg.num_heads);
  for (std::size_t b = 1; b < params.blocks.size(); ++b) {
    x = cross_block(params.blocks[b], x, memory.keys[b - 1], memory.values[b - 1], cfg.num_heads);
  }
  if (stats) {
    ++stats->calls;
    stats->peak_entry_rows = std::max(stats->peak_entry_rows, memory.entry_rows);
  }
  return x;
}

Tensor aggregate(const Tensor& query_rep, std::span<const Tensor> entries, const AggregatorParams& params,
                 const AggregatorConfig& cfg, AggregateStats* stats) {
  return attend(query_rep, prepare_memory(entries, params, cfg), params, cfg, stats);
}

namespace {

Tensor combine(const Tensor& query_rep, std::vector<Tensor> level, const AggregatorParams& params,
               const AggregatorConfig& cfg, std::size_t m, AggregateStats* stats) {
  while (level.size() > m) {
    std::vector<Tensor> next;
    next.reserve((level.size() + m - 1) / m);
    for (std::size_t start = 0; start < level.size(); start += m) {
      const std::size_t n = std::min(m, level.size() - start);
      next.push_back(aggregate(query_rep, std::span<const Tensor>(level).subspan(start, n), params, cfg, stats));
    }
    level = std::move(next);
  }
  return aggregate(query_rep, level, params, cfg, stats);
}

}  // namespace

Tensor hierarchical_aggregate(const Tensor& query_rep, std::span<const Tensor> entries,
                              const AggregatorParams& params, const AggregatorConfig& cfg, std::size_t group_size,
                              AggregateStats* stats) {
  if (group_size == 0) throw std::invalid_argument("aggregator: group size must be >= 1");
  if (entries.empty()) throw std::invalid_argument("aggregator: no memorized documents");
  const std::size_t m = std::max<std::size_t>(group_size, 2);
  return combine(query_rep, {entries.begin(), entries.end()}, params, cfg, m, stats);
}

Tensor hierarchical_attend(const Tensor& query_rep, std::span<const PreparedMemory> first_level,
                           const AggregatorParams& params, const AggregatorConfig& cfg, std::size_t group_size,
                           AggregateStats* stats) {
  if (group_size == 0) throw std::invalid_argument("aggregator: group size must be >= 1");
  if (first_level.empty()) throw std::invalid_argument("aggregator: no memorized documents");
  if (first_level.size() == 1) return attend(query_rep, first_level[0], params, cfg, stats);
  const std::size_t m = std::max<std::size_t>(group_size, 2);
  std::vector<Tensor> level;
  level.reserve(first_level.size());
  for (const auto& mem : first_level) level.push_back(attend(query_rep, mem, params, cfg, stats));
  return combine(query_rep, std::move(level), params, cfg, m, stats);
}

}  // namespace mbc::aggregator
