#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mbc/layers.hpp"
#include "mbc/optim.hpp"
#include "mbc/rng.hpp"
#include "mbc/tensor.hpp"

namespace mbc::aggregator {

struct AggregatorConfig {
  std::size_t dim = 64;     // D
  std::size_t tokens = 12;  // T, rows of the modulation
  std::size_t num_blocks = 4;
  std::size_t num_heads = 4;

  void validate() const;
};

struct CrossAttentionBlock {
  layers::LayerNormParams norm_q;
  layers::LayerNormParams norm_kv;
  Tensor wq, wk, wv, wo;  // D × D
};

// Block 0 lets a learned T-row seed read the query representation; every
// later block reads the memory entries. Pre-norm, residual, no MLP.
struct AggregatorParams {
  Tensor seed;  // T × D
  std::vector<CrossAttentionBlock> blocks;

  static AggregatorParams init(const AggregatorConfig& cfg, Rng& rng);
  AggregatorParams clone() const;
  std::vector<NamedParam> named(const std::string& prefix) const;
};

// Query-independent part of aggregation: entries in canonical order,
// concatenated, normalized and projected to keys/values for blocks 1..B-1.
// Build once per set of entries and reuse for every query.
struct PreparedMemory {
  std::size_t num_entries = 0;
  std::size_t entry_rows = 0;  // n·T
  std::vector<Tensor> keys;    // index b-1 for block b
  std::vector<Tensor> values;
};

struct AggregateStats {
  std::size_t calls = 0;
  std::size_t peak_entry_rows = 0;
};

// Entries are sorted lexicographically by value before concatenation, which
// makes the result bit-identical under any permutation of the input list.
PreparedMemory prepare_memory(std::span<const Tensor> entries, const AggregatorParams& params,
                              const AggregatorConfig& cfg);

Tensor attend(const Tensor& query_rep, const PreparedMemory& memory, const AggregatorParams& params,
              const AggregatorConfig& cfg, AggregateStats* stats = nullptr);

// φ* = h_ψ(query, entries). Throws on an empty entry list.
Tensor aggregate(const Tensor& query_rep, std::span<const Tensor> entries, const AggregatorParams& params,
                 const AggregatorConfig& cfg, AggregateStats* stats = nullptr);

// Contiguous groups of at most M entries are aggregated into pseudo-entries,
// recursively, until one group remains. M >= n is exactly the flat call.
// M = 1 would never shrink the list, so it behaves as M = 2.
Tensor hierarchical_aggregate(const Tensor& query_rep, std::span<const Tensor> entries,
                              const AggregatorParams& params, const AggregatorConfig& cfg, std::size_t group_size,
                              AggregateStats* stats = nullptr);

// Same recursion, with the first level served from per-group memories that
// were prepared ahead of time (groups must be contiguous, in order).
Tensor hierarchical_attend(const Tensor& query_rep, std::span<const PreparedMemory> first_level,
                           const AggregatorParams& params, const AggregatorConfig& cfg, std::size_t group_size,
                           AggregateStats* stats = nullptr);

// Lexicographic order over the flattened values; stable for equal entries.
std::vector<std::size_t> canonical_order(std::span<const Tensor> entries);

}  // namespace mbc::aggregator
