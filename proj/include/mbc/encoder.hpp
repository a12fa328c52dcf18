#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mbc/layers.hpp"
#include "mbc/optim.hpp"
#include "mbc/rng.hpp"
#include "mbc/tensor.hpp"

namespace mbc::encoder {

struct EncoderConfig {
  std::size_t vocab_size = 512;
  std::size_t embed_dim = 64;  // D; must equal the decoder hidden size
  std::size_t num_blocks = 2;
  std::size_t num_heads = 4;
  std::size_t max_sequence_length = 64;
  std::size_t output_tokens = 12;  // T

  void validate() const;
};

struct EncoderBlock {
  layers::LayerNormParams attn_norm;
  Tensor wq, wk, wv, wo;
  layers::LayerNormParams ff_norm;
  layers::FeedForward ff;
};

// Token embedding + sinusoidal positions, pre-norm self-attention blocks, and
// a learned T×L pooling map that reduces any input length to exactly T rows.
struct EncoderParams {
  Tensor token_embedding;  // vocab × D
  std::vector<EncoderBlock> blocks;
  Tensor pooling;  // T × max_sequence_length

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  EncoderParams clone() const;
  std::vector<NamedParam> named(const std::string& prefix) const;
};

// A document's latent: T×D.
struct ContextVector {
  Tensor values;
  std::string doc_id;
};

// A query's encoding: T_q×D with T_q = min(length, max_sequence_length).
struct QueryRep {
  Tensor values;
};

ContextVector encode_document(std::span<const std::size_t> tokens, const EncoderParams& params,
                              const EncoderConfig& cfg, std::string doc_id = {});

// Queries longer than max_sequence_length are truncated rather than rejected.
QueryRep encode_query(std::span<const std::size_t> tokens, const EncoderParams& params,
                      const EncoderConfig& cfg);

// Hidden states after the block stack, one row per input token.
Tensor encode_tokens(std::span<const std::size_t> tokens, const EncoderParams& params, const EncoderConfig& cfg);

}  // namespace mbc::encoder
