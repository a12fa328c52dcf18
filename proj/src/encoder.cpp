#include "mbc/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "mbc/ops.hpp"

namespace mbc::encoder {

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("encoder: vocab_size must be positive");
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    throw std::invalid_argument("encoder: embed_dim must be divisible by num_heads");
  }
  if (output_tokens < 1) throw std::invalid_argument("encoder: output_tokens must be >= 1");
  if (max_sequence_length < 1) throw std::invalid_argument("encoder: max_sequence_length must be >= 1");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double out = proj / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg.num_blocks, 1)));
  EncoderParams p;
  p.token_embedding = layers::normal(rng, {cfg.vocab_size, d}, 1.0, true);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    EncoderBlock blk;
    blk.attn_norm = layers::LayerNormParams::init(d, true);
    blk.wq = layers::normal(rng, {d, d}, proj, true);
    blk.wk = layers::normal(rng, {d, d}, proj, true);
    blk.wv = layers::normal(rng, {d, d}, proj, true);
    blk.wo = layers::normal(rng, {d, d}, out, true);
    blk.ff_norm = layers::LayerNormParams::init(d, true);
    blk.ff = layers::FeedForward::init(rng, d, 4 * d, proj, out / 2.0, true);
    p.blocks.push_back(std::move(blk));
  }
  p.pooling = layers::normal(rng, {cfg.output_tokens, cfg.max_sequence_length},
                             1.0 / std::sqrt(static_cast<double>(cfg.max_sequence_length)), true);
  return p;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams p;
  p.token_embedding = token_embedding.clone();
  for (const auto& b : blocks) {
    p.blocks.push_back({b.attn_norm.clone(), b.wq.clone(), b.wk.clone(), b.wv.clone(), b.wo.clone(),
                        b.ff_norm.clone(), b.ff.clone()});
  }
  p.pooling = pooling.clone();
  return p;
}

std::vector<NamedParam> EncoderParams::named(const std::string& prefix) const {
  std::vector<NamedParam> out;
  out.push_back({prefix + ".token_embedding", token_embedding});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    const auto& b = blocks[i];
    b.attn_norm.collect(bp + ".attn_norm", out);
    out.push_back({bp + ".wq", b.wq});
    out.push_back({bp + ".wk", b.wk});
    out.push_back({bp + ".wv", b.wv});
    out.push_back({bp + ".wo", b.wo});
    b.ff_norm.collect(bp + ".ff_norm", out);
    b.ff.collect(bp + ".ff", out);
  }
  out.push_back({prefix + ".pooling", pooling});
  return out;
}

Tensor encode_tokens(std::span<const std::size_t> tokens, const EncoderParams& params, const EncoderConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("encoder: empty token sequence");
  if (tokens.size() > cfg.max_sequence_length) {
    throw std::invalid_argument("encoder: sequence of " + std::to_string(tokens.size()) +
                                " tokens exceeds max_sequence_length " + std::to_string(cfg.max_sequence_length));
  }
  for (std::size_t t : tokens) {
    if (t >= cfg.vocab_size) {
      throw std::out_of_range("encoder: token id " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(cfg.vocab_size));
    }
  }
  Tensor h = ops::add(ops::embedding(params.token_embedding, tokens),
                      layers::sinusoidal_positions(tokens.size(), cfg.embed_dim));
  for (const auto& b : params.blocks) {
    Tensor x = b.attn_norm(h);
    Tensor att = layers::multi_head_attention(ops::matmul(x, b.wq), ops::matmul(x, b.wk), ops::matmul(x, b.wv),
                                              cfg.num_heads);
    h = ops::add(h, ops::matmul(att, b.wo));
    h = ops::add(h, b.ff(b.ff_norm(h)));
  }
  return h;
}

ContextVector encode_document(std::span<const std::size_t> tokens, const EncoderParams& params,
                              const EncoderConfig& cfg, std::string doc_id) {
  Tensor h = encode_tokens(tokens, params, cfg);
  Tensor pool = ops::slice_cols(params.pooling, 0, tokens.size());
  return {ops::matmul(pool, h), std::move(doc_id)};
}

QueryRep encode_query(std::span<const std::size_t> tokens, const EncoderParams& params, const EncoderConfig& cfg) {
  if (tokens.size() > cfg.max_sequence_length) tokens = tokens.first(cfg.max_sequence_length);
  return {encode_tokens(tokens, params, cfg)};
}

}  // namespace mbc::encoder
