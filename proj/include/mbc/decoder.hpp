#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbc/layers.hpp"
#include "mbc/optim.hpp"
#include "mbc/rng.hpp"
#include "mbc/tensor.hpp"

namespace mbc::decoder {

struct DecoderConfig {
  std::size_t vocab_size = 512;
  std::size_t hidden = 64;  // D
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t max_sequence_length = 64;
  std::size_t n_lora = 2;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  double lora_dropout = 0.05;
  bool share_down_projection = true;

  void validate() const;
  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }
  std::size_t first_lora_layer() const { return num_layers - n_lora; }
};

struct DecoderLayer {
  layers::LayerNormParams attn_norm;
  Tensor wq, wk, wv, wo;
  layers::LayerNormParams ff_norm;
  layers::FeedForward ff;
};

// f_θb: a randomly initialized GPT-style causal decoder. Never trained; all
// of its tensors are created without requires_grad.
struct BaseDecoder {
  Tensor token_embedding;     // vocab × D
  Tensor position_embedding;  // max_len × D
  std::vector<DecoderLayer> layers;
  layers::LayerNormParams final_norm;
  Tensor unembedding;  // D × vocab, not tied to the input table

  static BaseDecoder init(const DecoderConfig& cfg, Rng& rng);
  BaseDecoder clone() const;
  std::vector<NamedParam> named(const std::string& prefix) const;
};

// Low-rank factors for one adapted layer. With a shared down-projection
// a_k and a_v are the same tensor.
struct LoraLayer {
  Tensor a_k, b_k;  // D × r, r × D
  Tensor a_v, b_v;
};

// KV-LoRA on the last n_lora layers; B starts at zero so the adapter is a no-op.
struct KvLoraAdapter {
  std::vector<LoraLayer> layers;  // index i adapts layer first_lora_layer() + i
  bool shared_down = true;

  static KvLoraAdapter init(const DecoderConfig& cfg, Rng& rng);
  KvLoraAdapter clone() const;
  // A shared down-projection is listed once.
  std::vector<NamedParam> named(const std::string& prefix) const;
  std::size_t parameter_count() const;
};

struct ModulatedKV {
  Tensor k;
  Tensor v;
  std::size_t prefix_rows = 0;
};

// K′ = [φ*; K], V′ = [φ*; V]. A modulation with zero rows returns K and V as is.
ModulatedKV apply_kv_prefix(const Tensor& k, const Tensor& v, const Tensor& modulation);

// K″ = K′ + [0; (α/r)·drop(X A_K) B_K], likewise for V. Prefix rows pass
// through untouched. Dropout on X·A is drawn from `dropout_rng` when given;
// without it (inference) no dropout is applied.
ModulatedKV apply_kv_lora(const ModulatedKV& kv, const Tensor& layer_input, const LoraLayer& lora, double scale,
                          double dropout, Rng* dropout_rng = nullptr);

// Logits (s × vocab) of the base decoder with φ* prefixed at every layer and
// the adapter (if any) on its layers. An empty (default or 0-row) modulation
// means no prefix.
Tensor forward_modulated(std::span<const std::size_t> tokens, const Tensor& modulation, const BaseDecoder& base,
                         const KvLoraAdapter* adapter, const DecoderConfig& cfg, Rng* dropout_rng = nullptr);

// The unmodulated base model.
Tensor forward_base(std::span<const std::size_t> tokens, const BaseDecoder& base, const DecoderConfig& cfg);

// Mean NLL over positions whose target is not ops::kIgnore.
Tensor qa_loss(const Tensor& logits, std::span<const long> targets);

// Teacher-forcing layout for one QA pair: input = [BOS, q…, y…], targets
// predict y followed by EOA and ignore question positions.
struct QaSequence {
  std::vector<std::size_t> input;
  std::vector<long> targets;
};
QaSequence make_qa_sequence(std::span<const std::size_t> question, std::span<const std::size_t> answer,
                            std::size_t bos_id, std::size_t eoa_id);

// Argmax decoding after [BOS, q…] until EOA, max_new tokens, or the context
// limit. The EOA token is not included in the result.
std::vector<std::size_t> greedy_generate(std::span<const std::size_t> question, const Tensor& modulation,
                                         const BaseDecoder& base, const KvLoraAdapter* adapter,
                                         const DecoderConfig& cfg, std::size_t max_new, std::size_t bos_id,
                                         std::size_t eoa_id);

// Closed-form adapter size: n_lora·(3 or 4)·r·D.
std::size_t lora_parameter_count(std::size_t hidden, std::size_t rank, std::size_t n_lora, bool shared_down);

}  // namespace mbc::decoder
