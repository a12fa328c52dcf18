#include "mbc/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mbc/ops.hpp"

namespace mbc::decoder {

void DecoderConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("decoder: vocab_size must cover the reserved tokens");
  if (hidden == 0 || num_heads == 0 || hidden % num_heads != 0) {
    throw std::invalid_argument("decoder: hidden must be divisible by num_heads");
  }
  if (num_layers == 0) throw std::invalid_argument("decoder: num_layers must be >= 1");
  if (max_sequence_length < 2) throw std::invalid_argument("decoder: max_sequence_length must be >= 2");
  if (n_lora < 1 || n_lora > num_layers) throw std::invalid_argument("decoder: need 1 <= n_lora <= num_layers");
  if (lora_rank < 1) throw std::invalid_argument("decoder: lora_rank must be >= 1");
  if (lora_rank > hidden) throw std::invalid_argument("decoder: lora_rank exceeds hidden size");
  if (!(lora_alpha > 0.0)) throw std::invalid_argument("decoder: lora_alpha must be positive");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw std::invalid_argument("decoder: lora_dropout must be in [0, 1)");
}

BaseDecoder BaseDecoder::init(const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.hidden;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double out = proj / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));
  BaseDecoder b;
  b.token_embedding = layers::normal(rng, {cfg.vocab_size, d}, 1.0, false);
  b.position_embedding = layers::normal(rng, {cfg.max_sequence_length, d}, 0.5, false);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    DecoderLayer layer;
    layer.attn_norm = layers::LayerNormParams::init(d, false);
    layer.wq = layers::normal(rng, {d, d}, proj, false);
    layer.wk = layers::normal(rng, {d, d}, proj, false);
    layer.wv = layers::normal(rng, {d, d}, proj, false);
    layer.wo = layers::normal(rng, {d, d}, out, false);
    layer.ff_norm = layers::LayerNormParams::init(d, false);
    layer.ff = layers::FeedForward::init(rng, d, 4 * d, proj, out / 2.0, false);
    b.layers.push_back(std::move(layer));
  }
  b.final_norm = layers::LayerNormParams::init(d, false);
  b.unembedding = layers::normal(rng, {d, cfg.vocab_size}, proj, false);
  return b;
}

BaseDecoder BaseDecoder::clone() const {
  BaseDecoder b;
  b.token_embedding = token_embedding.clone();
  b.position_embedding = position_embedding.clone();
  for (const auto& l : layers) {
    b.layers.push_back({l.attn_norm.clone(), l.wq.clone(), l.wk.clone(), l.wv.clone(), l.wo.clone(),
                        l.ff_norm.clone(), l.ff.clone()});
  }
  b.final_norm = final_norm.clone();
  b.unembedding = unembedding.clone();
  return b;
}

std::vector<NamedParam> BaseDecoder::named(const std::string& prefix) const {
  std::vector<NamedParam> out;
  out.push_back({prefix + ".token_embedding", token_embedding});
  out.push_back({prefix + ".position_embedding", position_embedding});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    const auto& l = layers[i];
    l.attn_norm.collect(lp + ".attn_norm", out);
    out.push_back({lp + ".wq", l.wq});
    out.push_back({lp + ".wk", l.wk});
    out.push_back({lp + ".wv", l.wv});
    out.push_back({lp + ".wo", l.wo});
    l.ff_norm.collect(lp + ".ff_norm", out);
    l.ff.collect(lp + ".ff", out);
  }
  final_norm.collect(prefix + ".final_norm", out);
  out.push_back({prefix + ".unembedding", unembedding});
  return out;
}

KvLoraAdapter KvLoraAdapter::init(const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.hidden;
  const std::size_t r = cfg.lora_rank;
  // Kaiming-uniform-style A as in common LoRA implementations, B = 0.
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto make_a = [&] {
    std::vector<double> v(d * r);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor({d, r}, std::move(v), true);
  };
  KvLoraAdapter a;
  a.shared_down = cfg.share_down_projection;
  for (std::size_t i = 0; i < cfg.n_lora; ++i) {
    LoraLayer l;
    l.a_k = make_a();
    l.a_v = cfg.share_down_projection ? l.a_k : make_a();
    l.b_k = Tensor::zeros({r, d}, true);
    l.b_v = Tensor::zeros({r, d}, true);
    a.layers.push_back(std::move(l));
  }
  return a;
}

KvLoraAdapter KvLoraAdapter::clone() const {
  KvLoraAdapter a;
  a.shared_down = shared_down;
  for (const auto& l : layers) {
    LoraLayer c;
    c.a_k = l.a_k.clone();
    c.a_v = shared_down ? c.a_k : l.a_v.clone();
    c.b_k = l.b_k.clone();
    c.b_v = l.b_v.clone();
    a.layers.push_back(std::move(c));
  }
  return a;
}

std::vector<NamedParam> KvLoraAdapter::named(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    const auto& l = layers[i];
    if (shared_down) {
      out.push_back({lp + ".a", l.a_k});
    } else {
      out.push_back({lp + ".a_k", l.a_k});
      out.push_back({lp + ".a_v", l.a_v});
    }
    out.push_back({lp + ".b_k", l.b_k});
    out.push_back({lp + ".b_v", l.b_v});
  }
  return out;
}

std::size_t KvLoraAdapter::parameter_count() const { return layers::count_params(named("lora")); }

std::size_t lora_parameter_count(std::size_t hidden, std::size_t rank, std::size_t n_lora, bool shared_down) {
  return n_lora * (shared_down ? 3 : 4) * rank * hidden;
}

ModulatedKV apply_kv_prefix(const Tensor& k, const Tensor& v, const Tensor& modulation) {
  if (modulation.numel() == 0) return {k, v, 0};
  if (modulation.cols() != k.cols() || k.shape() != v.shape()) {
    throw std::invalid_argument("kv prefix: modulation " + to_string(modulation.shape()) + " against keys " +
                                to_string(k.shape()) + " and values " + to_string(v.shape()));
  }
  const Tensor kp[] = {modulation, k};
  const Tensor vp[] = {modulation, v};
  return {ops::concat_rows(kp), ops::concat_rows(vp), modulation.rows()};
}

namespace {

Tensor dropout(const Tensor& x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng->bernoulli(p) ? 0.0 : keep;
  return ops::mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor add_to_content_rows(const Tensor& full, std::size_t prefix_rows, const Tensor& delta) {
  if (prefix_rows == 0) return ops::add(full, delta);
  const Tensor parts[] = {ops::slice_rows(full, 0, prefix_rows),
                          ops::add(ops::slice_rows(full, prefix_rows, full.rows() - prefix_rows), delta)};
  return ops::concat_rows(parts);
}

}  // namespace

ModulatedKV apply_kv_lora(const ModulatedKV& kv, const Tensor& layer_input, const LoraLayer& lora, double scale,
                          double p, Rng* dropout_rng) {
  if (layer_input.rows() + kv.prefix_rows != kv.k.rows() || layer_input.cols() != lora.a_k.rows()) {
    throw std::invalid_argument("kv lora: layer input " + to_string(layer_input.shape()) + " does not match keys " +
                                to_string(kv.k.shape()) + " with " + std::to_string(kv.prefix_rows) + " prefix rows");
  }
  const bool shared = lora.a_k.id() == lora.a_v.id();
  Tensor down_k = dropout(ops::matmul(layer_input, lora.a_k), p, dropout_rng);
  Tensor down_v = shared ? down_k : dropout(ops::matmul(layer_input, lora.a_v), p, dropout_rng);
  Tensor dk = ops::scale(ops::matmul(down_k, lora.b_k), scale);
  Tensor dv = ops::scale(ops::matmul(down_v, lora.b_v), scale);
  return {add_to_content_rows(kv.k, kv.prefix_rows, dk), add_to_content_rows(kv.v, kv.prefix_rows, dv),
          kv.prefix_rows};
}

Tensor forward_modulated(std::span<const std::size_t> tokens, const Tensor& modulation, const BaseDecoder& base,
                         const KvLoraAdapter* adapter, const DecoderConfig& cfg, Rng* dropout_rng) {
  if (tokens.empty()) throw std::invalid_argument("decoder: empty input");
  if (tokens.size() > cfg.max_sequence_length) {
    throw std::invalid_argument("decoder: input of " + std::to_string(tokens.size()) +
                                " tokens exceeds max_sequence_length " + std::to_string(cfg.max_sequence_length));
  }
  for (std::size_t t : tokens) {
    if (t >= cfg.vocab_size) throw std::out_of_range("decoder: token id " + std::to_string(t) + " outside vocabulary");
  }
  if (modulation.numel() != 0 && modulation.cols() != cfg.hidden) {
    throw std::invalid_argument("decoder: modulation " + to_string(modulation.shape()) + " has the wrong width");
  }
  if (adapter && adapter->layers.size() != cfg.n_lora) {
    throw std::invalid_argument("decoder: adapter has " + std::to_string(adapter->layers.size()) + " layers, config " +
                                std::to_string(cfg.n_lora));
  }
  const std::size_t s = tokens.size();
  Tensor h = ops::add(ops::embedding(base.token_embedding, tokens), ops::slice_rows(base.position_embedding, 0, s));
  const std::size_t prefix = modulation.numel() == 0 ? 0 : modulation.rows();
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    const auto& layer = base.layers[l];
    Tensor x = layer.attn_norm(h);
    Tensor q = ops::matmul(x, layer.wq);
    ModulatedKV kv = apply_kv_prefix(ops::matmul(x, layer.wk), ops::matmul(x, layer.wv), modulation);
    if (adapter && l >= cfg.first_lora_layer()) {
      kv = apply_kv_lora(kv, x, adapter->layers[l - cfg.first_lora_layer()], cfg.lora_scale(), cfg.lora_dropout,
                         dropout_rng);
    }
    Tensor att = layers::multi_head_attention(q, kv.k, kv.v, cfg.num_heads, prefix);
    h = ops::add(h, ops::matmul(att, layer.wo));
    h = ops::add(h, layer.ff(layer.ff_norm(h)));
  }
  return ops::matmul(base.final_norm(h), base.unembedding);
}

Tensor forward_base(std::span<const std::size_t> tokens, const BaseDecoder& base, const DecoderConfig& cfg) {
  return forward_modulated(tokens, Tensor(), base, nullptr, cfg, nullptr);
}

Tensor qa_loss(const Tensor& logits, std::span<const long> targets) { return ops::cross_entropy(logits, targets); }

QaSequence make_qa_sequence(std::span<const std::size_t> question, std::span<const std::size_t> answer,
                            std::size_t bos_id, std::size_t eoa_id) {
  QaSequence seq;
  seq.input.reserve(1 + question.size() + answer.size());
  seq.input.push_back(bos_id);
  seq.input.insert(seq.input.end(), question.begin(), question.end());
  seq.input.insert(seq.input.end(), answer.begin(), answer.end());
  seq.targets.assign(seq.input.size(), ops::kIgnore);
  // Position i predicts token i+1 of [BOS, q…, y…, EOA].
  const std::size_t first = question.size();
  for (std::size_t j = 0; j < answer.size(); ++j) seq.targets[first + j] = static_cast<long>(answer[j]);
  seq.targets[first + answer.size()] = static_cast<long>(eoa_id);
  return seq;
}

std::vector<std::size_t> greedy_generate(std::span<const std::size_t> question, const Tensor& modulation,
                                         const BaseDecoder& base, const KvLoraAdapter* adapter,
                                         const DecoderConfig& cfg, std::size_t max_new, std::size_t bos_id,
                                         std::size_t eoa_id) {
  if (max_new == 0) throw std::invalid_argument("greedy_generate: max_new must be >= 1");
  NoGradGuard no_grad;
  std::vector<std::size_t> seq{bos_id};
  const std::size_t room = cfg.max_sequence_length > 1 ? cfg.max_sequence_length - 1 : 0;
  seq.insert(seq.end(), question.begin(), question.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(question.size(), room)));
  std::vector<std::size_t> out;
  while (out.size() < max_new && seq.size() <= cfg.max_sequence_length) {
    Tensor logits = forward_modulated(seq, modulation, base, adapter, cfg, nullptr);
    auto last = logits.row(logits.rows() - 1);
    const auto best = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
    if (best == eoa_id) break;
    out.push_back(best);
    if (seq.size() == cfg.max_sequence_length) break;
    seq.push_back(best);
  }
  return out;
}

}  // namespace mbc::decoder
