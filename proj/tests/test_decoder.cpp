#include <doctest.h>

#include <cmath>

#include "mbc/decoder.hpp"
#include "support.hpp"

using namespace mbc;
namespace dec = mbc::decoder;

namespace {

dec::DecoderConfig small_config() {
  dec::DecoderConfig c;
  c.vocab_size = 16;
  c.hidden = 8;
  c.num_layers = 3;
  c.num_heads = 2;
  c.max_sequence_length = 12;
  c.n_lora = 2;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  c.lora_dropout = 0.0;
  return c;
}

std::uint64_t hash(const Tensor& t) { return hash_values(t.values()); }

void randomize(Tensor& t, Rng& rng) {
  for (double& x : t.mutable_values()) x = rng.uniform(-0.5, 0.5);
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.n_lora = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.n_lora = 4;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.lora_rank = 9;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.lora_dropout = 1.0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.lora_alpha = 0.0;
  CHECK_THROWS(bad.validate());
  dec::DecoderConfig paper;
  paper.lora_rank = 16;
  paper.lora_alpha = 32;
  CHECK(paper.lora_scale() == 2.0);
}

TEST_CASE("kv prefix") {
  Tensor k({2, 2}, {1, 2, 3, 4}), v({2, 2}, {5, 6, 7, 8});
  auto same = dec::apply_kv_prefix(k, v, Tensor());
  CHECK(hash(same.k) == hash(k));
  CHECK(same.prefix_rows == 0);
  auto pre = dec::apply_kv_prefix(k, v, Tensor({1, 2}, {9, 9}));
  CHECK(pre.k.rows() == 3);
  CHECK(pre.prefix_rows == 1);
  CHECK(pre.k.at(0, 0) == 9);
  CHECK(pre.k.at(1, 0) == 1);
  CHECK(pre.v.at(2, 1) == 8);
  CHECK_THROWS(dec::apply_kv_prefix(k, v, Tensor({1, 3}, {0, 0, 0})));
}

TEST_CASE("kv lora by hand, D=2 r=1") {
  dec::LoraLayer l;
  l.a_k = Tensor({2, 1}, {1, 2});
  l.b_k = Tensor({1, 2}, {3, -1});
  l.a_v = l.a_k;
  l.b_v = Tensor({1, 2}, {0.5, 0.5});
  Tensor x({1, 2}, {1, 1});  // X·A = 3
  dec::ModulatedKV kv{Tensor({2, 2}, {7, 7, 1, 1}), Tensor({2, 2}, {7, 7, 0, 0}), 1};
  auto out = dec::apply_kv_lora(kv, x, l, 2.0, 0.0);
  CHECK(out.k.at(0, 0) == 7);  // prefix untouched
  CHECK(out.k.at(1, 0) == 1 + 2.0 * 9);
  CHECK(out.k.at(1, 1) == 1 - 2.0 * 3);
  CHECK(out.v.at(1, 0) == 3.0);

  Tensor zero_b({1, 2}, {0, 0});
  dec::LoraLayer z{l.a_k, zero_b, l.a_v, zero_b};
  auto noop = dec::apply_kv_lora(kv, x, z, 2.0, 0.0);
  CHECK(hash(noop.k) == hash(kv.k));
  CHECK(hash(noop.v) == hash(kv.v));
}

TEST_CASE("empty modulation and zero-init adapter reproduce the base decoder") {
  auto cfg = small_config();
  Rng rng(1);
  auto base = dec::BaseDecoder::init(cfg, rng);
  auto adapter = dec::KvLoraAdapter::init(cfg, rng);
  const std::vector<std::size_t> tokens{2, 5, 7, 1, 9};
  const auto ref = hash(dec::forward_base(tokens, base, cfg));
  CHECK(hash(dec::forward_modulated(tokens, Tensor(), base, &adapter, cfg)) == ref);
  CHECK(hash(dec::forward_modulated(tokens, Tensor(), base, nullptr, cfg)) == ref);

  Tensor zeros = Tensor::zeros({4, cfg.hidden});
  CHECK(hash(dec::forward_modulated(tokens, zeros, base, &adapter, cfg)) != ref);
  CHECK(dec::forward_modulated(tokens, zeros, base, &adapter, cfg).shape() == Shape{5, 16});
  CHECK_THROWS(dec::forward_base(std::vector<std::size_t>(13, 1), base, cfg));
  CHECK_THROWS(dec::forward_base(std::vector<std::size_t>{16}, base, cfg));
}

TEST_CASE("causality: later tokens never change earlier logits") {
  auto cfg = small_config();
  Rng rng(2);
  auto base = dec::BaseDecoder::init(cfg, rng);
  auto adapter = dec::KvLoraAdapter::init(cfg, rng);
  for (auto& l : adapter.layers) randomize(l.b_k, rng), randomize(l.b_v, rng);
  Tensor mod = test::uniform(rng, {3, cfg.hidden}, -1, 1, false);
  const std::vector<std::size_t> a{4, 5, 6, 7}, b{4, 5, 6, 11};
  Tensor la = dec::forward_modulated(a, mod, base, &adapter, cfg);
  Tensor lb = dec::forward_modulated(b, mod, base, &adapter, cfg);
  for (std::size_t i = 0; i < 3 * cfg.vocab_size; ++i) CHECK(la.values()[i] == lb.values()[i]);
}

TEST_CASE("adapter parameter counts") {
  auto cfg = small_config();
  Rng rng(3);
  auto shared = dec::KvLoraAdapter::init(cfg, rng);
  CHECK(shared.parameter_count() == cfg.n_lora * 3 * cfg.lora_rank * cfg.hidden);
  CHECK(layers::count_params(shared.named("lora")) == shared.parameter_count());
  cfg.share_down_projection = false;
  auto split = dec::KvLoraAdapter::init(cfg, rng);
  CHECK(split.parameter_count() == cfg.n_lora * 4 * cfg.lora_rank * cfg.hidden);
  CHECK(dec::lora_parameter_count(768, 16, 6, true) == 6 * 3 * 16 * 768);
  const double bound = 1.0 / std::sqrt(8.0);
  for (const auto& l : shared.layers) {
    for (double x : l.a_k.values()) CHECK(std::abs(x) <= bound);
    for (double x : l.b_k.values()) CHECK(x == 0.0);
    CHECK(l.a_k.id() == l.a_v.id());
  }
}

TEST_CASE("qa loss") {
  Tensor uniform = Tensor::zeros({3, 512});
  const std::vector<long> t{ops::kIgnore, 7, 9};
  CHECK(dec::qa_loss(uniform, t).item() == doctest::Approx(std::log(512.0)).epsilon(1e-14));
  CHECK(std::log(512.0) == doctest::Approx(6.238).epsilon(1e-4));

  Tensor sharp({1, 3}, {100, 0, 0});
  CHECK(dec::qa_loss(sharp, std::vector<long>{0}).item() < 1e-40);

  Tensor two({2, 2}, {1, 0, 0, 2});
  const double expect = (std::log(1 + std::exp(-1.0)) + std::log(1 + std::exp(2.0))) / 2.0;
  CHECK(dec::qa_loss(two, std::vector<long>{0, 0}).item() == doctest::Approx(expect).epsilon(1e-14));
  CHECK_THROWS(dec::qa_loss(two, std::vector<long>{ops::kIgnore, ops::kIgnore}));
}

TEST_CASE("qa sequence layout") {
  const std::vector<std::size_t> q{10, 11}, y{20, 21};
  auto s = dec::make_qa_sequence(q, y, 2, 3);
  CHECK(s.input == std::vector<std::size_t>{2, 10, 11, 20, 21});
  CHECK(s.targets == std::vector<long>{ops::kIgnore, ops::kIgnore, 20, 21, 3});
}

TEST_CASE("base decoder gets no gradient, adapter B does") {
  auto cfg = small_config();
  Rng rng(4);
  auto base = dec::BaseDecoder::init(cfg, rng);
  auto adapter = dec::KvLoraAdapter::init(cfg, rng);
  for (auto& l : adapter.layers) randomize(l.b_k, rng), randomize(l.b_v, rng);
  Tensor mod = test::uniform(rng, {3, cfg.hidden}, -1, 1, true);
  auto seq = dec::make_qa_sequence(std::vector<std::size_t>{5, 6, 7}, std::vector<std::size_t>{8, 9}, 2, 3);
  auto loss = [&] { return dec::qa_loss(dec::forward_modulated(seq.input, mod, base, &adapter, cfg), seq.targets); };
  loss().backward();
  for (const auto& np : base.named("base")) {
    INFO(np.name);
    CHECK_FALSE(np.tensor.requires_grad());
    CHECK_FALSE(np.tensor.has_grad());
  }
  for (auto& np : adapter.named("lora")) {
    INFO(np.name);
    CHECK(test::param_grad_error([&] { return loss().item(); }, np.tensor, {}) < 1e-6);
  }
  CHECK(test::param_grad_error([&] { return loss().item(); }, mod, {}) < 1e-6);
}

TEST_CASE("lora dropout only with an rng and zeroes whole entries") {
  auto cfg = small_config();
  cfg.lora_dropout = 0.5;
  Rng rng(5);
  auto base = dec::BaseDecoder::init(cfg, rng);
  auto adapter = dec::KvLoraAdapter::init(cfg, rng);
  for (auto& l : adapter.layers) randomize(l.b_k, rng), randomize(l.b_v, rng);
  const std::vector<std::size_t> tokens{3, 4, 5};
  Tensor mod = test::uniform(rng, {2, cfg.hidden}, -1, 1, false);
  const auto clean = hash(dec::forward_modulated(tokens, mod, base, &adapter, cfg));
  CHECK(hash(dec::forward_modulated(tokens, mod, base, &adapter, cfg)) == clean);
  Rng d1(9), d2(9);
  const auto n1 = hash(dec::forward_modulated(tokens, mod, base, &adapter, cfg, &d1));
  CHECK(n1 != clean);
  CHECK(hash(dec::forward_modulated(tokens, mod, base, &adapter, cfg, &d2)) == n1);
}

TEST_CASE("greedy generation") {
  auto cfg = small_config();
  Rng rng(6);
  auto base = dec::BaseDecoder::init(cfg, rng);
  const std::vector<std::size_t> q{5, 6};
  auto a = dec::greedy_generate(q, Tensor(), base, nullptr, cfg, 4, 2, 3);
  CHECK(a == dec::greedy_generate(q, Tensor(), base, nullptr, cfg, 4, 2, 3));
  CHECK(a.size() <= 4);

  // Force the output: a bias-like unembedding that always prefers token 9,
  // then one that prefers EOA.
  for (double& w : base.unembedding.mutable_values()) w = 0.0;
  for (double& g : base.final_norm.gain.mutable_values()) g = 0.0;
  for (double& b : base.final_norm.bias.mutable_values()) b = 1.0;
  for (std::size_t k = 0; k < cfg.hidden; ++k) base.unembedding.mutable_values()[k * cfg.vocab_size + 9] = 1.0;
  CHECK(dec::greedy_generate(q, Tensor(), base, nullptr, cfg, 3, 2, 3) == std::vector<std::size_t>{9, 9, 9});
  for (std::size_t k = 0; k < cfg.hidden; ++k) base.unembedding.mutable_values()[k * cfg.vocab_size + 3] = 2.0;
  CHECK(dec::greedy_generate(q, Tensor(), base, nullptr, cfg, 3, 2, 3).empty());
  CHECK_THROWS(dec::greedy_generate(q, Tensor(), base, nullptr, cfg, 0, 2, 3));
}
