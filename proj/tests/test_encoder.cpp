#include <doctest.h>

#include <cmath>

#include "mbc/encoder.hpp"
#include "mbc/layers.hpp"
#include "support.hpp"

using namespace mbc;

namespace {

encoder::EncoderConfig small_config() {
  encoder::EncoderConfig c;
  c.vocab_size = 20;
  c.embed_dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.max_sequence_length = 10;
  c.output_tokens = 3;
  return c;
}

}  // namespace

TEST_CASE("document encoding has shape T x D and is deterministic") {
  auto cfg = small_config();
  Rng rng(1);
  auto p = encoder::EncoderParams::init(cfg, rng);
  const std::vector<std::size_t> doc{4, 5, 6, 7, 8};
  auto a = encoder::encode_document(doc, p, cfg, "d0");
  auto b = encoder::encode_document(doc, p, cfg, "d0");
  CHECK(a.values.shape() == Shape{3, 8});
  CHECK(a.doc_id == "d0");
  CHECK(hash_values(a.values.values()) == hash_values(b.values.values()));
}

TEST_CASE("zero blocks: pooled raw embeddings, recomputed independently") {
  auto cfg = small_config();
  cfg.num_blocks = 0;
  Rng rng(2);
  auto p = encoder::EncoderParams::init(cfg, rng);
  const std::vector<std::size_t> doc{3, 9, 3, 12};
  auto out = encoder::encode_document(doc, p, cfg).values;
  const std::size_t d = cfg.embed_dim;
  for (std::size_t t = 0; t < cfg.output_tokens; ++t) {
    for (std::size_t k = 0; k < d; ++k) {
      double expect = 0.0;
      for (std::size_t i = 0; i < doc.size(); ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(k - k % 2) / static_cast<double>(d));
        const double pos = k % 2 == 0 ? std::sin(static_cast<double>(i) * freq) : std::cos(static_cast<double>(i) * freq);
        const double x = p.token_embedding.at(doc[i], k) + pos;
        expect += p.pooling.at(t, i) * x;
      }
      CHECK(out.at(t, k) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("query encoding") {
  auto cfg = small_config();
  Rng rng(3);
  auto p = encoder::EncoderParams::init(cfg, rng);
  const std::vector<std::size_t> one{5};
  CHECK(encoder::encode_query(one, p, cfg).values.shape() == Shape{1, 8});

  const std::vector<std::size_t> q1{4, 5, 6}, q2{7, 8, 9};
  auto a = encoder::encode_query(q1, p, cfg).values;
  auto b = encoder::encode_query(q2, p, cfg).values;
  CHECK(hash_values(a.values()) == hash_values(encoder::encode_query(q1, p, cfg).values.values()));
  CHECK(hash_values(a.values()) != hash_values(b.values()));

  std::vector<std::size_t> long_q(25, 6);
  CHECK(encoder::encode_query(long_q, p, cfg).values.rows() == cfg.max_sequence_length);
}

TEST_CASE("encoder input validation") {
  auto cfg = small_config();
  Rng rng(4);
  auto p = encoder::EncoderParams::init(cfg, rng);
  CHECK_THROWS(encoder::encode_document(std::vector<std::size_t>{}, p, cfg));
  CHECK_THROWS(encoder::encode_document(std::vector<std::size_t>{1, 20}, p, cfg));
  CHECK_THROWS(encoder::encode_document(std::vector<std::size_t>(11, 1), p, cfg));
  auto bad = cfg;
  bad.num_heads = 3;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.output_tokens = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("every input position influences the document encoding") {
  auto cfg = small_config();
  Rng rng(5);
  auto p = encoder::EncoderParams::init(cfg, rng);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> doc(1 + rng.below(cfg.max_sequence_length));
    for (auto& t : doc) t = rng.below(cfg.vocab_size);
    const auto base = hash_values(encoder::encode_document(doc, p, cfg).values.values());
    for (std::size_t i = 0; i < doc.size(); ++i) {
      auto flipped = doc;
      flipped[i] = (doc[i] + 1 + rng.below(cfg.vocab_size - 1)) % cfg.vocab_size;
      CHECK(hash_values(encoder::encode_document(flipped, p, cfg).values.values()) != base);
    }
  }
}

TEST_CASE("gradient of the context vector sum w.r.t. the embedding table") {
  auto cfg = small_config();
  Rng rng(6);
  auto p = encoder::EncoderParams::init(cfg, rng);
  const std::vector<std::size_t> doc{2, 7, 11, 2, 15};
  Tensor readout = test::uniform(rng, {cfg.output_tokens, cfg.embed_dim}, -1, 1, false);
  auto loss = [&] {
    Tensor phi = encoder::encode_document(doc, p, cfg).values;
    return ops::add(ops::sum(phi), ops::sum(ops::mul(phi, readout)));
  };
  loss().backward();
  std::vector<std::size_t> coords;
  for (std::size_t t : {2, 7, 11, 15})
    for (std::size_t k = 0; k < cfg.embed_dim; ++k) coords.push_back(t * cfg.embed_dim + k);
  CHECK(test::param_grad_error([&] { return loss().item(); }, p.token_embedding, coords) < 1e-6);
  // Rows of tokens that never appear get nothing.
  for (std::size_t k = 0; k < cfg.embed_dim; ++k) CHECK(p.token_embedding.grad()[3 * cfg.embed_dim + k] == 0.0);
}
