#pragma once

#include "mbc/config.hpp"
#include "mbc/corpus.hpp"
#include "mbc/model.hpp"
#include "mbc/rng.hpp"
#include "mbc/training.hpp"

namespace mbc::test {

// Small enough that a full forward/backward takes a few milliseconds.
inline RunConfig tiny_config() {
  RunConfig c;
  c.seed = 7;
  c.model.dim = 8;
  c.model.tokens = 3;
  c.model.max_sequence_length = 16;
  c.model.encoder_blocks = 1;
  c.model.encoder_heads = 2;
  c.model.aggregator_blocks = 2;
  c.model.aggregator_heads = 2;
  c.model.decoder_layers = 2;
  c.model.decoder_heads = 2;
  c.model.n_lora = 1;
  c.model.lora_rank = 2;
  c.model.lora_alpha = 4.0;
  c.train.learning_rate = 1e-2;
  c.train.epochs = 3;
  c.train.batch_size = 4;
  c.train.num_codes = 16;
  c.data.n_docs = 12;
  c.data.n_values = 6;
  c.data.val_fraction = 0.0;
  c.data.test_fraction = 0.0;
  return c;
}

inline corpus::SyntheticCorpus tiny_corpus(const RunConfig& c) {
  corpus::SyntheticOptions o;
  o.n_docs = c.data.n_docs;
  o.seed = c.seed;
  o.n_attributes = c.data.n_attributes;
  o.n_values = c.data.n_values;
  o.val_fraction = c.data.val_fraction;
  o.test_fraction = c.data.test_fraction;
  return corpus::gen_synthetic(o);
}

inline Model tiny_model(const RunConfig& c, const corpus::QaDataset& data, Rng& rng) {
  const auto texts = corpus::vocabulary_texts(data);
  return Model::create(c, corpus::Vocabulary::build(texts), rng);
}

}  // namespace mbc::test
