#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mbc/aggregator.hpp"
#include "mbc/decoder.hpp"
#include "mbc/encoder.hpp"

namespace mbc {

// Shared shape of every network. D is one number here so the encoder,
// aggregator and decoder cannot disagree on it.
struct ModelConfig {
  std::size_t vocab_size = 0;  // 0: size of the vocabulary built from the training split
  std::size_t dim = 64;
  std::size_t tokens = 12;  // T
  std::size_t max_sequence_length = 64;
  std::size_t encoder_blocks = 2;
  std::size_t encoder_heads = 4;
  std::size_t aggregator_blocks = 4;
  std::size_t aggregator_heads = 4;
  std::size_t decoder_layers = 4;
  std::size_t decoder_heads = 4;
  std::size_t n_lora = 2;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  double lora_dropout = 0.05;
  bool share_down_projection = true;
};

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;  // K
  double beta_commit = 0.25;
  double lambda_vq = 1.0;
  std::size_t num_codes = 512;  // N_c
  double reset_threshold = 1e-4;
  double usage_decay = 0.99;
  double backprop_dropout = 0.75;
  double warmup_fraction = 0.01;
  bool reset_enabled = true;
  std::string codebook_init = "uniform";  // or "clustered"
  double clustered_offset = 10.0;
  bool validate_each_epoch = true;
};

struct AdaptConfig {
  std::size_t group_size = 64;  // M
  std::size_t max_answer_tokens = 4;
  std::size_t retention_chunk = 200;
  std::size_t retention_max = 1600;
};

struct DataConfig {
  std::string train_path;  // empty: synthetic corpus
  std::string val_path;
  std::string test_path;
  std::size_t n_docs = 256;
  std::size_t n_attributes = 4;
  std::size_t n_values = 32;
  std::size_t n_entities = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  AdaptConfig adapt;
  DataConfig data;

  void validate() const;

  encoder::EncoderConfig encoder_config(std::size_t vocab_size) const;
  aggregator::AggregatorConfig aggregator_config() const;
  decoder::DecoderConfig decoder_config(std::size_t vocab_size) const;
};

// Missing keys take their defaults; unknown keys are an error naming the key.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
// Every field, keys sorted.
nlohmann::json config_to_json(const RunConfig& cfg);
std::string canonical_config(const RunConfig& cfg);

}  // namespace mbc
