#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mbc/aggregator.hpp"
#include "mbc/codebook.hpp"
#include "mbc/config.hpp"
#include "mbc/corpus.hpp"
#include "mbc/decoder.hpp"
#include "mbc/encoder.hpp"
#include "mbc/optim.hpp"
#include "mbc/rng.hpp"

namespace mbc {

// Every network of the system plus the vocabulary it was built for.
struct Model {
  RunConfig config;
  corpus::Vocabulary vocab;
  encoder::EncoderConfig encoder_cfg;
  aggregator::AggregatorConfig aggregator_cfg;
  decoder::DecoderConfig decoder_cfg;

  encoder::EncoderParams amort;  // g_amort
  encoder::EncoderParams input;  // g_input
  aggregator::AggregatorParams aggregator;
  decoder::BaseDecoder base;  // θb, frozen
  decoder::KvLoraAdapter lora;
  vq::Codebook codebook;

  // Draw order: codebook, amortization encoder, aggregator, base decoder,
  // adapter. The input encoder starts as a copy of the amortization encoder.
  static Model create(const RunConfig& cfg, corpus::Vocabulary vocab, Rng& rng);

  Model clone() const;

  // θ_amort, θ_input, ψ, KV-LoRA, E, in that order.
  std::vector<NamedParam> trainable() const;
  std::vector<NamedParam> frozen() const;
  std::vector<NamedParam> all_params() const;

  std::uint64_t frozen_hash() const;
  // Every parameter plus the codebook usage.
  std::uint64_t global_hash() const;
};

struct ParamReport {
  std::size_t amort = 0;
  std::size_t input = 0;
  std::size_t aggregator = 0;
  std::size_t lora = 0;
  std::size_t codebook = 0;
  std::size_t base = 0;

  std::size_t mac_total() const { return amort + input + aggregator + base; }
  std::size_t mbc_delta() const { return codebook + lora; }
  double overhead_percent() const {
    return mac_total() == 0 ? 0.0 : 100.0 * static_cast<double>(mbc_delta()) / static_cast<double>(mac_total());
  }
};

ParamReport param_report(const Model& model);

// |E| + |KV-LoRA| from the configuration alone; rank 0 means no adapter.
std::size_t mbc_parameter_delta(std::size_t num_codes, std::size_t dim, std::size_t lora_rank, std::size_t n_lora,
                                bool shared_down);

// Optimizer and schedule state that has to survive a checkpoint.
struct TrainerState {
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimizer steps
  std::size_t total_steps = 0;
  std::string rng_state;
  std::vector<AdamState> adam;  // parallel to Model::trainable()
  double best_em = -1.0;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainerState& state);

struct LoadedCheckpoint {
  Model model;
  TrainerState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mbc
