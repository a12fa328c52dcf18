#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbc/aggregator.hpp"
#include "mbc/corpus.hpp"
#include "mbc/membank.hpp"
#include "mbc/model.hpp"

namespace mbc::adaptation {

// Gradient-free deployment: documents are encoded and quantized into the
// compressed bank, queries are answered by aggregating over it. Nothing in
// the model is written.
class OnlineSession {
 public:
  OnlineSession(const Model& model, std::size_t group_size);

  // Encode, quantize, append. Returns the stored code row.
  std::vector<std::uint32_t> memorize(const corpus::Document& doc);
  std::string answer(const std::string& question);
  // Same decoder and adapter with no prefix at all.
  std::string answer_without_memory(const std::string& question) const;
  // Modulation the decoder would see for `question`.
  Tensor modulation(const std::string& question);

  const bank::CompressedMemoryBank& bank() const { return bank_; }
  const aggregator::AggregateStats& last_stats() const { return stats_; }
  std::size_t group_size() const { return group_size_; }

 private:
  void rebuild_groups();

  const Model& model_;
  std::size_t group_size_;
  bank::CompressedMemoryBank bank_;
  // First-level groups over the bank in canonical order; rebuilt lazily
  // after memorization because they only depend on the (frozen) codebook.
  std::vector<aggregator::PreparedMemory> groups_;
  bool groups_stale_ = true;
  aggregator::AggregateStats stats_;
};

// Question tokens as the encoders and decoder see them (never empty).
std::vector<std::size_t> query_tokens(const Model& model, const std::string& question);
std::vector<std::size_t> document_tokens(const Model& model, const std::string& text);

struct EvalResult {
  double em = 0.0;
  double f1 = 0.0;
  std::vector<std::string> predictions;
  std::vector<std::string> golds;
};

// Memorize every document of `data`, then answer each record.
// with_memory = false answers from the empty modulation instead.
EvalResult evaluate(const Model& model, const corpus::QaDataset& data, std::size_t group_size,
                    bool with_memory = true);

struct RetentionRow {
  std::size_t milestone = 0;  // 1-based chunk count
  std::size_t docs = 0;
  double footprint_mb = 0.0;
  double f1 = 0.0;
  std::optional<double> retention_pct;  // empty when the first-chunk F1 is 0
};

struct RetentionReport {
  std::vector<RetentionRow> rows;
  std::string to_jsonl() const;
  std::string summary_table() const;
};

// Adapt on `stream` chunk by chunk up to max_docs, re-scoring the queries of
// the first chunk after every chunk.
RetentionReport retention_experiment(const Model& model, const std::vector<corpus::Document>& stream,
                                     const std::vector<corpus::QARecord>& first_chunk_queries, std::size_t chunk,
                                     std::size_t max_docs, std::size_t group_size);

}  // namespace mbc::adaptation
