#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mbc/codebook.hpp"
#include "mbc/tensor.hpp"

namespace mbc::bank {

struct CompressedEntry {
  std::string doc_id;
  std::vector<std::uint32_t> codes;  // T indices into E
};

// M_VQ: per-document code rows, append-only in arrival order.
class CompressedMemoryBank {
 public:
  CompressedMemoryBank() = default;
  CompressedMemoryBank(std::size_t num_codes, std::size_t dim, std::size_t tokens);

  void store(const std::string& doc_id, std::span<const std::size_t> codes);
  void store(const std::string& doc_id, std::span<const std::uint32_t> codes);

  // Row t = E[codes[t]].
  Tensor materialize(const vq::Codebook& cb, const std::string& doc_id) const;
  Tensor materialize_at(const vq::Codebook& cb, std::size_t index) const;
  std::vector<Tensor> materialize_all(const vq::Codebook& cb) const;

  bool contains(const std::string& doc_id) const { return index_.contains(doc_id); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<CompressedEntry>& entries() const { return entries_; }

  std::size_t num_codes() const { return num_codes_; }
  std::size_t dim() const { return dim_; }
  std::size_t tokens() const { return tokens_; }

 private:
  void check_codebook(const vq::Codebook& cb) const;

  std::size_t num_codes_ = 0;
  std::size_t dim_ = 0;
  std::size_t tokens_ = 0;
  std::vector<CompressedEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// M: the MAC-style bank of full T×D latents, kept for footprint comparison.
class ContinuousMemoryBank {
 public:
  ContinuousMemoryBank(std::size_t dim, std::size_t tokens) : dim_(dim), tokens_(tokens) {}

  void store(const std::string& doc_id, const Tensor& phi);
  const Tensor& get(const std::string& doc_id) const;
  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t tokens() const { return tokens_; }

 private:
  std::size_t dim_;
  std::size_t tokens_;
  std::vector<std::string> ids_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct FootprintReport {
  std::uint64_t bytes_codebook = 0;
  std::uint64_t bytes_indices = 0;
  std::uint64_t bytes_continuous_equivalent = 0;
  double reduction_percent = 0.0;

  std::uint64_t bytes_compressed() const { return bytes_codebook + bytes_indices; }
  double compressed_mb() const { return static_cast<double>(bytes_compressed()) / 1e6; }
  double continuous_mb() const { return static_cast<double>(bytes_continuous_equivalent) / 1e6; }
};

// Pure size arithmetic; megabytes are decimal.
FootprintReport footprint(std::size_t num_docs, std::size_t num_codes, std::size_t dim, std::size_t tokens,
                          std::size_t element_bytes = 4, std::size_t index_bytes = 8);
FootprintReport footprint(const CompressedMemoryBank& bank, std::size_t element_bytes = 4,
                          std::size_t index_bytes = 8);
// A continuous bank carries no codebook; the report shows what MBC would cost
// for the same documents against the given codebook size.
FootprintReport footprint(const ContinuousMemoryBank& bank, std::size_t num_codes, std::size_t element_bytes = 4,
                          std::size_t index_bytes = 8);

struct LoadedBank {
  CompressedMemoryBank bank;
  Tensor embeddings;  // N_c × D
};

inline constexpr std::uint16_t kBankVersion = 1;

void save_bank(const CompressedMemoryBank& bank, const vq::Codebook& cb, const std::filesystem::path& path);
LoadedBank load_bank(const std::filesystem::path& path);

// Exact byte count save_bank writes.
std::uint64_t bank_file_size(const CompressedMemoryBank& bank);

}  // namespace mbc::bank
