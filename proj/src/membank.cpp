#include "mbc/membank.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

#include "binio.hpp"

namespace mbc::bank {

CompressedMemoryBank::CompressedMemoryBank(std::size_t num_codes, std::size_t dim, std::size_t tokens)
    : num_codes_(num_codes), dim_(dim), tokens_(tokens) {
  if (num_codes == 0 || dim == 0 || tokens == 0) throw std::invalid_argument("bank: N_c, D and T must be positive");
  if (num_codes > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("bank: N_c exceeds u32");
}

void CompressedMemoryBank::store(const std::string& doc_id, std::span<const std::size_t> codes) {
  std::vector<std::uint32_t> narrow(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= num_codes_) {
      throw std::out_of_range("bank: code " + std::to_string(codes[i]) + " >= N_c " + std::to_string(num_codes_));
    }
    narrow[i] = static_cast<std::uint32_t>(codes[i]);
  }
  store(doc_id, std::span<const std::uint32_t>(narrow));
}

void CompressedMemoryBank::store(const std::string& doc_id, std::span<const std::uint32_t> codes) {
  if (codes.size() != tokens_) {
    throw std::invalid_argument("bank: expected " + std::to_string(tokens_) + " codes, got " +
                                std::to_string(codes.size()));
  }
  for (auto c : codes) {
    if (c >= num_codes_) throw std::out_of_range("bank: code " + std::to_string(c) + " >= N_c " + std::to_string(num_codes_));
  }
  if (doc_id.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("bank: doc_id too long");
  if (index_.contains(doc_id)) throw std::invalid_argument("bank: duplicate doc_id \"" + doc_id + "\"");
  index_.emplace(doc_id, entries_.size());
  entries_.push_back({doc_id, {codes.begin(), codes.end()}});
}

void CompressedMemoryBank::check_codebook(const vq::Codebook& cb) const {
  if (cb.size() != num_codes_ || cb.dim() != dim_) {
    throw std::invalid_argument("bank: codebook is " + to_string(cb.embeddings.shape()) + ", bank expects " +
                                std::to_string(num_codes_) + "x" + std::to_string(dim_));
  }
}

Tensor CompressedMemoryBank::materialize_at(const vq::Codebook& cb, std::size_t index) const {
  check_codebook(cb);
  const auto& codes = entries_.at(index).codes;
  std::vector<double> out(tokens_ * dim_);
  for (std::size_t t = 0; t < tokens_; ++t) {
    auto row = cb.code(codes[t]);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(t * dim_));
  }
  return Tensor({tokens_, dim_}, std::move(out));
}

Tensor CompressedMemoryBank::materialize(const vq::Codebook& cb, const std::string& doc_id) const {
  auto it = index_.find(doc_id);
  if (it == index_.end()) throw std::out_of_range("bank: unknown doc_id \"" + doc_id + "\"");
  return materialize_at(cb, it->second);
}

std::vector<Tensor> CompressedMemoryBank::materialize_all(const vq::Codebook& cb) const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) out.push_back(materialize_at(cb, i));
  return out;
}

void ContinuousMemoryBank::store(const std::string& doc_id, const Tensor& phi) {
  if (phi.rows() != tokens_ || phi.cols() != dim_) {
    throw std::invalid_argument("continuous bank: expected " + std::to_string(tokens_) + "x" + std::to_string(dim_) +
                                ", got " + to_string(phi.shape()));
  }
  if (index_.contains(doc_id)) throw std::invalid_argument("continuous bank: duplicate doc_id \"" + doc_id + "\"");
  index_.emplace(doc_id, ids_.size());
  ids_.push_back(doc_id);
  values_.push_back(phi.detach());
}

const Tensor& ContinuousMemoryBank::get(const std::string& doc_id) const {
  auto it = index_.find(doc_id);
  if (it == index_.end()) throw std::out_of_range("continuous bank: unknown doc_id \"" + doc_id + "\"");
  return values_[it->second];
}

FootprintReport footprint(std::size_t num_docs, std::size_t num_codes, std::size_t dim, std::size_t tokens,
                          std::size_t element_bytes, std::size_t index_bytes) {
  FootprintReport r;
  r.bytes_codebook = static_cast<std::uint64_t>(num_codes) * dim * element_bytes;
  r.bytes_indices = static_cast<std::uint64_t>(num_docs) * tokens * index_bytes;
  r.bytes_continuous_equivalent = static_cast<std::uint64_t>(num_docs) * tokens * dim * element_bytes;
  if (r.bytes_continuous_equivalent > 0) {
    r.reduction_percent = 100.0 * (1.0 - static_cast<double>(r.bytes_compressed()) /
                                             static_cast<double>(r.bytes_continuous_equivalent));
  }
  return r;
}

FootprintReport footprint(const CompressedMemoryBank& bank, std::size_t element_bytes, std::size_t index_bytes) {
  return footprint(bank.size(), bank.num_codes(), bank.dim(), bank.tokens(), element_bytes, index_bytes);
}

FootprintReport footprint(const ContinuousMemoryBank& bank, std::size_t num_codes, std::size_t element_bytes,
                          std::size_t index_bytes) {
  return footprint(bank.size(), num_codes, bank.dim(), bank.tokens(), element_bytes, index_bytes);
}

void save_bank(const CompressedMemoryBank& bank, const vq::Codebook& cb, const std::filesystem::path& path) {
  if (cb.size() != bank.num_codes() || cb.dim() != bank.dim()) {
    throw std::invalid_argument("save_bank: codebook shape does not match the bank");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_bank: cannot open " + path.string() + " for writing");
  os.write("MBCB", 4);
  binio::put_uint<std::uint16_t>(os, kBankVersion);
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(bank.num_codes()));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(bank.dim()));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(bank.tokens()));
  binio::put_f64s(os, cb.embeddings.values());
  binio::put_uint<std::uint64_t>(os, bank.size());
  for (const auto& e : bank.entries()) {
    binio::put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(e.doc_id.size()));
    binio::put_bytes(os, e.doc_id);
    for (auto c : e.codes) binio::put_uint<std::uint32_t>(os, c);
  }
  if (!os) throw std::runtime_error("save_bank: write failed for " + path.string());
}

LoadedBank load_bank(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_bank: cannot open " + path.string());
  binio::expect_magic(is, "MBCB", path.string());
  const auto version = binio::get_uint<std::uint16_t>(is, "version");
  if (version != kBankVersion) {
    throw std::runtime_error(path.string() + ": unsupported bank version " + std::to_string(version));
  }
  const auto nc = binio::get_uint<std::uint32_t>(is, "N_c");
  const auto d = binio::get_uint<std::uint32_t>(is, "D");
  const auto t = binio::get_uint<std::uint32_t>(is, "T");
  LoadedBank out{CompressedMemoryBank(nc, d, t), Tensor()};
  out.embeddings = Tensor({nc, d}, binio::get_f64s(is, static_cast<std::size_t>(nc) * d, "codebook"));
  const auto count = binio::get_uint<std::uint64_t>(is, "doc_count");
  std::vector<std::uint32_t> codes(t);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = binio::get_uint<std::uint16_t>(is, "doc id length");
    std::string id = binio::get_bytes(is, len, "doc id");
    for (auto& c : codes) c = binio::get_uint<std::uint32_t>(is, "codes");
    out.bank.store(id, std::span<const std::uint32_t>(codes));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": trailing bytes after the last document");
  }
  return out;
}

std::uint64_t bank_file_size(const CompressedMemoryBank& bank) {
  std::uint64_t n = 4 + 2 + 4 + 4 + 4;
  n += static_cast<std::uint64_t>(bank.num_codes()) * bank.dim() * 8;
  n += 8;
  for (const auto& e : bank.entries()) n += 2 + e.doc_id.size() + 4ULL * bank.tokens();
  return n;
}

}  // namespace mbc::bank
