#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mbc::corpus {

struct Document {
  std::string doc_id;
  std::string text;
};

struct QARecord {
  std::string doc_id;
  std::string question;
  std::string answer;
};

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kUnk = 1;
inline constexpr std::size_t kBos = 2;
inline constexpr std::size_t kEoa = 3;

class Vocabulary {
 public:
  // Holds only the reserved tokens.
  Vocabulary();

  // Ids assigned by first occurrence across `texts`, in order.
  static Vocabulary build(std::span<const std::string> texts);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return ids_.contains(token); }
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Lowercases and splits on whitespace and punctuation; punctuation itself is
// dropped.
std::vector<std::string> split_words(std::string_view text);
std::vector<std::size_t> tokenize(std::string_view text, const Vocabulary& vocab);
// Space-joined tokens; reserved ids other than UNK are skipped.
std::string detokenize(std::span<const std::size_t> ids, const Vocabulary& vocab);

struct QaDataset {
  std::vector<Document> documents;  // unique by doc_id, first-seen order
  std::vector<QARecord> records;
};

// Line-delimited JSON, one {"doc_id","text","question","answer"} per line.
QaDataset load_qa(const std::filesystem::path& path);
QaDataset parse_qa(std::string_view jsonl, const std::string& source = "<memory>");
void save_qa(const QaDataset& data, const std::filesystem::path& path);

struct SyntheticOptions {
  std::size_t n_docs = 256;
  std::uint64_t seed = 0;
  std::size_t n_attributes = 4;
  std::size_t n_values = 32;
  std::size_t n_entities = 0;  // 0: smallest count that fits n_docs distinct facts
  double val_fraction = 0.1;
  double test_fraction = 0.1;
};

struct SyntheticCorpus {
  std::vector<Document> documents;
  std::vector<QARecord> train;
  std::vector<QARecord> val;
  std::vector<QARecord> test;

  // Documents and records of one split as a dataset.
  QaDataset split(const std::vector<QARecord>& records) const;
  QaDataset all() const;
};

// Each document states one (entity, attribute) → value fact, with the key
// drawn without replacement and the value uniformly at random.
SyntheticCorpus gen_synthetic(const SyntheticOptions& opts);

// Texts the vocabulary should be built from: documents, questions and
// answers of the given records.
std::vector<std::string> vocabulary_texts(const QaDataset& data);

}  // namespace mbc::corpus
