#include "mbc/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "mbc/rng.hpp"
#include "mbc/text.hpp"

namespace mbc::corpus {

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<unk>", "<bos>", "<eoa>"}) add(t);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  Vocabulary v;
  for (const auto& text : texts)
    for (const auto& w : split_words(text)) v.add(w);
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  if (tokens.size() < 4 || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary: token list must start with the reserved tokens");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw std::invalid_argument("vocabulary: duplicate token \"" + tokens[i] + "\"");
    v.add(tokens[i]);
  }
  return v;
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::string> split_words(std::string_view input) {
  std::vector<std::string> out;
  std::u32string cur;
  for (char32_t c : text::decode_utf8(input)) {
    if (text::is_space(c) || text::is_punctuation(c)) {
      if (!cur.empty()) out.push_back(text::encode_utf8(cur));
      cur.clear();
    } else {
      cur.push_back(text::to_lower(c));
    }
  }
  if (!cur.empty()) out.push_back(text::encode_utf8(cur));
  return out;
}

std::vector<std::size_t> tokenize(std::string_view input, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(input)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const std::size_t> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t id : ids) {
    if (id < 4 && id != kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

QaDataset parse_qa(std::string_view jsonl, const std::string& source) {
  QaDataset data;
  std::unordered_map<std::string, std::size_t> doc_index;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw std::runtime_error(where + ": expected a JSON object");
    auto field = [&](const char* name) {
      auto it = j.find(name);
      if (it == j.end()) throw std::runtime_error(where + ": missing field \"" + name + "\"");
      if (!it->is_string()) throw std::runtime_error(where + ": field \"" + name + "\" must be a string");
      return it->get<std::string>();
    };
    QARecord rec{field("doc_id"), field("question"), field("answer")};
    std::string body = field("text");
    if (body.empty()) throw std::runtime_error(where + ": empty document text");
    if (rec.question.empty() || rec.answer.empty()) throw std::runtime_error(where + ": empty question or answer");
    auto it = doc_index.find(rec.doc_id);
    if (it == doc_index.end()) {
      doc_index.emplace(rec.doc_id, data.documents.size());
      data.documents.push_back({rec.doc_id, std::move(body)});
    } else if (data.documents[it->second].text != body) {
      throw std::runtime_error(where + ": doc_id \"" + rec.doc_id + "\" repeated with different text");
    }
    data.records.push_back(std::move(rec));
  }
  return data;
}

QaDataset load_qa(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_qa(ss.str(), path.string());
}

void save_qa(const QaDataset& data, const std::filesystem::path& path) {
  std::unordered_map<std::string, const Document*> docs;
  for (const auto& d : data.documents) docs.emplace(d.doc_id, &d);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : data.records) {
    auto it = docs.find(r.doc_id);
    if (it == docs.end()) throw std::invalid_argument("save_qa: record refers to unknown doc_id \"" + r.doc_id + "\"");
    nlohmann::ordered_json j;
    j["doc_id"] = r.doc_id;
    j["text"] = it->second->text;
    j["question"] = r.question;
    j["answer"] = r.answer;
    os << j.dump() << '\n';
  }
}

namespace {

std::string numbered(char prefix, std::size_t i, std::size_t count) {
  std::size_t width = 1;
  for (std::size_t n = count > 0 ? count - 1 : 0; n >= 10; n /= 10) ++width;
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

}  // namespace

QaDataset SyntheticCorpus::split(const std::vector<QARecord>& records) const {
  std::unordered_set<std::string> wanted;
  for (const auto& r : records) wanted.insert(r.doc_id);
  QaDataset out;
  for (const auto& d : documents)
    if (wanted.contains(d.doc_id)) out.documents.push_back(d);
  out.records = records;
  return out;
}

QaDataset SyntheticCorpus::all() const {
  QaDataset out;
  out.documents = documents;
  for (const auto* part : {&train, &val, &test}) out.records.insert(out.records.end(), part->begin(), part->end());
  return out;
}

SyntheticCorpus gen_synthetic(const SyntheticOptions& opts) {
  if (opts.n_docs < 1) throw std::invalid_argument("gen_synthetic: n_docs must be >= 1");
  if (opts.n_attributes < 1 || opts.n_values < 2) {
    throw std::invalid_argument("gen_synthetic: need >= 1 attribute and >= 2 values");
  }
  if (opts.val_fraction < 0 || opts.test_fraction < 0 || opts.val_fraction + opts.test_fraction >= 1.0) {
    throw std::invalid_argument("gen_synthetic: split fractions must be >= 0 and sum below 1");
  }
  const std::size_t min_entities = (opts.n_docs + opts.n_attributes - 1) / opts.n_attributes;
  const std::size_t n_entities = std::max(opts.n_entities, min_entities);

  Rng rng(opts.seed);
  const auto keys = rng.sample_without_replacement(n_entities * opts.n_attributes, opts.n_docs);
  const std::size_t n_val = static_cast<std::size_t>(std::floor(opts.val_fraction * static_cast<double>(opts.n_docs)));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(opts.test_fraction * static_cast<double>(opts.n_docs)));
  const std::size_t n_train = opts.n_docs - n_val - n_test;

  SyntheticCorpus c;
  for (std::size_t i = 0; i < opts.n_docs; ++i) {
    const std::string entity = numbered('e', keys[i] / opts.n_attributes, n_entities);
    const std::string attribute = numbered('a', keys[i] % opts.n_attributes, opts.n_attributes);
    const std::string value = numbered('v', rng.below(opts.n_values), opts.n_values);
    const std::string id = numbered('d', i, opts.n_docs);
    c.documents.push_back({id, "entity " + entity + " attribute " + attribute + " value " + value});
    QARecord rec{id, "what is " + attribute + " of " + entity, value};
    (i < n_train ? c.train : i < n_train + n_val ? c.val : c.test).push_back(std::move(rec));
  }
  return c;
}

std::vector<std::string> vocabulary_texts(const QaDataset& data) {
  std::vector<std::string> texts;
  for (const auto& d : data.documents) texts.push_back(d.text);
  for (const auto& r : data.records) {
    texts.push_back(r.question);
    texts.push_back(r.answer);
  }
  return texts;
}

}  // namespace mbc::corpus
