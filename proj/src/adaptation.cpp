#include "mbc/adaptation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "mbc/encoder.hpp"
#include "mbc/metrics.hpp"
#include "mbc/ops.hpp"

namespace mbc::adaptation {

std::vector<std::size_t> query_tokens(const Model& model, const std::string& question) {
  auto ids = corpus::tokenize(question, model.vocab);
  if (ids.empty()) ids.push_back(corpus::kUnk);
  return ids;
}

std::vector<std::size_t> document_tokens(const Model& model, const std::string& text) {
  auto ids = corpus::tokenize(text, model.vocab);
  if (ids.empty()) throw std::invalid_argument("document has no tokens");
  if (ids.size() > model.encoder_cfg.max_sequence_length) ids.resize(model.encoder_cfg.max_sequence_length);
  return ids;
}

OnlineSession::OnlineSession(const Model& model, std::size_t group_size)
    : model_(model),
      group_size_(group_size),
      bank_(model.codebook.size(), model.codebook.dim(), model.encoder_cfg.output_tokens) {
  if (group_size == 0) throw std::invalid_argument("session: group size must be >= 1");
}

std::vector<std::uint32_t> OnlineSession::memorize(const corpus::Document& doc) {
  if (bank_.contains(doc.doc_id)) throw std::invalid_argument("session: duplicate doc_id \"" + doc.doc_id + "\"");
  NoGradGuard no_grad;
  const auto tokens = document_tokens(model_, doc.text);
  auto phi = encoder::encode_document(tokens, model_.amort, model_.encoder_cfg, doc.doc_id);
  const auto codes = vq::nearest_codes(phi.values, model_.codebook);
  bank_.store(doc.doc_id, std::span<const std::size_t>(codes));
  groups_stale_ = true;
  return bank_.entries().back().codes;
}

void OnlineSession::rebuild_groups() {
  NoGradGuard no_grad;
  auto entries = bank_.materialize_all(model_.codebook);
  std::vector<Tensor> sorted;
  sorted.reserve(entries.size());
  for (std::size_t i : aggregator::canonical_order(entries)) sorted.push_back(entries[i]);
  // One group holds everything when it fits, which is exactly the flat call.
  const std::size_t m = sorted.size() <= group_size_ ? sorted.size() : std::max<std::size_t>(group_size_, 2);
  groups_.clear();
  for (std::size_t start = 0; start < sorted.size(); start += m) {
    const std::size_t n = std::min(m, sorted.size() - start);
    groups_.push_back(aggregator::prepare_memory(std::span<const Tensor>(sorted).subspan(start, n), model_.aggregator,
                                                 model_.aggregator_cfg));
  }
  groups_stale_ = false;
}

Tensor OnlineSession::modulation(const std::string& question) {
  if (bank_.empty()) throw std::invalid_argument("no memorized documents");
  NoGradGuard no_grad;
  if (groups_stale_) rebuild_groups();
  const auto tokens = query_tokens(model_, question);
  auto q = encoder::encode_query(tokens, model_.input, model_.encoder_cfg);
  stats_ = {};
  return aggregator::hierarchical_attend(q.values, groups_, model_.aggregator, model_.aggregator_cfg, group_size_,
                                         &stats_);
}

std::string OnlineSession::answer(const std::string& question) {
  Tensor phi = modulation(question);
  const auto out = decoder::greedy_generate(query_tokens(model_, question), phi, model_.base, &model_.lora,
                                            model_.decoder_cfg, model_.config.adapt.max_answer_tokens,
                                            corpus::kBos, corpus::kEoa);
  return corpus::detokenize(out, model_.vocab);
}

std::string OnlineSession::answer_without_memory(const std::string& question) const {
  const auto out = decoder::greedy_generate(query_tokens(model_, question), Tensor(), model_.base, &model_.lora,
                                            model_.decoder_cfg, model_.config.adapt.max_answer_tokens,
                                            corpus::kBos, corpus::kEoa);
  return corpus::detokenize(out, model_.vocab);
}

EvalResult evaluate(const Model& model, const corpus::QaDataset& data, std::size_t group_size, bool with_memory) {
  if (data.records.empty()) throw std::invalid_argument("evaluate: empty QA set");
  OnlineSession session(model, group_size);
  if (with_memory)
    for (const auto& d : data.documents) session.memorize(d);
  EvalResult r;
  for (const auto& rec : data.records) {
    r.predictions.push_back(with_memory ? session.answer(rec.question) : session.answer_without_memory(rec.question));
    r.golds.push_back(rec.answer);
  }
  r.em = metrics::exact_match(r.predictions, r.golds);
  r.f1 = metrics::mean_token_f1(r.predictions, r.golds);
  return r;
}

RetentionReport retention_experiment(const Model& model, const std::vector<corpus::Document>& stream,
                                     const std::vector<corpus::QARecord>& first_chunk_queries, std::size_t chunk,
                                     std::size_t max_docs, std::size_t group_size) {
  if (chunk == 0 || max_docs < chunk) throw std::invalid_argument("retention: need 1 <= chunk <= max");
  if (stream.size() < max_docs) {
    throw std::invalid_argument("retention: stream has " + std::to_string(stream.size()) + " documents, need " +
                                std::to_string(max_docs));
  }
  if (first_chunk_queries.empty()) throw std::invalid_argument("retention: no first-chunk queries");
  OnlineSession session(model, group_size);
  std::vector<std::string> golds;
  for (const auto& q : first_chunk_queries) golds.push_back(q.answer);

  RetentionReport report;
  double f1_0 = 0.0;
  std::size_t next = 0;
  for (std::size_t milestone = 1; milestone * chunk <= max_docs; ++milestone) {
    for (; next < milestone * chunk; ++next) session.memorize(stream[next]);
    std::vector<std::string> preds;
    for (const auto& q : first_chunk_queries) preds.push_back(session.answer(q.question));
    RetentionRow row;
    row.milestone = milestone;
    row.docs = session.bank().size();
    row.footprint_mb = bank::footprint(session.bank()).compressed_mb();
    row.f1 = metrics::mean_token_f1(preds, golds);
    if (milestone == 1) f1_0 = row.f1;
    if (f1_0 > 0.0) row.retention_pct = milestone == 1 ? 100.0 : 100.0 * row.f1 / f1_0;
    report.rows.push_back(row);
  }
  return report;
}

std::string RetentionReport::to_jsonl() const {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["milestone"] = r.milestone;
    j["docs"] = r.docs;
    j["footprint_mb"] = r.footprint_mb;
    j["f1"] = r.f1;
    j["retention_pct"] = r.retention_pct ? nlohmann::ordered_json(*r.retention_pct) : nlohmann::ordered_json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

std::string RetentionReport::summary_table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%6s %12s %8s %10s\n", "docs", "bank (MB)", "F1", "retention");
  os << line;
  for (const auto& r : rows) {
    if (r.retention_pct) {
      std::snprintf(line, sizeof line, "%6zu %12.3f %8.4f %9.1f%%\n", r.docs, r.footprint_mb, r.f1, *r.retention_pct);
    } else {
      std::snprintf(line, sizeof line, "%6zu %12.3f %8.4f %10s\n", r.docs, r.footprint_mb, r.f1, "undefined");
    }
    os << line;
  }
  return os.str();
}

}  // namespace mbc::adaptation
