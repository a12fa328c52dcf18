#include "mbc/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "mbc/adaptation.hpp"
#include "mbc/aggregator.hpp"
#include "mbc/decoder.hpp"
#include "mbc/encoder.hpp"
#include "mbc/ops.hpp"

namespace mbc::training {

std::vector<TrainExample> make_examples(const Model& model, const corpus::QaDataset& data) {
  std::unordered_map<std::string, const corpus::Document*> docs;
  for (const auto& d : data.documents) docs.emplace(d.doc_id, &d);
  std::vector<TrainExample> out;
  for (const auto& r : data.records) {
    auto it = docs.find(r.doc_id);
    if (it == docs.end()) throw std::invalid_argument("training: record refers to unknown doc_id \"" + r.doc_id + "\"");
    TrainExample ex;
    ex.doc_id = r.doc_id;
    ex.doc_tokens = adaptation::document_tokens(model, it->second->text);
    ex.question_tokens = adaptation::query_tokens(model, r.question);
    ex.answer_tokens = corpus::tokenize(r.answer, model.vocab);
    if (ex.answer_tokens.empty()) throw std::invalid_argument("training: answer of \"" + r.doc_id + "\" has no tokens");
    const std::size_t limit = model.decoder_cfg.max_sequence_length;
    if (ex.answer_tokens.size() + 2 > limit) {
      throw std::invalid_argument("training: answer of \"" + r.doc_id + "\" does not fit the decoder context");
    }
    const std::size_t room = limit - 1 - ex.answer_tokens.size();
    if (ex.question_tokens.size() > room) ex.question_tokens.resize(room);
    out.push_back(std::move(ex));
  }
  return out;
}

Tensor total_loss(const Tensor& l_qa, const Tensor& l_vq, double lambda_vq) {
  if (lambda_vq == 0.0) return l_qa;
  return ops::add(l_qa, ops::scale(l_vq, lambda_vq));
}

double total_loss(double l_qa, double l_vq, double lambda_vq) { return l_qa + lambda_vq * l_vq; }

std::vector<bool> backprop_dropout_mask(std::size_t k, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("backprop dropout: rho must be in [0, 1)");
  std::vector<bool> mask(k, true);
  if (rho == 0.0 || k == 0) return mask;
  while (true) {
    bool any = false;
    for (std::size_t i = 0; i < k; ++i) {
      mask[i] = !rng.bernoulli(rho);
      any = any || mask[i];
    }
    if (any) return mask;
  }
}

nlohmann::ordered_json EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["l_qa"] = l_qa;
  j["l_vq"] = l_vq;
  j["l_total"] = l_total;
  j["perplexity"] = perplexity ? nlohmann::ordered_json(*perplexity) : nlohmann::ordered_json(nullptr);
  j["resets"] = resets;
  j["dead_codes"] = dead_codes;
  j["batches"] = batches;
  j["val_em"] = val_em ? nlohmann::ordered_json(*val_em) : nlohmann::ordered_json(nullptr);
  j["val_f1"] = val_f1 ? nlohmann::ordered_json(*val_f1) : nlohmann::ordered_json(nullptr);
  return j;
}

Trainer::Trainer(Model& model, Rng rng, TrainOptions options)
    : model_(model), rng_(std::move(rng)), options_(options), optimizer_(model.trainable()) {
  const auto& params = optimizer_.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].tensor.id() == model.codebook.embeddings.id()) codebook_param_ = i;
}

double Trainer::learning_rate(std::size_t step) const {
  const double base = model_.config.train.learning_rate;
  const auto warmup = static_cast<std::size_t>(
      std::ceil(model_.config.train.warmup_fraction * static_cast<double>(total_steps_)));
  if (warmup == 0 || step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

Tensor Trainer::forward(std::span<const TrainExample> batch, bool update_codebook, BatchMetrics& m) {
  if (batch.empty()) throw std::invalid_argument("training: empty batch");
  const auto& cfg = model_.config.train;

  // Each distinct document is encoded once, even if several questions use it.
  std::vector<std::size_t> doc_of(batch.size());
  std::vector<std::size_t> unique_docs;
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto [it, inserted] = seen.emplace(batch[i].doc_id, unique_docs.size());
      if (inserted) unique_docs.push_back(i);
      doc_of[i] = it->second;
    }
  }
  const std::size_t k = unique_docs.size();
  const auto mask = options_.disable_backprop_dropout ? std::vector<bool>(k, true)
                                                      : backprop_dropout_mask(k, cfg.backprop_dropout, rng_);
  m.grad_docs = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));

  std::vector<Tensor> phis, entries;
  std::vector<std::size_t> codes;
  Tensor vq_sum;
  for (std::size_t d = 0; d < k; ++d) {
    const auto& ex = batch[unique_docs[d]];
    Tensor phi;
    if (mask[d]) {
      phi = encoder::encode_document(ex.doc_tokens, model_.amort, model_.encoder_cfg, ex.doc_id).values;
    } else {
      NoGradGuard no_grad;  // forward value is the same; this document just carries no gradient
      phi = encoder::encode_document(ex.doc_tokens, model_.amort, model_.encoder_cfg, ex.doc_id).values;
    }
    auto q = vq::quantize_ste(phi, model_.codebook);
    Tensor vq = vq::vq_loss(phi, q.hard, cfg.beta_commit);
    vq_sum = d == 0 ? vq : ops::add(vq_sum, vq);
    codes.insert(codes.end(), q.codes.begin(), q.codes.end());
    phis.push_back(phi);
    entries.push_back(q.ste);
  }

  if (update_codebook) {
    vq::update_usage(model_.codebook, codes);
    if (cfg.reset_enabled) {
      Tensor rows = phis.size() == 1 ? phis[0].detach() : ops::concat_rows(phis).detach();
      const auto report = vq::reset_dead_codes(model_.codebook, rows, rng_);
      m.resets = report.reset_codes.size();
      // A reset code starts fresh, so its optimizer moments do as well.
      auto& st = optimizer_.states()[codebook_param_];
      if (!st.m.empty()) {
        const std::size_t dim = model_.codebook.dim();
        for (std::size_t j : report.reset_codes) {
          std::fill_n(st.m.begin() + static_cast<std::ptrdiff_t>(j * dim), dim, 0.0);
          std::fill_n(st.v.begin() + static_cast<std::ptrdiff_t>(j * dim), dim, 0.0);
        }
      }
    }
  }

  const auto memory = aggregator::prepare_memory(entries, model_.aggregator, model_.aggregator_cfg);
  Rng* dropout_rng = options_.disable_lora_dropout ? nullptr : &rng_;
  Tensor qa_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    auto q = encoder::encode_query(ex.question_tokens, model_.input, model_.encoder_cfg);
    Tensor modulation = aggregator::attend(q.values, memory, model_.aggregator, model_.aggregator_cfg);
    const auto seq = decoder::make_qa_sequence(ex.question_tokens, ex.answer_tokens, corpus::kBos, corpus::kEoa);
    Tensor logits = decoder::forward_modulated(seq.input, modulation, model_.base, &model_.lora, model_.decoder_cfg,
                                               dropout_rng);
    Tensor loss = decoder::qa_loss(logits, seq.targets);
    qa_sum = i == 0 ? loss : ops::add(qa_sum, loss);
  }
  Tensor l_qa = ops::scale(qa_sum, 1.0 / static_cast<double>(batch.size()));
  Tensor l_vq = ops::scale(vq_sum, 1.0 / static_cast<double>(k));
  Tensor total = total_loss(l_qa, l_vq, cfg.lambda_vq);
  m.l_qa = l_qa.item();
  m.l_vq = l_vq.item();
  m.l_total = total.item();
  if (!std::isfinite(m.l_total)) {
    std::ostringstream os;
    os << "training: non-finite loss at step " << step_ << " (L_QA=" << m.l_qa << ", L_VQ=" << m.l_vq
       << ", L_total=" << m.l_total << "); batch documents:";
    for (const auto& ex : batch) os << ' ' << ex.doc_id;
    throw std::runtime_error(os.str());
  }
  return total;
}

Tensor Trainer::batch_loss(std::span<const TrainExample> batch, BatchMetrics* metrics) {
  BatchMetrics m;
  Tensor t = forward(batch, false, m);
  if (metrics) *metrics = m;
  return t;
}

BatchMetrics Trainer::train_batch(std::span<const TrainExample> batch) {
  if (total_steps_ == 0) {
    const std::size_t k = model_.config.train.batch_size;
    total_steps_ = model_.config.train.epochs * ((batch.size() + k - 1) / k);
  }
  BatchMetrics m;
  Tensor total = forward(batch, true, m);
  optimizer_.zero_grad();
  total.backward();
  m.lr = learning_rate(step_);
  optimizer_.step(m.lr);
  optimizer_.zero_grad();
  ++step_;
  return m;
}

EpochMetrics Trainer::train_epoch(const std::vector<TrainExample>& examples) {
  if (examples.empty()) throw std::invalid_argument("training: empty training set");
  const std::size_t k = model_.config.train.batch_size;
  const std::size_t batches = (examples.size() + k - 1) / k;
  if (total_steps_ == 0) total_steps_ = model_.config.train.epochs * batches;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  rng_.shuffle(order);

  EpochMetrics em;
  em.epoch = ++epoch_;
  std::vector<TrainExample> batch;
  for (std::size_t b = 0; b < batches; ++b) {
    batch.clear();
    for (std::size_t i = b * k; i < std::min(examples.size(), (b + 1) * k); ++i) batch.push_back(examples[order[i]]);
    const auto m = train_batch(batch);
    em.l_qa += m.l_qa;
    em.l_vq += m.l_vq;
    em.l_total += m.l_total;
    em.resets += m.resets;
  }
  em.batches = batches;
  em.l_qa /= static_cast<double>(batches);
  em.l_vq /= static_cast<double>(batches);
  em.l_total /= static_cast<double>(batches);
  const double usage = std::accumulate(model_.codebook.usage.begin(), model_.codebook.usage.end(), 0.0);
  if (usage > 0.0) em.perplexity = vq::codebook_perplexity(model_.codebook);
  em.dead_codes = vq::count_dead_codes(model_.codebook);
  return em;
}

bool Trainer::record_validation(double em, double f1) {
  const bool better = em > best_em_ || (em == best_em_ && f1 > best_f1_);
  if (better) {
    best_em_ = em;
    best_f1_ = f1;
    best_epoch_ = epoch_;
  }
  return better;
}

TrainerState Trainer::state() const {
  TrainerState s;
  s.epoch = epoch_;
  s.step = step_;
  s.total_steps = total_steps_;
  s.rng_state = rng_.state();
  s.adam = optimizer_.states();
  s.best_em = best_em_;
  s.best_f1 = best_f1_;
  s.best_epoch = best_epoch_;
  return s;
}

void Trainer::restore(const TrainerState& s) {
  epoch_ = s.epoch;
  step_ = s.step;
  total_steps_ = s.total_steps;
  if (!s.rng_state.empty()) rng_.set_state(s.rng_state);
  if (!s.adam.empty()) {
    if (s.adam.size() != optimizer_.states().size()) throw std::invalid_argument("trainer: optimizer state mismatch");
    optimizer_.states() = s.adam;
  }
  best_em_ = s.best_em;
  best_f1_ = s.best_f1;
  best_epoch_ = s.best_epoch;
}

ValidationResult validate(const Model& model, const corpus::QaDataset& validation) {
  if (validation.records.empty()) throw std::invalid_argument("validate: empty validation set");
  const auto r = adaptation::evaluate(model, validation, model.config.adapt.group_size);
  return {r.em, r.f1};
}

FitResult fit(Trainer& trainer, const std::vector<TrainExample>& train, const corpus::QaDataset* validation,
              const std::function<void(const EpochMetrics&, bool)>& on_epoch) {
  const auto& cfg = trainer.model().config.train;
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  if (trainer.total_steps() == 0) trainer.set_total_steps(cfg.epochs * batches);
  FitResult out;
  while (trainer.epoch() < cfg.epochs) {
    EpochMetrics m = trainer.train_epoch(train);
    bool best = false;
    if (validation && !validation->records.empty() && cfg.validate_each_epoch) {
      const auto v = validate(trainer.model(), *validation);
      m.val_em = v.em;
      m.val_f1 = v.f1;
      best = trainer.record_validation(v.em, v.f1);
    }
    out.history.push_back(m);
    if (on_epoch) on_epoch(m, best);
  }
  out.best_em = trainer.best_em();
  out.best_f1 = trainer.best_f1();
  out.best_epoch = trainer.best_epoch();
  return out;
}

}  // namespace mbc::training
