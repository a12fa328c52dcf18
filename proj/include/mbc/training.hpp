#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbc/corpus.hpp"
#include "mbc/model.hpp"
#include "mbc/optim.hpp"
#include "mbc/rng.hpp"

namespace mbc::training {

// One (document, question, answer) triple, already tokenized.
struct TrainExample {
  std::string doc_id;
  std::vector<std::size_t> doc_tokens;
  std::vector<std::size_t> question_tokens;
  std::vector<std::size_t> answer_tokens;
};

// Documents are cut to the encoder's max length; questions are cut so that
// [BOS, q, y] fits the decoder.
std::vector<TrainExample> make_examples(const Model& model, const corpus::QaDataset& data);

// L_QA + λ·L_VQ.
Tensor total_loss(const Tensor& l_qa, const Tensor& l_vq, double lambda_vq);
double total_loss(double l_qa, double l_vq, double lambda_vq);

// true = the document keeps its gradient. Each entry is dropped with
// probability rho; an all-dropped draw is redrawn.
std::vector<bool> backprop_dropout_mask(std::size_t k, double rho, Rng& rng);

struct BatchMetrics {
  double l_qa = 0.0;
  double l_vq = 0.0;
  double l_total = 0.0;
  std::size_t resets = 0;
  std::size_t grad_docs = 0;
  double lr = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double l_qa = 0.0;      // batch means
  double l_vq = 0.0;
  double l_total = 0.0;
  std::optional<double> perplexity;  // empty while usage is all zero
  std::size_t resets = 0;
  std::size_t dead_codes = 0;
  std::size_t batches = 0;
  std::optional<double> val_em;
  std::optional<double> val_f1;

  nlohmann::ordered_json to_json() const;
};

struct TrainOptions {
  bool disable_lora_dropout = false;  // gradient checks need a deterministic forward
  bool disable_backprop_dropout = false;
};

// Algorithm-1 optimizer loop over a Model it does not own.
class Trainer {
 public:
  Trainer(Model& model, Rng rng, TrainOptions options = {});

  // Needed for the warmup length; defaults to one epoch's worth on first use.
  void set_total_steps(std::size_t steps) { total_steps_ = steps; }
  std::size_t total_steps() const { return total_steps_; }
  double learning_rate(std::size_t step) const;

  BatchMetrics train_batch(std::span<const TrainExample> batch);
  EpochMetrics train_epoch(const std::vector<TrainExample>& examples);

  // The loss graph of one batch without an optimizer step: same forward as
  // train_batch with usage updates and resets switched off. For checks.
  Tensor batch_loss(std::span<const TrainExample> batch, BatchMetrics* metrics = nullptr);

  TrainerState state() const;
  void restore(const TrainerState& state);

  Model& model() { return model_; }
  Rng& rng() { return rng_; }
  Adam& optimizer() { return optimizer_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

  // Keeps the best validation result (EM, ties broken by F1); returns true
  // when this one is the new best.
  bool record_validation(double em, double f1);
  double best_em() const { return best_em_; }
  double best_f1() const { return best_f1_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  Tensor forward(std::span<const TrainExample> batch, bool update_codebook, BatchMetrics& m);

  Model& model_;
  Rng rng_;
  TrainOptions options_;
  Adam optimizer_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
  std::size_t total_steps_ = 0;
  std::size_t codebook_param_ = 0;  // index of E in the optimizer's list
  double best_em_ = -1.0;
  double best_f1_ = -1.0;
  std::size_t best_epoch_ = 0;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  double best_em = -1.0;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
};

// Runs the remaining epochs up to config.train.epochs, validating after each
// one when a validation set is given. `on_epoch` sees every epoch's metrics
// and whether it is the new best (by EM, ties by F1).
FitResult fit(Trainer& trainer, const std::vector<TrainExample>& train, const corpus::QaDataset* validation,
              const std::function<void(const EpochMetrics&, bool is_best)>& on_epoch = {});

struct ValidationResult {
  double em = 0.0;
  double f1 = 0.0;
};
ValidationResult validate(const Model& model, const corpus::QaDataset& validation);

}  // namespace mbc::training
