// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: mbc_acceptance [configs-dir] [--only N[,N...]]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mbc/adaptation.hpp"
#include "mbc/aggregator.hpp"
#include "mbc/codebook.hpp"
#include "mbc/config.hpp"
#include "mbc/corpus.hpp"
#include "mbc/decoder.hpp"
#include "mbc/membank.hpp"
#include "mbc/metrics.hpp"
#include "mbc/model.hpp"
#include "mbc/training.hpp"
#include "metric_fixture.hpp"
#include "support.hpp"

using namespace mbc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::filesystem::path g_configs = MBC_CONFIG_DIR;

corpus::SyntheticCorpus corpus_for(const RunConfig& cfg) {
  corpus::SyntheticOptions o;
  o.n_docs = cfg.data.n_docs;
  o.seed = cfg.seed;
  o.n_attributes = cfg.data.n_attributes;
  o.n_values = cfg.data.n_values;
  o.n_entities = cfg.data.n_entities;
  o.val_fraction = cfg.data.val_fraction;
  o.test_fraction = cfg.data.test_fraction;
  return corpus::gen_synthetic(o);
}

// The same construction order the CLI uses, so a `mbc train` with the same
// config reproduces these runs.
struct Run {
  corpus::SyntheticCorpus data;
  corpus::QaDataset train;
  std::optional<Model> model;
  std::vector<training::EpochMetrics> history;
};

Run train_run(const RunConfig& cfg, std::size_t epochs) {
  Run r;
  r.data = corpus_for(cfg);
  r.train = r.data.split(r.data.train);
  Rng rng(cfg.seed);
  r.model.emplace(Model::create(cfg, corpus::Vocabulary::build(corpus::vocabulary_texts(r.train)), rng));
  r.model->config.train.epochs = epochs;
  training::Trainer trainer(*r.model, std::move(rng));
  r.history = training::fit(trainer, training::make_examples(*r.model, r.train), nullptr).history;
  return r;
}

// ---------------------------------------------------------------------------

Outcome footprint_reproduction() {
  // StreamingQA / DistilGPT2 column, MB.
  const std::array<double, 8> mac{8.21, 16.42, 24.63, 32.84, 41.04, 49.25, 57.46, 65.67};
  const std::array<double, 8> mbc{1.52, 1.54, 1.56, 1.59, 1.61, 1.63, 1.65, 1.67};
  double worst = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto r = bank::footprint(200 * (i + 1), 512, 768, 12, 4, 8);
    worst = std::max(worst, std::abs(r.compressed_mb() - mbc[i]) / mbc[i]);
    worst = std::max(worst, std::abs(r.continuous_mb() - mac[i]) / mac[i]);
  }
  const double reduction = bank::footprint(1600, 512, 768, 12, 4, 8).reduction_percent;
  return {worst <= 0.15 && reduction >= 97.0,
          "max deviation " + fmt("%.1f%%", 100.0 * worst) + " (limit 15%), reduction at 1600 docs " +
              fmt("%.2f%%", reduction) + " (need >= 97%)"};
}

Outcome parameter_overhead() {
  const double delta = static_cast<double>(mbc_parameter_delta(512, 768, 16, 6, true));
  const double rel = std::abs(delta - 0.6e6) / 0.6e6;
  const double mac_total = 197e6;
  const double overhead = 100.0 * delta / mac_total;
  return {rel <= 0.20 && overhead < 0.5,
          "|E|+|KV-LoRA| = " + fmt("%.0f", delta) + " (" + fmt("%.1f%%", 100 * rel) + " from 0.6M, limit 20%), overhead " +
              fmt("%.3f%%", overhead) + " of 197M (need < 0.5%)"};
}

Outcome quantizer_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t t = 1 + rng.below(8), n = 2 + rng.below(31), d = 1 + rng.below(8);
    auto cb = vq::init_codebook(n, d, rng);
    for (double& x : cb.embeddings.mutable_values()) x = rng.uniform(-1, 1);
    Tensor phi = test::uniform(rng, {t, d}, -1, 1, false);
    const auto got = vq::nearest_codes(phi, cb);
    for (std::size_t r = 0; r < t; ++r) {
      std::size_t best = 0;
      double best_d = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double dist = 0.0;
        for (std::size_t k = 0; k < d; ++k) dist += std::pow(phi.at(r, k) - cb.embeddings.at(j, k), 2);
        if (j == 0 || dist < best_d) best = j, best_d = dist;
      }
      if (got[r] != best) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 5.0,
          std::to_string(mismatches) + " mismatches over 1000 instances in " + fmt("%.2f s", secs)};
}

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  // Bit-exact STE forward on random instances.
  Rng rng(77);
  bool ste_exact = true;
  for (int i = 0; i < 200; ++i) {
    auto cb = vq::init_codebook(2 + rng.below(31), 1 + rng.below(8), rng);
    for (double& x : cb.embeddings.mutable_values()) x = rng.uniform(-1, 1);
    Tensor phi = test::uniform(rng, {1 + rng.below(8), cb.dim()});
    auto q = vq::quantize_ste(phi, cb);
    ste_exact = ste_exact && std::equal(q.ste.values().begin(), q.ste.values().end(), q.hard.values().begin());
  }

  // Full pipeline on the toy configuration: one batch, dropouts off, every
  // stop-gradient value and code choice frozen at the evaluation point.
  auto cfg = load_config(g_configs / "toy.json");
  const auto data = corpus_for(cfg);
  const auto train = data.split(data.train);
  Rng mrng(cfg.seed);
  Model model = Model::create(cfg, corpus::Vocabulary::build(corpus::vocabulary_texts(train)), mrng);
  for (auto& l : model.lora.layers) {
    for (double& x : l.b_k.mutable_values()) x = mrng.normal(0.0, 0.05);
    for (double& x : l.b_v.mutable_values()) x = mrng.normal(0.0, 0.05);
  }
  const auto examples = training::make_examples(model, train);
  const std::vector<training::TrainExample> batch(examples.begin(), examples.begin() + 4);
  training::Trainer trainer(model, Rng(5), {true, true});

  ops::FrozenBranches frozen;
  Tensor loss = trainer.batch_loss(batch);
  frozen.start_replay();
  loss.backward();

  // Central differences per loss term, combined afterwards: at initialization
  // L_VQ is two orders of magnitude above L_QA, and differencing their sum
  // would lose the small aggregator and adapter gradients to rounding.
  const double lambda = cfg.train.lambda_vq;
  const auto fd = [&](std::span<double> values, std::size_t i) {
    NoGradGuard no_grad;
    const double h = 1e-5, saved = values[i];
    training::BatchMetrics up, down;
    values[i] = saved + h;
    (void)trainer.batch_loss(batch, &up);
    values[i] = saved - h;
    (void)trainer.batch_loss(batch, &down);
    values[i] = saved;
    return (up.l_qa - down.l_qa) / (2 * h) + lambda * ((up.l_vq - down.l_vq) / (2 * h));
  };

  auto params = model.trainable();
  double worst = 0.0;
  std::string worst_name;
  std::size_t probed = 0;
  std::set<std::string> groups;
  for (auto& p : params) {
    std::vector<std::size_t> coords = test::sample_coords(rng, p.tensor.numel(), 3);
    if (p.name == "codebook") {
      // Rows that were selected carry the codebook-loss gradient.
      std::vector<std::size_t> live;
      const auto g = p.tensor.grad();
      for (std::size_t i = 0; i < g.size() && live.size() < 24; ++i)
        if (g[i] != 0.0) live.push_back(i);
      coords.insert(coords.end(), live.begin(), live.end());
    }
    const auto grad = p.tensor.grad();
    auto values = p.tensor.mutable_values();
    double err = 0.0;
    for (std::size_t c : coords) {
      const double analytic = grad.empty() ? 0.0 : grad[c];
      err = std::max(err, relative_error(analytic, fd(values, c), test::kGradFloor));
    }
    probed += coords.size();
    groups.insert(p.name.substr(0, p.name.find('.')));
    if (err > worst) worst = err, worst_name = p.name;
  }
  const double secs = seconds_since(t0);
  return {ste_exact && worst < 1e-5 && secs < 120.0,
          std::string("ste==hard ") + (ste_exact ? "bit-exact" : "MISMATCH") + "; max rel error " + fmt("%.2e", worst) +
              " at " + worst_name + " over " + std::to_string(probed) + " coords in " +
              std::to_string(groups.size()) + " groups (limit 1e-5); " + fmt("%.1f s", secs)};
}

Outcome noop_composition() {
  auto cfg = load_config(g_configs / "toy.json");
  const auto data = corpus_for(cfg);
  const auto train = data.split(data.train);
  Rng rng(cfg.seed);
  Model model = Model::create(cfg, corpus::Vocabulary::build(corpus::vocabulary_texts(train)), rng);
  bool exact = true;
  for (const auto& ex : training::make_examples(model, train)) {
    auto seq = decoder::make_qa_sequence(ex.question_tokens, ex.answer_tokens, corpus::kBos, corpus::kEoa);
    Tensor a = decoder::forward_modulated(seq.input, Tensor(), model.base, &model.lora, model.decoder_cfg);
    Tensor b = decoder::forward_base(seq.input, model.base, model.decoder_cfg);
    exact = exact && std::equal(a.values().begin(), a.values().end(), b.values().begin());
    if (ex.doc_id == train.records[15].doc_id) break;
  }
  const auto before = model.frozen_hash();
  training::Trainer trainer(model, std::move(rng));
  const auto examples = training::make_examples(model, train);
  const std::size_t k = cfg.train.batch_size;
  trainer.set_total_steps(50);
  for (std::size_t step = 0; step < 50; ++step) {
    const std::size_t start = (step * k) % examples.size();
    std::vector<training::TrainExample> batch;
    for (std::size_t i = 0; i < k; ++i) batch.push_back(examples[(start + i) % examples.size()]);
    trainer.train_batch(batch);
  }
  const bool hash_same = model.frozen_hash() == before;
  return {exact && hash_same, std::string("logits ") + (exact ? "bit-identical" : "DIFFER") +
                                  " on 16 sequences; base hash after 50 steps " + (hash_same ? "unchanged" : "CHANGED")};
}

Outcome collapse_reset() {
  const auto t0 = Clock::now();
  auto cfg = load_config(g_configs / "collapse.json");
  const auto with = train_run(cfg, cfg.train.epochs);
  cfg.train.reset_enabled = false;
  const auto without = train_run(cfg, cfg.train.epochs);
  const double p_with = with.history.back().perplexity.value_or(0.0);
  const double p_without = without.history.back().perplexity.value_or(0.0);
  const double limit = static_cast<double>(cfg.train.num_codes) / 8.0;
  const double secs = seconds_since(t0);
  return {p_with >= 2.0 * p_without && p_without < limit && secs < 600.0,
          "PPL with resets " + fmt("%.2f", p_with) + ", without " + fmt("%.2f", p_without) + " (ratio " +
              fmt("%.1f", p_with / p_without) + ", need >= 2; need no-reset < " + fmt("%.0f", limit) + "); " +
              fmt("%.0f s", secs)};
}

std::optional<Run> g_toy;  // kept for the retention criterion

Outcome memory_matters() {
  const auto t0 = Clock::now();
  const auto cfg = load_config(g_configs / "toy.json");
  g_toy = train_run(cfg, cfg.train.epochs);
  const auto& model = *g_toy->model;
  const auto with = adaptation::evaluate(model, g_toy->train, cfg.adapt.group_size, true);
  const auto without = adaptation::evaluate(model, g_toy->train, cfg.adapt.group_size, false);
  const double gap = with.em - without.em;
  const double secs = seconds_since(t0);
  return {gap >= 0.3 && secs < 1800.0,
          "held-in EM " + fmt("%.4f", with.em) + " with bank vs " + fmt("%.4f", without.em) + " without (gap " +
              fmt("%.4f", gap) + ", need >= 0.3) after " + std::to_string(g_toy->history.size()) + " epochs on " +
              std::to_string(g_toy->train.records.size()) + " facts; " + fmt("%.0f s", secs)};
}

Outcome aggregation_invariants() {
  aggregator::AggregatorConfig cfg;  // D = 64, T = 12, 4 blocks
  Rng rng(8);
  const auto params = aggregator::AggregatorParams::init(cfg, rng);
  Tensor q = test::uniform(rng, {7, cfg.dim}, -1, 1, false);
  std::vector<Tensor> entries;
  for (int i = 0; i < 16; ++i) entries.push_back(test::uniform(rng, {cfg.tokens, cfg.dim}, -1, 1, false));
  NoGradGuard no_grad;
  const Tensor flat = aggregator::aggregate(q, entries, params, cfg);
  const auto same = [](const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
  };
  std::size_t perm_fail = 0;
  auto shuffled = entries;
  for (int i = 0; i < 100; ++i) {
    rng.shuffle(shuffled);
    if (!same(aggregator::aggregate(q, shuffled, params, cfg), flat)) ++perm_fail;
  }
  bool hier = true;
  for (std::size_t m : {16, 17, 64, 1000}) hier = hier && same(aggregator::hierarchical_aggregate(q, entries, params, cfg, m), flat);

  std::vector<Tensor> four(entries.begin(), entries.begin() + 4);
  std::vector<Tensor> g1(four.begin(), four.begin() + 2), g2(four.begin() + 2, four.end());
  std::vector<Tensor> staged{aggregator::aggregate(q, g1, params, cfg), aggregator::aggregate(q, g2, params, cfg)};
  const bool staged_ok = same(aggregator::hierarchical_aggregate(q, four, params, cfg, 2),
                              aggregator::aggregate(q, staged, params, cfg));
  return {perm_fail == 0 && hier && staged_ok,
          std::to_string(100 - perm_fail) + "/100 permutations bit-identical; M >= n " + (hier ? "bit-equal" : "DIFFERS") +
              "; staged n=4, M=2 " + (staged_ok ? "bit-equal" : "DIFFERS")};
}

Outcome gradient_free_adaptation() {
  auto cfg = load_config(g_configs / "toy.json");
  cfg.data.n_docs = 1665;
  cfg.adapt.group_size = 64;
  const auto data = corpus_for(cfg);
  const auto all = data.all();
  Rng rng(cfg.seed);
  Model model = Model::create(cfg, corpus::Vocabulary::build(corpus::vocabulary_texts(all)), rng);
  const auto before = model.global_hash();
  adaptation::OnlineSession session(model, cfg.adapt.group_size);
  for (const auto& d : all.documents) session.memorize(d);
  for (std::size_t i = 0; i < 100; ++i) (void)session.answer(all.records[i * 16].question);
  const bool same = model.global_hash() == before;
  return {same && session.bank().size() == 1665,
          "global hash " + std::string(same ? "identical" : "CHANGED") + " after memorizing " +
              std::to_string(session.bank().size()) + " documents and answering 100 queries"};
}

Outcome metric_oracles() {
  std::size_t bad = 0;
  for (const auto& c : test::kMetricCases) {
    if (metrics::exact_match(c.pred, c.gold) != c.em) ++bad;
    if (metrics::token_f1(c.pred, c.gold) != c.f1) ++bad;
  }
  return {bad == 0, std::to_string(test::kMetricCases.size()) + " cases, " + std::to_string(bad) + " disagreements"};
}

Outcome retention_harness() {
  if (!g_toy) g_toy = train_run(load_config(g_configs / "toy.json"), load_config(g_configs / "toy.json").train.epochs);
  const auto& model = *g_toy->model;
  const auto& cfg = model.config;
  // The trained facts lead the stream; later chunks are fresh documents.
  std::vector<corpus::Document> stream = g_toy->train.documents;
  corpus::SyntheticOptions o;
  o.n_docs = cfg.adapt.retention_max - stream.size();
  o.seed = cfg.seed + 1000;
  o.val_fraction = o.test_fraction = 0.0;
  for (auto d : corpus::gen_synthetic(o).documents) {
    d.doc_id = "stream-" + d.doc_id;
    stream.push_back(std::move(d));
  }
  std::set<std::string> first_docs;
  for (std::size_t i = 0; i < cfg.adapt.retention_chunk; ++i) first_docs.insert(stream[i].doc_id);
  std::vector<corpus::QARecord> first;
  for (const auto& r : g_toy->train.records)
    if (first_docs.contains(r.doc_id)) first.push_back(r);

  const auto report = adaptation::retention_experiment(model, stream, first, cfg.adapt.retention_chunk,
                                                       cfg.adapt.retention_max, cfg.adapt.group_size);
  bool finite = report.rows.size() == cfg.adapt.retention_max / cfg.adapt.retention_chunk;
  bool footprint_exact = true;
  for (const auto& r : report.rows) {
    finite = finite && std::isfinite(r.f1) && r.retention_pct && std::isfinite(*r.retention_pct);
    footprint_exact = footprint_exact &&
                      r.footprint_mb == bank::footprint(r.docs, model.codebook.size(), model.codebook.dim(),
                                                        model.encoder_cfg.output_tokens)
                                            .compressed_mb();
  }
  const bool first_100 = !report.rows.empty() && report.rows[0].retention_pct && *report.rows[0].retention_pct == 100.0;
  std::string series;
  for (const auto& r : report.rows) series += (series.empty() ? "" : " ") + (r.retention_pct ? fmt("%.1f", *r.retention_pct) : "n/a");
  return {first_100 && finite && footprint_exact,
          "retention % at 200..1600 docs: " + series + "; footprint column " +
              (footprint_exact ? "matches the model exactly" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      g_configs = a;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"footprint reproduction", footprint_reproduction},
      {"parameter overhead", parameter_overhead},
      {"quantizer oracle equivalence", quantizer_oracle},
      {"STE and gradient integrity", gradient_integrity},
      {"no-op composition", noop_composition},
      {"collapse/reset experiment", collapse_reset},
      {"memory matters end-to-end", memory_matters},
      {"aggregation invariants", aggregation_invariants},
      {"gradient-free adaptation", gradient_free_adaptation},
      {"metric oracles", metric_oracles},
      {"retention harness", retention_harness},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
