// mbc: train, adapt, evaluate and inspect memory-bank-compressed models.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbc/adaptation.hpp"
#include "mbc/codebook.hpp"
#include "mbc/config.hpp"
#include "mbc/corpus.hpp"
#include "mbc/membank.hpp"
#include "mbc/metrics.hpp"
#include "mbc/model.hpp"
#include "mbc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "mbc_out";
  bool no_reset = false;
  std::optional<std::size_t> group_size;
};

mbc::RunConfig resolve_config(const Globals& g) {
  mbc::RunConfig cfg = g.config_path.empty() ? mbc::RunConfig{} : mbc::load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.no_reset) cfg.train.reset_enabled = false;
  if (g.group_size) cfg.adapt.group_size = *g.group_size;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out_dir);
  return g.out_dir;
}

struct Splits {
  mbc::corpus::QaDataset train, val, test;
};

Splits load_splits(const mbc::RunConfig& cfg) {
  Splits s;
  if (!cfg.data.train_path.empty()) {
    s.train = mbc::corpus::load_qa(cfg.data.train_path);
    if (!cfg.data.val_path.empty()) s.val = mbc::corpus::load_qa(cfg.data.val_path);
    if (!cfg.data.test_path.empty()) s.test = mbc::corpus::load_qa(cfg.data.test_path);
    return s;
  }
  mbc::corpus::SyntheticOptions o;
  o.n_docs = cfg.data.n_docs;
  o.seed = cfg.seed;
  o.n_attributes = cfg.data.n_attributes;
  o.n_values = cfg.data.n_values;
  o.n_entities = cfg.data.n_entities;
  o.val_fraction = cfg.data.val_fraction;
  o.test_fraction = cfg.data.test_fraction;
  const auto c = mbc::corpus::gen_synthetic(o);
  s.train = c.split(c.train);
  s.val = c.split(c.val);
  s.test = c.split(c.test);
  return s;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

int cmd_train(const Globals& g, const std::string& resume) {
  mbc::RunConfig cfg = resolve_config(g);
  const auto splits = load_splits(cfg);
  const auto dir = out_dir(g);

  std::optional<mbc::Model> model;
  mbc::Rng rng(cfg.seed);
  mbc::TrainerState restored;
  if (!resume.empty()) {
    auto ck = mbc::load_checkpoint(resume);
    model.emplace(std::move(ck.model));
    restored = std::move(ck.state);
  } else {
    auto vocab = mbc::corpus::Vocabulary::build(mbc::corpus::vocabulary_texts(splits.train));
    model.emplace(mbc::Model::create(cfg, std::move(vocab), rng));
  }
  mbc::training::Trainer trainer(*model, std::move(rng));
  if (!resume.empty()) trainer.restore(restored);
  const auto examples = mbc::training::make_examples(*model, splits.train);

  std::ofstream log(dir / "metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  const auto frozen_before = model->frozen_hash();
  auto result = mbc::training::fit(trainer, examples, splits.val.records.empty() ? nullptr : &splits.val,
                                   [&](const mbc::training::EpochMetrics& m, bool best) {
                                     log << m.to_json().dump() << '\n' << std::flush;
                                     std::cout << "epoch " << m.epoch << "  L_QA " << fmt(m.l_qa) << "  L_VQ "
                                               << fmt(m.l_vq) << "  PPL "
                                               << (m.perplexity ? fmt(*m.perplexity) : "undefined") << "  resets "
                                               << m.resets;
                                     if (m.val_em) std::cout << "  val EM " << fmt(*m.val_em) << " F1 " << fmt(*m.val_f1);
                                     std::cout << (best ? "  *" : "") << '\n';
                                     if (best) mbc::save_checkpoint(dir / "best.mbck", *model, trainer.state());
                                     mbc::save_checkpoint(dir / "checkpoint.mbck", *model, trainer.state());
                                   });
  if (model->frozen_hash() != frozen_before) {
    std::cerr << "error: base decoder parameters changed during training\n";
    return 1;
  }
  if (trainer.epoch() == 0 || result.history.empty()) mbc::save_checkpoint(dir / "checkpoint.mbck", *model, trainer.state());
  const auto report = mbc::param_report(*model);
  std::cout << "trainable: amort " << report.amort << ", input " << report.input << ", aggregator "
            << report.aggregator << ", lora " << report.lora << ", codebook " << report.codebook << "; frozen base "
            << report.base << "; overhead " << fmt(report.overhead_percent()) << "%\n";
  std::cout << "checkpoint written to " << (dir / "checkpoint.mbck").string() << '\n';
  return 0;
}

int cmd_adapt(const Globals& g, const std::string& checkpoint, const std::string& stream_path,
              const std::string& qa_path) {
  auto ck = mbc::load_checkpoint(checkpoint);
  if (g.group_size) ck.model.config.adapt.group_size = *g.group_size;
  const auto& model = ck.model;
  const auto dir = out_dir(g);
  const auto stream = mbc::corpus::load_qa(stream_path);
  mbc::corpus::QaDataset queries = qa_path.empty() ? stream : mbc::corpus::load_qa(qa_path);

  const auto before = model.global_hash();
  mbc::adaptation::OnlineSession session(model, model.config.adapt.group_size);
  for (const auto& d : stream.documents) session.memorize(d);
  mbc::bank::save_bank(session.bank(), model.codebook, dir / "bank.mbcb");

  std::ofstream answers(dir / "answers.jsonl", std::ios::trunc);
  std::vector<std::string> preds, golds;
  for (const auto& r : queries.records) {
    preds.push_back(session.answer(r.question));
    golds.push_back(r.answer);
    ordered_json j;
    j["doc_id"] = r.doc_id;
    j["question"] = r.question;
    j["prediction"] = preds.back();
    j["answer"] = r.answer;
    answers << j.dump() << '\n';
  }
  if (model.global_hash() != before) {
    std::cerr << "error: adaptation modified model parameters\n";
    return 1;
  }
  const auto fp = mbc::bank::footprint(session.bank());
  std::cout << "memorized " << session.bank().size() << " documents; bank " << fmt(fp.compressed_mb())
            << " MB (continuous equivalent " << fmt(fp.continuous_mb()) << " MB)\n";
  ordered_json last;
  if (!preds.empty()) {
    last["em"] = mbc::metrics::exact_match(preds, golds);
    last["f1"] = mbc::metrics::mean_token_f1(preds, golds);
  }
  last["queries"] = preds.size();
  std::cout << last.dump() << '\n';
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data_path, const std::string& split,
             bool no_memory, bool retention) {
  auto ck = mbc::load_checkpoint(checkpoint);
  if (g.group_size) ck.model.config.adapt.group_size = *g.group_size;
  const auto& model = ck.model;
  mbc::corpus::QaDataset data;
  if (!data_path.empty()) {
    data = mbc::corpus::load_qa(data_path);
  } else {
    const auto splits = load_splits(model.config);
    data = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;
  }
  const std::size_t m = model.config.adapt.group_size;

  if (retention) {
    const auto& a = model.config.adapt;
    std::vector<mbc::corpus::QARecord> first;
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < data.documents.size(); ++i) position[data.documents[i].doc_id] = i;
    for (const auto& r : data.records)
      if (position.at(r.doc_id) < a.retention_chunk) first.push_back(r);
    const auto report = mbc::adaptation::retention_experiment(model, data.documents, first, a.retention_chunk,
                                                              a.retention_max, m);
    const auto dir = out_dir(g);
    std::ofstream(dir / "retention.jsonl", std::ios::trunc) << report.to_jsonl();
    std::cout << report.summary_table();
    return 0;
  }

  ordered_json j;
  const auto with = mbc::adaptation::evaluate(model, data, m, true);
  j["em"] = with.em;
  j["f1"] = with.f1;
  if (no_memory) {
    const auto without = mbc::adaptation::evaluate(model, data, m, false);
    j["em_no_memory"] = without.em;
    j["f1_no_memory"] = without.f1;
  }
  j["queries"] = with.predictions.size();
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_bench(const Globals& g, std::size_t num_codes, std::size_t dim, std::size_t tokens, std::size_t step,
              std::size_t max_docs, std::size_t element_bytes, std::size_t index_bytes) {
  const auto dir = out_dir(g);
  std::ofstream series(dir / "footprint.jsonl", std::ios::trunc);
  std::printf("%6s %12s %14s %11s\n", "docs", "MBC (MB)", "continuous (MB)", "reduction");
  std::vector<std::size_t> milestones{0};
  for (std::size_t n = step; step > 0 && n <= max_docs; n += step) milestones.push_back(n);
  for (std::size_t n : milestones) {
    const auto r = mbc::bank::footprint(n, num_codes, dim, tokens, element_bytes, index_bytes);
    ordered_json j;
    j["docs"] = n;
    j["mbc_mb"] = r.compressed_mb();
    j["continuous_mb"] = r.continuous_mb();
    j["reduction_pct"] = n == 0 ? ordered_json(nullptr) : ordered_json(r.reduction_percent);
    j["log10_mbc_mb"] = std::log10(r.compressed_mb());
    j["log10_continuous_mb"] = n == 0 ? ordered_json(nullptr) : ordered_json(std::log10(r.continuous_mb()));
    series << j.dump() << '\n';
    if (n == 0) {
      std::printf("%6zu %12.3f %14s %11s\n", n, r.compressed_mb(), "-", "-");
    } else {
      std::printf("%6zu %12.3f %14.3f %10.2f%%\n", n, r.compressed_mb(), r.continuous_mb(), r.reduction_percent);
    }
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint, const std::string& bank_path, std::size_t bins) {
  std::vector<double> usage;
  std::size_t threshold_dead = 0;
  ordered_json j;
  if (!checkpoint.empty()) {
    const auto ck = mbc::load_checkpoint(checkpoint);
    usage = ck.model.codebook.usage;
    threshold_dead = mbc::vq::count_dead_codes(ck.model.codebook);
    j["source"] = "checkpoint";
    j["num_codes"] = usage.size();
    j["dead_codes"] = threshold_dead;
    j["reset_threshold"] = ck.model.codebook.threshold;
  } else {
    const auto loaded = mbc::bank::load_bank(bank_path);
    usage.assign(loaded.bank.num_codes(), 0.0);
    for (const auto& e : loaded.bank.entries())
      for (auto c : e.codes) usage[c] += 1.0;
    j["source"] = "bank";
    j["num_codes"] = usage.size();
    j["documents"] = loaded.bank.size();
    j["unused_codes"] = std::count(usage.begin(), usage.end(), 0.0);
  }
  double total = 0.0;
  for (double u : usage) total += u;
  j["perplexity"] = total > 0.0 ? ordered_json(mbc::vq::codebook_perplexity(usage)) : ordered_json(nullptr);
  if (total <= 0.0) j["note"] = "perplexity undefined: all usage is zero";
  // Histogram of per-code share of usage, log-spaced like a usage plot.
  std::vector<std::size_t> hist(bins, 0);
  std::vector<double> edges(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) edges[b] = std::pow(10.0, -6.0 + 6.0 * static_cast<double>(b) / bins);
  std::size_t zero = 0;
  for (double u : usage) {
    const double p = total > 0.0 ? u / total : 0.0;
    if (p <= 0.0) {
      ++zero;
      continue;
    }
    std::size_t b = 0;
    while (b + 1 < bins && p >= edges[b + 1]) ++b;
    ++hist[b];
  }
  j["zero_share_codes"] = zero;
  j["histogram_edges"] = edges;
  j["histogram_counts"] = hist;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_gen_corpus(const Globals& g, std::optional<std::size_t> n_docs) {
  mbc::RunConfig cfg = resolve_config(g);
  if (n_docs) cfg.data.n_docs = *n_docs;
  cfg.data.train_path.clear();
  const auto splits = load_splits(cfg);
  const auto dir = out_dir(g);
  mbc::corpus::save_qa(splits.train, dir / "train.jsonl");
  mbc::corpus::save_qa(splits.val, dir / "val.jsonl");
  mbc::corpus::save_qa(splits.test, dir / "test.jsonl");
  std::cout << "wrote " << splits.train.records.size() << " train, " << splits.val.records.size() << " val, "
            << splits.test.records.size() << " test records to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-bank compression for continual adaptation of language models"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the configuration seed");
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
  app.add_flag("--no-reset", g.no_reset, "Disable dead-code resetting");
  app.add_option("--group-size", g.group_size, "Hierarchical aggregation group size M")->check(CLI::PositiveNumber);

  std::string resume;
  auto* train = app.add_subcommand("train", "End-to-end training");
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  std::string checkpoint, stream, qa;
  auto* adapt = app.add_subcommand("adapt", "Memorize a document stream and answer its queries");
  adapt->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  adapt->add_option("--stream", stream, "Documents to memorize (QA JSONL)")->required()->check(CLI::ExistingFile);
  adapt->add_option("--qa", qa, "Queries to answer (default: the stream's own records)")->check(CLI::ExistingFile);

  std::string data, split = "test";
  bool no_memory = false, retention = false;
  auto* eval = app.add_subcommand("eval", "EM/F1 of a checkpoint, optionally against the no-memory baseline");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "QA JSONL (default: a split of the configured corpus)")->check(CLI::ExistingFile);
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval->add_flag("--no-memory", no_memory, "Also score answers produced with an empty bank");
  eval->add_flag("--retention", retention, "Run the retention protocol over the data's documents");

  std::size_t num_codes = 512, dim = 768, tokens = 12, step = 200, max_docs = 1600, element_bytes = 4,
              index_bytes = 8;
  auto* bench = app.add_subcommand("bench", "Footprint of the compressed and continuous banks per milestone");
  bench->add_option("--num-codes", num_codes)->capture_default_str();
  bench->add_option("--dim", dim)->capture_default_str();
  bench->add_option("--tokens", tokens)->capture_default_str();
  bench->add_option("--step", step)->capture_default_str();
  bench->add_option("--max-docs", max_docs)->capture_default_str();
  bench->add_option("--element-bytes", element_bytes)->capture_default_str();
  bench->add_option("--index-bytes", index_bytes)->capture_default_str();

  std::string bank_path;
  std::size_t bins = 12;
  auto* inspect = app.add_subcommand("inspect-codebook", "Code usage perplexity and histogram");
  auto* ck_opt = inspect->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  auto* bank_opt = inspect->add_option("--bank", bank_path)->check(CLI::ExistingFile);
  ck_opt->excludes(bank_opt);
  inspect->add_option("--bins", bins)->check(CLI::PositiveNumber)->capture_default_str();

  std::optional<std::size_t> n_docs;
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic fact corpus as QA JSONL splits");
  gen->add_option("--n-docs", n_docs);

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return cmd_train(g, resume);
    if (adapt->parsed()) return cmd_adapt(g, checkpoint, stream, qa);
    if (eval->parsed()) return cmd_eval(g, checkpoint, data, split, no_memory, retention);
    if (bench->parsed()) return cmd_bench(g, num_codes, dim, tokens, step, max_docs, element_bytes, index_bytes);
    if (inspect->parsed()) {
      if (checkpoint.empty() && bank_path.empty()) {
        std::cerr << "error: inspect-codebook needs --checkpoint or --bank\n";
        return 2;
      }
      return cmd_inspect(checkpoint, bank_path, bins);
    }
    if (gen->parsed()) return cmd_gen_corpus(g, n_docs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
