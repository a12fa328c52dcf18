#include "mbc/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace mbc {

namespace {

using nlohmann::json;

// Reads one section, rejecting keys the section does not declare.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: \"" + name_ + "\" must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw std::invalid_argument("config: unknown key \"" + path(key) + "\"");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("expected true or false");
      } else {
        if (!it->is_string()) throw std::invalid_argument("expected a string");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      throw std::invalid_argument("config: \"" + path(key) + "\": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

 private:
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  if (const json* m = root.child("model")) {
    Section s(*m, "model");
    auto& x = c.model;
    s.get("vocab_size", x.vocab_size);
    s.get("dim", x.dim);
    s.get("tokens", x.tokens);
    s.get("max_sequence_length", x.max_sequence_length);
    s.get("encoder_blocks", x.encoder_blocks);
    s.get("encoder_heads", x.encoder_heads);
    s.get("aggregator_blocks", x.aggregator_blocks);
    s.get("aggregator_heads", x.aggregator_heads);
    s.get("decoder_layers", x.decoder_layers);
    s.get("decoder_heads", x.decoder_heads);
    s.get("n_lora", x.n_lora);
    s.get("lora_rank", x.lora_rank);
    s.get("lora_alpha", x.lora_alpha);
    s.get("lora_dropout", x.lora_dropout);
    s.get("share_down_projection", x.share_down_projection);
  }
  if (const json* t = root.child("train")) {
    Section s(*t, "train");
    auto& x = c.train;
    s.get("learning_rate", x.learning_rate);
    s.get("epochs", x.epochs);
    s.get("batch_size", x.batch_size);
    s.get("beta_commit", x.beta_commit);
    s.get("lambda_vq", x.lambda_vq);
    s.get("num_codes", x.num_codes);
    s.get("reset_threshold", x.reset_threshold);
    s.get("usage_decay", x.usage_decay);
    s.get("backprop_dropout", x.backprop_dropout);
    s.get("warmup_fraction", x.warmup_fraction);
    s.get("reset_enabled", x.reset_enabled);
    s.get("codebook_init", x.codebook_init);
    s.get("clustered_offset", x.clustered_offset);
    s.get("validate_each_epoch", x.validate_each_epoch);
  }
  if (const json* a = root.child("adapt")) {
    Section s(*a, "adapt");
    auto& x = c.adapt;
    s.get("group_size", x.group_size);
    s.get("max_answer_tokens", x.max_answer_tokens);
    s.get("retention_chunk", x.retention_chunk);
    s.get("retention_max", x.retention_max);
  }
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    auto& x = c.data;
    s.get("train_path", x.train_path);
    s.get("val_path", x.val_path);
    s.get("test_path", x.test_path);
    s.get("n_docs", x.n_docs);
    s.get("n_attributes", x.n_attributes);
    s.get("n_values", x.n_values);
    s.get("n_entities", x.n_entities);
    s.get("val_fraction", x.val_fraction);
    s.get("test_fraction", x.test_fraction);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  const auto& m = c.model;
  j["model"] = {{"vocab_size", m.vocab_size},
                {"dim", m.dim},
                {"tokens", m.tokens},
                {"max_sequence_length", m.max_sequence_length},
                {"encoder_blocks", m.encoder_blocks},
                {"encoder_heads", m.encoder_heads},
                {"aggregator_blocks", m.aggregator_blocks},
                {"aggregator_heads", m.aggregator_heads},
                {"decoder_layers", m.decoder_layers},
                {"decoder_heads", m.decoder_heads},
                {"n_lora", m.n_lora},
                {"lora_rank", m.lora_rank},
                {"lora_alpha", m.lora_alpha},
                {"lora_dropout", m.lora_dropout},
                {"share_down_projection", m.share_down_projection}};
  const auto& t = c.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"beta_commit", t.beta_commit},
                {"lambda_vq", t.lambda_vq},
                {"num_codes", t.num_codes},
                {"reset_threshold", t.reset_threshold},
                {"usage_decay", t.usage_decay},
                {"backprop_dropout", t.backprop_dropout},
                {"warmup_fraction", t.warmup_fraction},
                {"reset_enabled", t.reset_enabled},
                {"codebook_init", t.codebook_init},
                {"clustered_offset", t.clustered_offset},
                {"validate_each_epoch", t.validate_each_epoch}};
  const auto& a = c.adapt;
  j["adapt"] = {{"group_size", a.group_size},
                {"max_answer_tokens", a.max_answer_tokens},
                {"retention_chunk", a.retention_chunk},
                {"retention_max", a.retention_max}};
  const auto& d = c.data;
  j["data"] = {{"train_path", d.train_path},     {"val_path", d.val_path},
               {"test_path", d.test_path},       {"n_docs", d.n_docs},
               {"n_attributes", d.n_attributes}, {"n_values", d.n_values},
               {"n_entities", d.n_entities},     {"val_fraction", d.val_fraction},
               {"test_fraction", d.test_fraction}};
  return j;
}

std::string canonical_config(const RunConfig& cfg) { return config_to_json(cfg).dump(); }

void RunConfig::validate() const {
  encoder_config(std::max<std::size_t>(model.vocab_size, 4)).validate();
  aggregator_config().validate();
  decoder_config(std::max<std::size_t>(model.vocab_size, 4)).validate();
  if (train.batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (!(train.learning_rate > 0.0)) throw std::invalid_argument("config: train.learning_rate must be positive");
  if (!(train.beta_commit > 0.0)) throw std::invalid_argument("config: train.beta_commit must be positive");
  if (!(train.lambda_vq >= 0.0)) throw std::invalid_argument("config: train.lambda_vq must be >= 0");
  if (train.num_codes < 2) throw std::invalid_argument("config: train.num_codes must be >= 2");
  if (!(train.backprop_dropout >= 0.0 && train.backprop_dropout < 1.0)) {
    throw std::invalid_argument("config: train.backprop_dropout must be in [0, 1)");
  }
  if (!(train.usage_decay > 0.0 && train.usage_decay < 1.0)) {
    throw std::invalid_argument("config: train.usage_decay must be in (0, 1)");
  }
  if (!(train.reset_threshold > 0.0)) throw std::invalid_argument("config: train.reset_threshold must be positive");
  if (!(train.warmup_fraction >= 0.0 && train.warmup_fraction <= 1.0)) {
    throw std::invalid_argument("config: train.warmup_fraction must be in [0, 1]");
  }
  if (train.codebook_init != "uniform" && train.codebook_init != "clustered") {
    throw std::invalid_argument("config: train.codebook_init must be \"uniform\" or \"clustered\"");
  }
  if (adapt.group_size < 1) throw std::invalid_argument("config: adapt.group_size must be >= 1");
  if (adapt.max_answer_tokens < 1) throw std::invalid_argument("config: adapt.max_answer_tokens must be >= 1");
  if (adapt.retention_chunk < 1 || adapt.retention_max < adapt.retention_chunk) {
    throw std::invalid_argument("config: need 1 <= adapt.retention_chunk <= adapt.retention_max");
  }
}

encoder::EncoderConfig RunConfig::encoder_config(std::size_t vocab_size) const {
  return {vocab_size, model.dim, model.encoder_blocks, model.encoder_heads, model.max_sequence_length, model.tokens};
}

aggregator::AggregatorConfig RunConfig::aggregator_config() const {
  return {model.dim, model.tokens, model.aggregator_blocks, model.aggregator_heads};
}

decoder::DecoderConfig RunConfig::decoder_config(std::size_t vocab_size) const {
  return {vocab_size,       model.dim,          model.decoder_layers, model.decoder_heads,
          model.max_sequence_length, model.n_lora, model.lora_rank, model.lora_alpha,
          model.lora_dropout, model.share_down_projection};
}

}  // namespace mbc
