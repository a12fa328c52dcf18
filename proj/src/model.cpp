#include "mbc/model.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "binio.hpp"
#include "mbc/layers.hpp"

namespace mbc {

Model Model::create(const RunConfig& cfg, corpus::Vocabulary vocab, Rng& rng) {
  cfg.validate();
  std::size_t vocab_size = vocab.size();
  if (cfg.model.vocab_size != 0) {
    if (cfg.model.vocab_size < vocab.size()) {
      throw std::invalid_argument("model.vocab_size " + std::to_string(cfg.model.vocab_size) + " is smaller than the " +
                                  std::to_string(vocab.size()) + "-token vocabulary");
    }
    vocab_size = cfg.model.vocab_size;
  }
  Model m;
  m.config = cfg;
  m.vocab = std::move(vocab);
  m.encoder_cfg = cfg.encoder_config(vocab_size);
  m.aggregator_cfg = cfg.aggregator_config();
  m.decoder_cfg = cfg.decoder_config(vocab_size);

  const auto& t = cfg.train;
  m.codebook = t.codebook_init == "clustered"
                   ? vq::init_codebook_clustered(t.num_codes, cfg.model.dim, rng, t.clustered_offset, t.usage_decay,
                                                 t.reset_threshold)
                   : vq::init_codebook(t.num_codes, cfg.model.dim, rng, t.usage_decay, t.reset_threshold);
  m.amort = encoder::EncoderParams::init(m.encoder_cfg, rng);
  m.input = m.amort.clone();
  m.aggregator = aggregator::AggregatorParams::init(m.aggregator_cfg, rng);
  m.base = decoder::BaseDecoder::init(m.decoder_cfg, rng);
  m.lora = decoder::KvLoraAdapter::init(m.decoder_cfg, rng);
  return m;
}

Model Model::clone() const {
  Model m;
  m.config = config;
  m.vocab = vocab;
  m.encoder_cfg = encoder_cfg;
  m.aggregator_cfg = aggregator_cfg;
  m.decoder_cfg = decoder_cfg;
  m.amort = amort.clone();
  m.input = input.clone();
  m.aggregator = aggregator.clone();
  m.base = base.clone();
  m.lora = lora.clone();
  m.codebook = codebook.clone();
  return m;
}

namespace {

// Queries keep every encoder row, so the input encoder's pooling map is
// never read; it is left out of every parameter list.
std::vector<NamedParam> input_params(const encoder::EncoderParams& input) {
  auto all = input.named("input");
  std::erase_if(all, [](const NamedParam& p) { return p.name == "input.pooling"; });
  return all;
}

}  // namespace

std::vector<NamedParam> Model::trainable() const {
  std::vector<NamedParam> out = amort.named("amort");
  for (auto& group : {input_params(input), aggregator.named("aggregator"), lora.named("lora")}) {
    out.insert(out.end(), group.begin(), group.end());
  }
  out.push_back({"codebook", codebook.embeddings});
  return out;
}

std::vector<NamedParam> Model::frozen() const { return base.named("base"); }

std::vector<NamedParam> Model::all_params() const {
  auto out = trainable();
  auto f = frozen();
  out.insert(out.end(), f.begin(), f.end());
  return out;
}

std::uint64_t Model::frozen_hash() const { return layers::hash_params(frozen()); }

std::uint64_t Model::global_hash() const {
  return hash_values(codebook.usage, layers::hash_params(all_params()));
}

ParamReport param_report(const Model& model) {
  ParamReport r;
  r.amort = layers::count_params(model.amort.named("amort"));
  r.input = layers::count_params(input_params(model.input));
  r.aggregator = layers::count_params(model.aggregator.named("aggregator"));
  r.lora = model.lora.parameter_count();
  r.codebook = model.codebook.embeddings.numel();
  r.base = layers::count_params(model.frozen());
  return r;
}

std::size_t mbc_parameter_delta(std::size_t num_codes, std::size_t dim, std::size_t lora_rank, std::size_t n_lora,
                                bool shared_down) {
  return num_codes * dim + decoder::lora_parameter_count(dim, lora_rank, n_lora, shared_down);
}

namespace {

void put_block(std::ostream& os, const std::string& name, Shape shape, std::span<const double> values) {
  if (values.size() != shape.numel()) throw std::logic_error("checkpoint: block \"" + name + "\" size mismatch");
  binio::put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  binio::put_bytes(os, name);
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(shape.rows));
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(shape.cols));
  binio::put_f64s(os, values);
}

struct Block {
  Shape shape;
  std::vector<double> values;
};

std::pair<std::string, Block> get_block(std::istream& is) {
  const auto len = binio::get_uint<std::uint16_t>(is, "block name length");
  std::string name = binio::get_bytes(is, len, "block name");
  Block b;
  b.shape.rows = binio::get_uint<std::uint32_t>(is, "block rows");
  b.shape.cols = binio::get_uint<std::uint32_t>(is, "block cols");
  b.values = binio::get_f64s(is, b.shape.numel(), name.c_str());
  return {std::move(name), std::move(b)};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainerState& state) {
  const auto params = model.all_params();
  const auto trainable = model.trainable();
  if (!state.adam.empty() && state.adam.size() != trainable.size()) {
    throw std::invalid_argument("checkpoint: optimizer state does not match the trainable parameters");
  }
  nlohmann::json header;
  header["config"] = config_to_json(model.config);
  header["vocabulary"] = model.vocab.tokens();
  header["epoch"] = state.epoch;
  header["step"] = state.step;
  header["total_steps"] = state.total_steps;
  header["rng_state"] = state.rng_state;
  header["best_em"] = state.best_em;
  header["best_f1"] = state.best_f1;
  header["best_epoch"] = state.best_epoch;
  header["has_optimizer"] = !state.adam.empty();
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("MBCK", 4);
  binio::put_uint<std::uint16_t>(os, kCheckpointVersion);
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(header_text.size()));
  binio::put_bytes(os, header_text);
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) put_block(os, p.name, p.tensor.shape(), p.tensor.values());
  put_block(os, "codebook.usage", {1, model.codebook.usage.size()}, model.codebook.usage);
  for (std::size_t i = 0; i < state.adam.size(); ++i) {
    const auto& s = state.adam[i];
    binio::put_uint<std::uint64_t>(os, s.step);
    // Moments of a parameter that has not been stepped yet are stored empty.
    const Shape shape = s.m.empty() ? Shape{0, 0} : trainable[i].tensor.shape();
    put_block(os, "adam.m." + trainable[i].name, shape, s.m);
    put_block(os, "adam.v." + trainable[i].name, shape, s.v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  binio::expect_magic(is, "MBCK", path.string());
  const auto version = binio::get_uint<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = binio::get_uint<std::uint32_t>(is, "header length");
  const auto header = nlohmann::json::parse(binio::get_bytes(is, header_len, "header"));

  RunConfig cfg = config_from_json(header.at("config"));
  auto vocab = corpus::Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
  Rng scratch(cfg.seed);
  LoadedCheckpoint out{Model::create(cfg, std::move(vocab), scratch), {}};
  auto& st = out.state;
  st.epoch = header.at("epoch").get<std::size_t>();
  st.step = header.at("step").get<std::size_t>();
  st.total_steps = header.at("total_steps").get<std::size_t>();
  st.rng_state = header.at("rng_state").get<std::string>();
  st.best_em = header.at("best_em").get<double>();
  st.best_f1 = header.at("best_f1").get<double>();
  st.best_epoch = header.at("best_epoch").get<std::size_t>();

  std::unordered_map<std::string, Tensor> by_name;
  for (const auto& p : out.model.all_params()) by_name.emplace(p.name, p.tensor);
  const auto count = binio::get_uint<std::uint32_t>(is, "parameter count");
  if (count != by_name.size()) {
    throw std::runtime_error(path.string() + ": holds " + std::to_string(count) + " parameters, model has " +
                             std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, block] = get_block(is);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error(path.string() + ": unexpected parameter \"" + name + "\"");
    if (it->second.shape() != block.shape) {
      throw std::runtime_error(path.string() + ": parameter \"" + name + "\" has shape " + to_string(block.shape) +
                               ", expected " + to_string(it->second.shape()));
    }
    auto dst = it->second.mutable_values();
    std::copy(block.values.begin(), block.values.end(), dst.begin());
  }
  auto [usage_name, usage] = get_block(is);
  if (usage_name != "codebook.usage" || usage.values.size() != out.model.codebook.size()) {
    throw std::runtime_error(path.string() + ": missing codebook usage block");
  }
  out.model.codebook.usage = std::move(usage.values);

  if (header.at("has_optimizer").get<bool>()) {
    const auto trainable = out.model.trainable();
    for (const auto& p : trainable) {
      AdamState s;
      s.step = binio::get_uint<std::uint64_t>(is, "optimizer step");
      auto [mn, m] = get_block(is);
      auto [vn, v] = get_block(is);
      const bool sized = m.values.size() == p.tensor.numel() && v.values.size() == p.tensor.numel();
      const bool fresh = m.values.empty() && v.values.empty();
      if (mn != "adam.m." + p.name || vn != "adam.v." + p.name || !(sized || fresh)) {
        throw std::runtime_error(path.string() + ": optimizer state for \"" + p.name + "\" is malformed");
      }
      s.m = std::move(m.values);
      s.v = std::move(v.values);
      st.adam.push_back(std::move(s));
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path.string() + ": trailing bytes");
  return out;
}

}  // namespace mbc
