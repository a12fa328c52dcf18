#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "mbc/adaptation.hpp"
#include "mbc/codebook.hpp"
#include "mbc/config.hpp"
#include "mbc/corpus.hpp"
#include "mbc/membank.hpp"
#include "mbc/metrics.hpp"
#include "mbc/model.hpp"

namespace py = pybind11;
using namespace mbc;

namespace {

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), d = n == 0 ? 0 : rows[0].size();
  std::vector<double> v;
  v.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("ragged matrix");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor({n, d}, std::move(v));
}

std::vector<std::vector<double>> to_rows(const Tensor& t) {
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i].assign(t.row(i).begin(), t.row(i).end());
  return out;
}

py::dict footprint_dict(const bank::FootprintReport& r) {
  py::dict d;
  d["bytes_codebook"] = r.bytes_codebook;
  d["bytes_indices"] = r.bytes_indices;
  d["bytes_compressed"] = r.bytes_compressed();
  d["bytes_continuous_equivalent"] = r.bytes_continuous_equivalent;
  d["compressed_mb"] = r.compressed_mb();
  d["continuous_mb"] = r.continuous_mb();
  d["reduction_percent"] = r.reduction_percent;
  return d;
}

py::list records(const std::vector<corpus::QARecord>& rs) {
  py::list out;
  for (const auto& r : rs) out.append(py::dict(py::arg("doc_id") = r.doc_id, py::arg("question") = r.question,
                                               py::arg("answer") = r.answer));
  return out;
}

// A loaded checkpoint plus one adaptation session over it.
class Session {
 public:
  Session(const std::filesystem::path& checkpoint, std::optional<std::size_t> group_size)
      : model_(std::make_unique<Model>(load_checkpoint(checkpoint).model)),
        session_(*model_, group_size.value_or(model_->config.adapt.group_size)) {}

  std::vector<std::uint32_t> memorize(const std::string& doc_id, const std::string& text) {
    return session_.memorize({doc_id, text});
  }
  std::string answer(const std::string& q) { return session_.answer(q); }
  std::string answer_without_memory(const std::string& q) const { return session_.answer_without_memory(q); }
  std::size_t size() const { return session_.bank().size(); }
  std::uint64_t global_hash() const { return model_->global_hash(); }
  py::dict footprint() const { return footprint_dict(bank::footprint(session_.bank())); }
  std::vector<double> usage() const { return model_->codebook.usage; }

 private:
  std::unique_ptr<Model> model_;
  adaptation::OnlineSession session_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Memory-bank compression core";

  m.def(
      "footprint",
      [](std::size_t docs, std::size_t num_codes, std::size_t dim, std::size_t tokens, std::size_t element_bytes,
         std::size_t index_bytes) {
        return footprint_dict(bank::footprint(docs, num_codes, dim, tokens, element_bytes, index_bytes));
      },
      py::arg("num_docs"), py::arg("num_codes") = 512, py::arg("dim") = 768, py::arg("tokens") = 12,
      py::arg("element_bytes") = 4, py::arg("index_bytes") = 8);
  m.def("parameter_delta", &mbc_parameter_delta, py::arg("num_codes"), py::arg("dim"), py::arg("lora_rank"),
        py::arg("n_lora"), py::arg("shared_down") = true);

  m.def("normalize_answer", &metrics::normalize_answer);
  m.def("exact_match", [](const std::vector<std::string>& p, const std::vector<std::string>& g) {
    return metrics::exact_match(p, g);
  });
  m.def("token_f1", [](const std::string& p, const std::string& g) { return metrics::token_f1(p, g); });
  m.def("mean_token_f1", [](const std::vector<std::string>& p, const std::vector<std::string>& g) {
    return metrics::mean_token_f1(p, g);
  });

  m.def(
      "nearest_codes",
      [](const std::vector<std::vector<double>>& phi, const std::vector<std::vector<double>>& codebook) {
        vq::Codebook cb{to_tensor(codebook), std::vector<double>(codebook.size(), 0.0)};
        return vq::nearest_codes(to_tensor(phi), cb);
      },
      py::arg("phi"), py::arg("codebook"));
  m.def("codebook_perplexity", [](const std::vector<double>& u) { return vq::codebook_perplexity(u); });
  m.def(
      "init_codebook",
      [](std::size_t n, std::size_t d, std::uint64_t seed) { return to_rows(vq::init_codebook(n, d, seed).embeddings); },
      py::arg("num_codes"), py::arg("dim"), py::arg("seed") = 0);

  m.def(
      "gen_synthetic",
      [](std::size_t n_docs, std::uint64_t seed, double val_fraction, double test_fraction) {
        corpus::SyntheticOptions o;
        o.n_docs = n_docs;
        o.seed = seed;
        o.val_fraction = val_fraction;
        o.test_fraction = test_fraction;
        const auto c = corpus::gen_synthetic(o);
        py::list docs;
        for (const auto& d : c.documents) docs.append(py::dict(py::arg("doc_id") = d.doc_id, py::arg("text") = d.text));
        return py::dict(py::arg("documents") = docs, py::arg("train") = records(c.train),
                        py::arg("val") = records(c.val), py::arg("test") = records(c.test));
      },
      py::arg("n_docs") = 256, py::arg("seed") = 0, py::arg("val_fraction") = 0.1, py::arg("test_fraction") = 0.1);

  m.def("default_config", [] { return config_to_json(RunConfig{}).dump(); });
  m.def("canonical_config", [](const std::string& json) {
    return canonical_config(config_from_json(nlohmann::json::parse(json)));
  });

  py::class_<Session>(m, "Session")
      .def(py::init<const std::filesystem::path&, std::optional<std::size_t>>(), py::arg("checkpoint"),
           py::arg("group_size") = py::none())
      .def("memorize", &Session::memorize, py::arg("doc_id"), py::arg("text"))
      .def("answer", &Session::answer)
      .def("answer_without_memory", &Session::answer_without_memory)
      .def("footprint", &Session::footprint)
      .def("usage", &Session::usage)
      .def_property_readonly("global_hash", &Session::global_hash)
      .def("__len__", &Session::size);
}
