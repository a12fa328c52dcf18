#include "mbc/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mbc/ops.hpp"

namespace mbc::vq {

Codebook init_codebook(std::size_t num_codes, std::size_t dim, Rng& rng, double decay, double threshold) {
  if (num_codes < 2) throw std::invalid_argument("codebook: need at least 2 codes");
  if (dim < 1) throw std::invalid_argument("codebook: dimension must be >= 1");
  const double bound = 1.0 / static_cast<double>(num_codes);
  std::vector<double> e(num_codes * dim);
  for (double& x : e) x = rng.uniform(-bound, bound);
  return {Tensor({num_codes, dim}, std::move(e), true), std::vector<double>(num_codes, 0.0), decay, threshold};
}

Codebook init_codebook(std::size_t num_codes, std::size_t dim, std::uint64_t seed, double decay,
                       double threshold) {
  Rng rng(seed);
  return init_codebook(num_codes, dim, rng, decay, threshold);
}

Codebook init_codebook_clustered(std::size_t num_codes, std::size_t dim, Rng& rng, double offset, double decay,
                                 double threshold) {
  Codebook cb = init_codebook(num_codes, dim, rng, decay, threshold);
  for (double& x : cb.embeddings.mutable_values()) x += offset;
  return cb;
}

std::vector<std::size_t> nearest_codes(const Tensor& phi, const Codebook& cb) {
  if (phi.cols() != cb.dim()) {
    throw std::invalid_argument("nearest_codes: context width " + std::to_string(phi.cols()) +
                                " != codebook width " + std::to_string(cb.dim()));
  }
  const std::size_t d = cb.dim();
  const double* e = cb.embeddings.values().data();
  std::vector<std::size_t> codes(phi.rows());
  for (std::size_t t = 0; t < phi.rows(); ++t) {
    const double* x = phi.values().data() + t * d;
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t j = 0; j < cb.size(); ++j) {
      const double* ej = e + j * d;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[k] - ej[k];
        dist += diff * diff;
      }
      if (j == 0 || dist < best_dist) {
        best = j;
        best_dist = dist;
      }
    }
    codes[t] = best;
  }
  return codes;
}

QuantizationResult quantize_ste(const Tensor& phi, const Codebook& cb) {
  auto codes = nearest_codes(phi, cb);
  if (auto* frozen = ops::FrozenBranches::active()) codes = frozen->pass_choice(std::move(codes));
  Tensor hard = ops::embedding(cb.embeddings, codes);
  // sg[hard] + (φ − sg[φ]) equals φ + sg[hard − φ] algebraically, but its
  // forward value is bit-identical to hard because φ − φ is exactly zero.
  Tensor ste = ops::add(ops::stop_gradient(hard), ops::sub(phi, ops::stop_gradient(phi)));
  return {std::move(codes), std::move(hard), std::move(ste)};
}

Tensor vq_loss(const Tensor& phi, const Tensor& hard, double beta_commit) {
  if (phi.shape() != hard.shape()) {
    throw std::invalid_argument("vq_loss: shape mismatch " + to_string(phi.shape()) + " vs " +
                                to_string(hard.shape()));
  }
  if (!(beta_commit > 0.0)) throw std::invalid_argument("vq_loss: commitment cost must be positive");
  Tensor codebook_term = ops::sum_squares(ops::sub(ops::stop_gradient(phi), hard));
  Tensor commit_term = ops::sum_squares(ops::sub(phi, ops::stop_gradient(hard)));
  return ops::add(codebook_term, ops::scale(commit_term, beta_commit));
}

void update_usage(Codebook& cb, std::span<const std::size_t> codes) {
  std::vector<double> counts(cb.size(), 0.0);
  for (std::size_t c : codes) {
    if (c >= cb.size()) throw std::out_of_range("update_usage: code index out of range");
    counts[c] += 1.0;
  }
  for (std::size_t j = 0; j < cb.size(); ++j) {
    cb.usage[j] = cb.decay * cb.usage[j] + (1.0 - cb.decay) * counts[j];
  }
}

ResetReport reset_dead_codes(Codebook& cb, const Tensor& batch_rows, Rng& rng) {
  ResetReport report;
  std::vector<std::size_t> dead;
  for (std::size_t j = 0; j < cb.size(); ++j)
    if (cb.usage[j] < cb.threshold) dead.push_back(j);
  report.dead_codes = dead.size();
  if (dead.empty()) return report;
  if (batch_rows.cols() != cb.dim()) throw std::invalid_argument("reset_dead_codes: row width mismatch");

  // Distinct candidate rows, first occurrence kept.
  const std::size_t d = cb.dim();
  std::vector<std::size_t> distinct;
  for (std::size_t r = 0; r < batch_rows.rows(); ++r) {
    auto row = batch_rows.row(r);
    bool dup = false;
    for (std::size_t prev : distinct) {
      if (std::equal(row.begin(), row.end(), batch_rows.row(prev).begin())) {
        dup = true;
        break;
      }
    }
    if (!dup) distinct.push_back(r);
  }
  if (distinct.empty()) {
    report.warning = "dead codes present but the batch holds no rows to reset from";
    return report;
  }

  const std::size_t n = std::min(dead.size(), distinct.size());
  const auto picks = rng.sample_without_replacement(distinct.size(), n);
  report.mean_usage = std::accumulate(cb.usage.begin(), cb.usage.end(), 0.0) / static_cast<double>(cb.size());
  auto e = cb.embeddings.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = dead[i];
    auto src = batch_rows.row(distinct[picks[i]]);
    std::copy(src.begin(), src.end(), e.begin() + static_cast<std::ptrdiff_t>(j * d));
    cb.usage[j] = report.mean_usage;
    report.reset_codes.push_back(j);
  }
  return report;
}

double codebook_perplexity(std::span<const double> usage) {
  double total = 0.0;
  for (double u : usage) {
    if (!(u >= 0.0) || !std::isfinite(u)) throw std::invalid_argument("perplexity: usage must be finite and >= 0");
    total += u;
  }
  if (!(total > 0.0)) throw std::domain_error("perplexity: undefined for all-zero usage");
  double entropy = 0.0;
  for (double u : usage) {
    if (u <= 0.0) continue;
    const double p = u / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

std::size_t count_dead_codes(const Codebook& cb) {
  return static_cast<std::size_t>(
      std::count_if(cb.usage.begin(), cb.usage.end(), [&](double u) { return u < cb.threshold; }));
}

}  // namespace mbc::vq
