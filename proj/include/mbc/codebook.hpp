#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbc/rng.hpp"
#include "mbc/tensor.hpp"

namespace mbc::vq {

// N_c×D code matrix plus the smoothed per-code usage that drives resetting.
struct Codebook {
  Tensor embeddings;          // N_c × D, trainable
  std::vector<double> usage;  // u_j >= 0
  double decay = 0.99;        // γ
  double threshold = 1e-4;    // ε

  std::size_t size() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
  std::span<const double> code(std::size_t j) const { return embeddings.row(j); }

  Codebook clone() const { return {embeddings.clone(), usage, decay, threshold}; }
};

// Entries i.i.d. U(−1/N_c, 1/N_c); usage all zero.
Codebook init_codebook(std::size_t num_codes, std::size_t dim, Rng& rng, double decay = 0.99,
                       double threshold = 1e-4);
Codebook init_codebook(std::size_t num_codes, std::size_t dim, std::uint64_t seed, double decay = 0.99,
                       double threshold = 1e-4);

// Low-diversity start: every code sits in a tiny ball around `offset`·1,
// far from typical encoder outputs, so nearest-code assignment collapses
// onto a single entry. Used to exercise the reset mechanism.
Codebook init_codebook_clustered(std::size_t num_codes, std::size_t dim, Rng& rng, double offset,
                                 double decay = 0.99, double threshold = 1e-4);

// Per-row argmin_j ||φ_t − E_j||², ties to the lowest index.
std::vector<std::size_t> nearest_codes(const Tensor& phi, const Codebook& cb);

struct QuantizationResult {
  std::vector<std::size_t> codes;
  Tensor hard;  // rows of E, differentiable w.r.t. E
  Tensor ste;   // forward == hard exactly; gradient passes to φ unchanged
};

QuantizationResult quantize_ste(const Tensor& phi, const Codebook& cb);

// ||sg[φ] − hard||² + β ||φ − sg[hard]||², summed over all entries.
Tensor vq_loss(const Tensor& phi, const Tensor& hard, double beta_commit);

// u_j ← γ u_j + (1−γ) n_j for every code, n_j counting assignments in `codes`.
void update_usage(Codebook& cb, std::span<const std::size_t> codes);

struct ResetReport {
  std::vector<std::size_t> reset_codes;  // indices overwritten, ascending
  double mean_usage = 0.0;               // ū assigned to each reset code
  std::size_t dead_codes = 0;            // |I_dead| before the reset
  std::string warning;                   // set when dead codes had nothing to draw from
};

// Overwrites up to min(|I_dead|, distinct rows) dead codes with distinct rows
// of `batch_rows`, sampled uniformly without replacement; each reset code's
// usage becomes the mean usage. Live codes are untouched. Not recorded.
ResetReport reset_dead_codes(Codebook& cb, const Tensor& batch_rows, Rng& rng);

// exp(−Σ p̄ log p̄) with p̄ = u / Σu. Throws on all-zero usage.
double codebook_perplexity(std::span<const double> usage);
inline double codebook_perplexity(const Codebook& cb) { return codebook_perplexity(cb.usage); }

std::size_t count_dead_codes(const Codebook& cb);

}  // namespace mbc::vq
