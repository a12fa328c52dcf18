#include "mbc/metrics.hpp"

#include <map>
#include <stdexcept>

#include "mbc/text.hpp"

namespace mbc::metrics {

std::string normalize_answer(std::string_view input) {
  std::u32string kept;
  for (char32_t c : text::decode_utf8(input)) {
    if (!text::is_punctuation(c)) kept.push_back(text::to_lower(c));
  }
  std::string out;
  for (const auto& w : text::split_whitespace(text::encode_utf8(kept))) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

bool exact_match(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold);
}

namespace {

void check_lists(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("metrics: " + std::to_string(a) + " predictions for " + std::to_string(b) + " golds");
  }
  if (a == 0) throw std::invalid_argument("metrics: empty prediction list");
}

}  // namespace

double exact_match(std::span<const std::string> preds, std::span<const std::string> golds) {
  check_lists(preds.size(), golds.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += exact_match(preds[i], golds[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double token_f1(std::string_view pred, std::string_view gold) {
  const auto p = text::split_whitespace(normalize_answer(pred));
  const auto g = text::split_whitespace(normalize_answer(gold));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, long> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

double mean_token_f1(std::span<const std::string> preds, std::span<const std::string> golds) {
  check_lists(preds.size(), golds.size());
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += token_f1(preds[i], golds[i]);
  return total / static_cast<double>(preds.size());
}

}  // namespace mbc::metrics
