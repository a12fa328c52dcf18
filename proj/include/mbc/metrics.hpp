#pragma once

#include <span>
#include <string>
#include <string_view>

namespace mbc::metrics {

// Lowercase, drop punctuation, drop standalone a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

bool exact_match(std::string_view pred, std::string_view gold);
// Fraction of normalized-equal pairs. Throws on length mismatch or empty lists.
double exact_match(std::span<const std::string> preds, std::span<const std::string> golds);

// Multiset token overlap F1 on normalized strings; both empty → 1, one empty → 0.
double token_f1(std::string_view pred, std::string_view gold);
double mean_token_f1(std::span<const std::string> preds, std::span<const std::string> golds);

}  // namespace mbc::metrics
