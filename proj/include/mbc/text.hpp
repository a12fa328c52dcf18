#pragma once

#include <string>
#include <string_view>
#include <vector>

// UTF-8 helpers shared by the tokenizer and the answer metrics.
namespace mbc::text {

// Invalid sequences decode to U+FFFD one byte at a time.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);

// Unicode general category P* (connector, dash, open/close, initial/final,
// other punctuation). Symbols such as '$' or '+' are not punctuation.
bool is_punctuation(char32_t c);
bool is_space(char32_t c);
// Simple case folding for ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic.
char32_t to_lower(char32_t c);

std::string lowercase(std::string_view s);
// Splits on whitespace runs; no empty tokens.
std::vector<std::string> split_whitespace(std::string_view s);

}  // namespace mbc::text
