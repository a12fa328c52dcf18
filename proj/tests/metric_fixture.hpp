#pragma once

#include <array>

namespace mbc::test {

struct MetricCase {
  const char* pred;
  const char* gold;
  bool em;
  double f1;
};

// Worked by hand from the normalization rules: lowercase, drop punctuation,
// drop standalone a/an/the, collapse whitespace; F1 over token multisets.
inline const std::array<MetricCase, 20> kMetricCases{{
    {"The Cat!", "cat", true, 1.0},
    {"A  dog ran.", "dog ran", true, 1.0},
    {"The Paris", "paris", true, 1.0},
    {"paris france", "paris", false, 2.0 / 3.0},  // P = 1/2, R = 1
    {"", "", true, 1.0},
    {"", "paris", false, 0.0},
    {"paris", "", false, 0.0},
    {"the", "", true, 1.0},
    {"a an the", "...", true, 1.0},
    {"london", "paris", false, 0.0},
    {"New-York", "newyork", true, 1.0},
    {"  spaced \t  out  ", "spaced out", true, 1.0},
    {"theater", "the ater", false, 0.0},  // only standalone articles go
    {"cat cat dog", "cat dog dog", false, 2.0 / 3.0},  // overlap 2 of 3 each way
    {"cat cat cat", "cat", false, 0.5},                // P = 1/3, R = 1
    {"U.S.A.", "usa", true, 1.0},
    {"rock & roll", "Rock roll", true, 1.0},
    {"$100", "100", false, 0.0},  // currency signs are symbols, not punctuation
    {"red, green and blue", "blue green red", false, 6.0 / 7.0},  // P = 3/4, R = 1
    {"An apple a day", "apple\nday", true, 1.0},
}};

}  // namespace mbc::test
