#pragma once

// Little-endian stream helpers shared by the bank and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbc::binio {

template <typename U>
void put_uint(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, sizeof(U));
}

template <typename U>
U get_uint(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error(std::string("truncated file while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double x) { put_uint<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(is, what));
}

inline void put_f64s(std::ostream& os, std::span<const double> xs) {
  for (double x : xs) put_f64(os, x);
}
inline std::vector<double> get_f64s(std::istream& is, std::size_t n, const char* what) {
  std::vector<double> out(n);
  for (double& x : out) x = get_f64(is, what);
  return out;
}

inline void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }
inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error(std::string("truncated file while reading ") + what);
  }
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw std::runtime_error(path + ": bad magic, expected \"" + magic + "\"");
  }
}

}  // namespace mbc::binio
