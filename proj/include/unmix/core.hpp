// Shared aliases and small utilities used across the library.
#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "unmix/error.hpp"

namespace unmix {

inline constexpr const char* kToolName = "unmix";
inline constexpr const char* kToolVersion = "0.1.0";

// Training arithmetic is 64-bit throughout; 32-bit floats appear only in
// the cube file payload.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

// Derives an independent sub-stream seed from (seed, salt). splitmix64
// finalizer, so nearby salts give unrelated streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Shortest decimal representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw IoError("cannot parse number: '" + std::string(text) + "'");
  return v;
}

inline long long parse_int(std::string_view text) {
  long long v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw IoError("cannot parse integer: '" + std::string(text) + "'");
  return v;
}

inline void require_finite(const Matrix& m, const char* context) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite values in ") + context);
}

}  // namespace unmix
