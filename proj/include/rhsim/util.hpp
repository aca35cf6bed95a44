#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rhsim {

using Tick = std::uint64_t;

// Deterministic RNG. All randomness in a simulation instance flows through
// one of these so equal seeds give bit-identical runs. Distribution helpers
// are hand-rolled: the std:: distributions are not portable across library
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, n)
  std::uint64_t uniform(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform: n == 0");
    return next_u64() % n;
  }

  // true with probability p
  bool chance(double p) {
    if (p >= 1.0) return true;
    if (p <= 0.0) return false;
    // 53-bit mantissa draw
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return u < p;
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint32_t parity64(std::uint64_t v) {
  return static_cast<std::uint32_t>(__builtin_parityll(v));
}

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v, int width = 16) {
  static const char* digits = "0123456789abcdef";
  std::string out(width, '0');
  for (int i = width - 1; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string bytes_to_hex(const std::vector<std::uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

inline std::vector<std::uint8_t> hex_to_bytes(const std::string& hex) {
  if (hex.size() % 2 != 0) throw std::invalid_argument("hex string has odd length");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument(std::string("bad hex digit '") + c + "'");
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
  return out;
}

struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct PermissionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OutOfMemoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rhsim
