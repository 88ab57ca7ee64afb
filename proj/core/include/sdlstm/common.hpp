#pragma once

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sdlstm {

using index = std::int64_t;

// Thrown when operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Thrown for invalid parameter values (rates, dimensions, indices).
class ValueError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Thrown for unreadable/unwritable files and malformed external data.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Thrown for malformed run configuration (bad keys, inconsistent settings).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void check_value(bool ok, const std::string& msg) {
  if (!ok) throw ValueError(msg);
}

enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

// Shortest representation that round-trips exactly; identical values always
// produce identical text, which the determinism contract relies on.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// splitmix64 finalizer; used to derive independent sub-seeds from a run seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed ^ mix64(stream));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix64(derive_seed(seed, a) ^ mix64(b + 0x51ed270b8a5ec473ull));
}

// Deterministic generator. Distribution helpers are hand-rolled so that
// sampled values are identical across standard library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool next_keep(double drop_prob) { return next_unit() >= drop_prob; }

private:
  std::mt19937_64 gen_;
};

}  // namespace sdlstm
