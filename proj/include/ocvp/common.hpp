#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ocvp {

// Error taxonomy shared by all modules. The CLI maps ParamError/ConfigError to
// exit code 2 and everything else to 1.
struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularTransformError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 step; used to derive independent sub-seeds from a master seed so
// that parallel and serial runs agree bit-exactly.
inline std::uint64_t mix_seed(std::uint64_t state) {
  std::uint64_t z = state + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x51ed2701ull));
}

// Uniform draws built directly on the mt19937_64 stream. The standard
// distributions are implementation-defined, which would make generated data
// differ across standard libraries; these helpers pin the exact bits used.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw ParamError("uniform_below: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % n;
  }
}

// Uniform in [0,1) with 53 bits of precision.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

}  // namespace ocvp
