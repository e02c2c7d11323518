#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nestlm {

// Deterministic RNG. The engine is std::mt19937_64 (exactly specified by the
// standard); all draws go through the helpers below instead of std::*_distribution,
// whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // uniform integer in [0, n), n > 0
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(eng_()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  // derived generator for an independent worker/stream
  Rng fork(uint64_t stream) {
    uint64_t z = next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 eng_;
};

struct SampleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  int position;
  ParseError(int pos, const std::string& what)
      : std::runtime_error("parse error at token " + std::to_string(pos) + ": " + what),
        position(pos) {}
};

struct StructureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nestlm
