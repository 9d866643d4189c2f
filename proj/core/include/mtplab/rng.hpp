#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace mtplab {

// Deterministic pseudo-random stream. std::mt19937_64 output is fully
// specified by the standard; the uniform and normal mappings below are our
// own so the stream replays bit-exactly on any platform. The algorithm name
// is recorded in checkpoint headers.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64/u53/box-muller";

  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range, rejection-sampled to avoid modulo bias.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % span);
  }

  // Standard normal via Box-Muller, one cached spare.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derived stream for independent shards; depends on the parent's position.
  Rng child(uint64_t tag) {
    return Rng(splitmix64(next_u64() ^ tag));
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mtplab
