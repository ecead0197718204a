#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace zeroparse {

// Deterministic random source. All distributions are hand-rolled on top of
// the raw mt19937_64 output stream: the engine itself is fully specified by
// the standard, but std::uniform_real_distribution and friends are not, and
// we need bit-identical draws across compilers for reproducible runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). Rejection-sampled, unbiased. n must be > 0.
  std::int64_t uniform_int(std::int64_t n);

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal();
  double normal(double mean, double stddev);

  bool bernoulli(double p);

  // Independent child stream. Forking with the same id always yields the
  // same child, so per-purpose streams (init, noise, batching, ...) stay
  // decoupled no matter how many draws each one consumes.
  Rng fork(std::uint64_t stream_id) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates; std::shuffle's draw pattern is implementation-defined.
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// Fixed stream ids for Rng::fork. Keeping them in one place avoids two
// subsystems silently sharing a stream.
namespace rng_stream {
inline constexpr std::uint64_t kCorpus = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kBatch = 5;
inline constexpr std::uint64_t kMt = 6;
inline constexpr std::uint64_t kTau = 7;
inline constexpr std::uint64_t kAnalysis = 8;
}  // namespace rng_stream

}  // namespace zeroparse
