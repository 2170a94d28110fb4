#pragma once

#include <cstdint>
#include <string_view>

namespace declutr {

/// Seedable deterministic generator (xoshiro256** seeded via splitmix64).
///
/// Every stochastic component takes one of these explicitly, so a run is a
/// pure function of its seeds. Named substreams are derived by hashing
/// (seed, label, index); in particular each (document, epoch) pair gets its
/// own stream, which makes batch assembly order-independent.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  /// Unbiased uniform integer in [0, n). n must be > 0.
  uint64_t uniform_below(uint64_t n);

  /// Uniform integer in [lo, hi], both ends inclusive. Requires lo <= hi.
  int64_t uniform_int(int64_t lo, int64_t hi);

  bool bernoulli(double p);

  /// Standard normal via Box-Muller (second variate cached).
  double normal();

  /// Gamma(shape, 1) via Marsaglia-Tsang; boosted for shape < 1.
  double gamma(double shape);

  /// Beta(a, b) as the gamma ratio g_a / (g_a + g_b).
  double beta(double a, double b);

  /// Substream keyed on (seed, label, index); independent of draw order on
  /// the parent.
  static Rng stream(uint64_t seed, std::string_view label, uint64_t index);

  /// Per-document substream keyed on (seed, doc id, epoch).
  static Rng for_document(uint64_t seed, std::string_view doc_id, uint64_t epoch);

 private:
  uint64_t s_[4];
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

/// FNV-1a 64-bit hash, used for stream derivation and vocab fingerprints.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 14695981039346656037ull);

}  // namespace declutr
