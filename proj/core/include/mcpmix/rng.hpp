#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace mcpmix {

/// Identifies a reproducible random sequence. The same (seed, stream_id)
/// yields the same draws on every platform.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

/// n child streams with distinct stream ids, deterministic in (parent, n).
std::vector<RngStream> rng_split(const RngStream& parent, std::size_t n);

/// The i-th child of `parent`; equal to rng_split(parent, i + 1)[i].
RngStream rng_child(const RngStream& parent, std::uint64_t index);

/// Draws from an RngStream.
///
/// Engine: std::mt19937_64 keyed by splitmix64(seed, stream_id). Conversion
/// to doubles is done here instead of through <random> distributions,
/// whose output is implementation-defined. Bump kRngVersion whenever any of
/// this changes.
class Rng {
 public:
  static constexpr int kRngVersion = 1;

  explicit Rng(const RngStream& stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, one value per call).
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mcpmix
