#include "mcpmix/rng.hpp"

#include <cmath>
#include <numbers>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream rng_child(const RngStream& parent, std::uint64_t index) {
  // splitmix64 is a bijection, so distinct indices give distinct ids.
  return RngStream{parent.seed, splitmix64(parent.stream_id ^ splitmix64(index + 1))};
}

std::vector<RngStream> rng_split(const RngStream& parent, std::size_t n) {
  if (n == 0) throw DomainError("rng_split: n must be at least 1");
  std::vector<RngStream> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng_child(parent, i));
  return out;
}

Rng::Rng(const RngStream& stream)
    : engine_(splitmix64(splitmix64(stream.seed) ^ (stream.stream_id * kGolden + 1))) {}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::int64_t Rng::between(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw DomainError("Rng::between: empty range");
  return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

}  // namespace mcpmix
