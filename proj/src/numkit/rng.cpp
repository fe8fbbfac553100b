#include "vmoe/numkit/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vmoe::numkit {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

RngStream RngStream::fork(std::uint64_t purpose) const {
  return RngStream(mix64(seed_ ^ mix64(stream_ + kGolden)), purpose);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t key = mix64(seed_ + kGolden * (stream_ + 1));
  return mix64(key + kGolden * ++counter_);
}

double RngStream::uniform() {
  // 53 random bits mapped to (0, 1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

Tensor sample_gaussian(RngStream& rng, const Shape& shape, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw std::invalid_argument("sample_gaussian: negative std");
  Tensor out(shape);
  for (auto& v : out.data()) v = mean + stddev * rng.normal();
  return out;
}

Tensor sample_uniform(RngStream& rng, const Shape& shape, double lo, double hi) {
  Tensor out(shape);
  for (auto& v : out.data()) v = lo + (hi - lo) * rng.uniform();
  return out;
}

}  // namespace vmoe::numkit
