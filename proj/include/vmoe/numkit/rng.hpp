#pragma once

#include <cstdint>

#include "vmoe/numkit/tensor.hpp"

namespace vmoe::numkit {

// Counter-based generator: the n-th draw is a pure function of (seed, stream, n),
// so sample sequences do not depend on the standard library's distributions.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  // Independent stream for a named purpose (noise, init, data, ...).
  RngStream fork(std::uint64_t purpose) const;

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

Tensor sample_gaussian(RngStream& rng, const Shape& shape, double mean, double stddev);
Tensor sample_uniform(RngStream& rng, const Shape& shape, double lo, double hi);

}  // namespace vmoe::numkit
