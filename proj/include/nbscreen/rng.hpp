#pragma once

#include <cstdint>

namespace nbscreen {

// Counter-based pseudo-random stream (Philox 4x32-10).
//
// A stream is identified by a 64-bit seed and a 64-bit stream id. The seed
// forms the Philox key; the stream id occupies the upper counter words and
// the running block index the lower ones, so distinct (seed, stream) pairs
// produce statistically independent sequences. substream(i) derives a child
// stream by mixing the parent id with i (SplitMix64 finalizer), giving a
// collision-resistant tree of streams for parallel work. Layout details in
// docs/numerics.md.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  // Child stream for index i; disjoint from this stream and from siblings.
  RngStream substream(std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform on (0, 1), 53-bit resolution, never returns an endpoint.
  double uniform01();

  // Uniform integer on [lo, hi] inclusive, unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  bool bernoulli(double p);

  // Box-Muller; the second variate of each pair is cached.
  double normal(double mean, double sd);

  double lognormal(double log_mean, double log_sd);

  // Marsaglia-Tsang; shape < 1 is boosted through gamma(shape + 1).
  double gamma(double shape, double scale);

  // Inversion-by-multiplication below rate 10, Hormann's PTRS above.
  std::int64_t poisson(double rate);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t block_ = 0;
  std::uint32_t out_[4] = {0, 0, 0, 0};
  int out_pos_ = 4;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace nbscreen
