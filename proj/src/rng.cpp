#include "nbscreen/rng.hpp"

#include <cmath>
#include <stdexcept>

#include "nbscreen/special.hpp"

namespace nbscreen {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t ctr[4], std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  const std::uint32_t c1 = ctr[1];
  const std::uint32_t c3 = ctr[3];
  ctr[0] = hi1 ^ c1 ^ k0;
  ctr[1] = lo1;
  ctr[2] = hi0 ^ c3 ^ k1;
  ctr[3] = lo0;
}

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {}

RngStream RngStream::substream(std::uint64_t index) const {
  const std::uint64_t child =
      mix64(stream_ + 0x9E3779B97F4A7C15ull * (index + 1));
  return RngStream(seed_, child);
}

void RngStream::refill() {
  std::uint32_t ctr[4] = {
      static_cast<std::uint32_t>(block_),
      static_cast<std::uint32_t>(block_ >> 32),
      static_cast<std::uint32_t>(stream_),
      static_cast<std::uint32_t>(stream_ >> 32),
  };
  std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
  for (int round = 0; round < 10; ++round) {
    philox_round(ctr, k0, k1);
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  out_[0] = ctr[0];
  out_[1] = ctr[1];
  out_[2] = ctr[2];
  out_[3] = ctr[3];
  out_pos_ = 0;
  ++block_;
}

std::uint64_t RngStream::next_u64() {
  if (out_pos_ >= 4) {
    refill();
  }
  const std::uint64_t lo = out_[out_pos_];
  const std::uint64_t hi = out_[out_pos_ + 1];
  out_pos_ += 2;
  return (hi << 32) | lo;
}

double RngStream::uniform01() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) {
    throw std::invalid_argument("uniform_int: lo > hi");
  }
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) {  // full 64-bit range
    return static_cast<std::int64_t>(next_u64());
  }
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t u;
  do {
    u = next_u64();
  } while (u >= limit);
  return lo + static_cast<std::int64_t>(u % range);
}

bool RngStream::bernoulli(double p) { return uniform01() < p; }

double RngStream::normal(double mean, double sd) {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return mean + sd * cached_normal_;
  }
  const double u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(angle);
  has_cached_normal_ = true;
  return mean + sd * (r * std::cos(angle));
}

double RngStream::lognormal(double log_mean, double log_sd) {
  return std::exp(normal(log_mean, log_sd));
}

double RngStream::gamma(double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0)) {
    throw std::domain_error("gamma: shape and scale must be positive");
  }
  if (shape < 1.0) {
    const double boost = gamma(shape + 1.0, 1.0);
    return scale * boost * std::pow(uniform01(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal(0.0, 1.0);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01();
    if (u < 1.0 - 0.0331 * x * x * x * x) {
      return scale * d * v;
    }
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return scale * d * v;
    }
  }
}

std::int64_t RngStream::poisson(double rate) {
  if (rate < 0.0 || !std::isfinite(rate)) {
    throw std::domain_error("poisson: rate must be finite and non-negative");
  }
  if (rate == 0.0) {
    return 0;
  }
  if (rate < 10.0) {
    const double limit = std::exp(-rate);
    std::int64_t k = 0;
    double prod = uniform01();
    while (prod > limit) {
      ++k;
      prod *= uniform01();
    }
    return k;
  }
  // PTRS transformed rejection (Hormann 1993), exact for large rates.
  const double log_rate = std::log(rate);
  const double b = 0.931 + 2.53 * std::sqrt(rate);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    double u = uniform01() - 0.5;
    const double v = uniform01();
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= v_r) {
      return static_cast<std::int64_t>(k);
    }
    if (k < 0.0 || (us < 0.013 && v > us)) {
      continue;
    }
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        k * log_rate - rate - lgamma_fn(k + 1.0)) {
      return static_cast<std::int64_t>(k);
    }
  }
}

}  // namespace nbscreen
