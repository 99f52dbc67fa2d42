#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace oadlab {

// splitmix64: the standard 64-bit mixing finalizer, used both to derive
// stream seeds from (master seed, tags...) and as the core generator.
constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ — small, fast, and fully specified here so that every
// platform reproduces identical streams (library distributions are not
// portable across standard library implementations).
class Stream {
 public:
  explicit Stream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64_next(sm);
    have_spare_normal_ = false;
    spare_normal_ = 0.0;
  }

  // Derive a child stream from a master seed and an ordered tag list,
  // e.g. {arm, n, replicate}. Chained splitmix64 mixing keeps distinct
  // tag tuples on statistically independent streams.
  static Stream derive(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t state = master;
    (void)splitmix64_next(state);
    for (std::uint64_t t : tags) {
      state ^= splitmix64_next(state) ^ (t + 0x9e3779b97f4a7c15ULL);
      (void)splitmix64_next(state);
    }
    return Stream(splitmix64_next(state));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on (0,1): 53-bit mantissa, never exactly 0 or 1.
  double u01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (deterministic, portable).
  double normal() {
    if (have_spare_normal_) {
      have_spare_normal_ = false;
      return spare_normal_;
    }
    double u1 = u01();
    double u2 = u01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_normal_ = r * std::sin(theta);
    have_spare_normal_ = true;
    return r * std::cos(theta);
  }

  // Gamma(shape, rate 1) via Marsaglia-Tsang, with the u^{1/shape} boost
  // for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = u01();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double vcand = 1.0 + c * x;
      if (vcand <= 0.0) continue;
      double v3 = vcand * vcand * vcand;
      double u = u01();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v3;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v3 + std::log(v3))) return d * v3;
    }
  }

  // Student-t with v degrees of freedom: Z / sqrt(ChiSq_v / v).
  double student_t(double v) {
    double z = normal();
    double chi2 = 2.0 * gamma(0.5 * v);
    return z / std::sqrt(chi2 / v);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  bool have_spare_normal_;
  double spare_normal_;
};

}  // namespace oadlab
