// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_RANDOM_HPP_
#define REBALANCE_RANDOM_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace rebalance {

// Deterministic RNG wrapper. All sampling is implemented on top of the raw
// 64-bit stream so results do not depend on libstdc++ distribution details.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1).
  double uniform() {
    return double(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return int64_t(uniform() * double(n)) % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  // Normal(0, std) truncated to two standard deviations, by rejection.
  double truncated_normal(double stddev) {
    double x = normal();
    while (std::abs(x) > 2.0) x = normal();
    return x * stddev;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rebalance

#endif  // REBALANCE_RANDOM_HPP_
