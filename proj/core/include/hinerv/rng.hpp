#pragma once

#include <cstdint>
#include <vector>

namespace hinerv {

// xoshiro256** seeded through splitmix64. Distributions are implemented by
// hand so a given seed yields the same stream on every platform; std::
// distributions are implementation-defined and would break reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Independent stream derived from (seed, salt).
  static Rng derive(uint64_t seed, uint64_t salt);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  uint64_t uniform_int(uint64_t n);      // [0, n), unbiased
  bool bernoulli(double p);
  double normal();
  double truncated_normal(double stddev, double cutoff_sigmas = 2.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = (size_t)uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hinerv
