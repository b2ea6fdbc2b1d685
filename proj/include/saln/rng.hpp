#ifndef SALN_RNG_HPP
#define SALN_RNG_HPP

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace saln {

// splitmix64 step; used to derive independent child seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double normal(double mean = 0.0, double sd = 1.0) {
    std::normal_distribution<double> d(mean, sd);
    return d(gen_);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }

  std::vector<double> normal_vec(std::size_t n, double sd = 1.0) {
    std::vector<double> out(n);
    for (auto& x : out) x = normal(0.0, sd);
    return out;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }

  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace saln

#endif
