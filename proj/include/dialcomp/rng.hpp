#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace dialcomp {

// splitmix64 generator. Hand-rolled so that every stream is bit-stable
// across compilers and standard libraries; std:: distributions are not.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform double in [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// Named fan-out of a root seed: adding a new consumer never perturbs the
// streams of existing ones.
inline uint64_t derive_seed(uint64_t root, std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  Rng mixer(root ^ h);
  return mixer.next_u64();
}

inline uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t index) {
  Rng mixer(derive_seed(root, name) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
  return mixer.next_u64();
}

}  // namespace dialcomp
