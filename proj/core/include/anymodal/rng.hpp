#pragma once

// All randomness in the project flows from one root seed. Subsystems derive
// their own streams with seed_for(root, "label"), so adding a consumer never
// shifts anyone else's draws. Normal deviates use Box-Muller directly (no
// cached spare) so a stream's output depends only on its seed and call count.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace am {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t seed_for(uint64_t root, std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return splitmix64(root ^ h);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : g_(seed) {}

  // [0, 1)
  double uniform() {
    return static_cast<double>(g_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds. Modulo mapping; bias is irrelevant at our range sizes.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(g_() % span);
  }

  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  template <typename T>
  void fill_normal(T* p, int64_t n, double stddev) {
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(normal() * stddev);
  }

  template <typename T>
  void fill_uniform(T* p, int64_t n, double lo, double hi) {
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(uniform(lo, hi));
  }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& raw() { return g_; }

 private:
  std::mt19937_64 g_;
};

}  // namespace am
