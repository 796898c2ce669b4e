#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace stcl {

// Counter-based generator: every draw is a pure function of (key, counter),
// so independent streams can be derived from a seed without shared state.
inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return mix64(a ^ (0x9e3779b97f4a7c15ULL + b + (a << 6) + (a >> 2)));
}

class RngStream {
 public:
  RngStream() = default;
  RngStream(uint64_t seed, uint64_t stream_id)
      : key_(hash_combine(mix64(seed), stream_id)) {}

  // Derive a child stream; does not advance this stream's counter.
  RngStream split(uint64_t stream_id) const {
    return RngStream::from_key(hash_combine(key_, stream_id));
  }

  uint64_t next_u64() { return mix64(key_ ^ (0x9e3779b97f4a7c15ULL * ++ctr_)); }

  // Uniform in (0,1).
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  double next_normal() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  size_t next_index(size_t n) {
    if (n == 0) throw std::invalid_argument("next_index: n must be positive");
    return static_cast<size_t>(next_u64() % n);
  }

  // Poisson by sequential inversion; deterministic, adequate for small rates.
  int next_poisson(double lambda) {
    if (lambda < 0) throw std::invalid_argument("next_poisson: negative rate");
    if (lambda == 0) return 0;
    double u = next_uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    int k = 0;
    while (u > cdf && k < 10000) {
      ++k;
      p *= lambda / k;
      cdf += p;
    }
    return k;
  }

  uint64_t key() const { return key_; }

 private:
  static RngStream from_key(uint64_t key) {
    RngStream s;
    s.key_ = key;
    return s;
  }
  uint64_t key_ = 0x853c49e6748fea9bULL;
  uint64_t ctr_ = 0;
};

}  // namespace stcl
