#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rbcnet/errors.hpp"

namespace rbcnet {

// Counter-based random stream. Each draw hashes (seed, stream_id, counter)
// through three splitmix64 finalizer rounds, so a draw sequence is a pure
// function of the stream state and is identical across platforms. Substreams
// derived from distinct ids are independent for practical purposes.
class RngStream {
 public:
  RngStream() = default;
  RngStream(uint64_t seed, uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }
  uint64_t counter() const { return counter_; }

  // One draw advances the counter by exactly 1.
  uint64_t next_u64() { return mix3(seed_, stream_id_, counter_++); }

  // Uniform double in [0, 1) with 53 random bits. One draw.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw RangeError("uniform requires lo < hi");
    return lo + (hi - lo) * next_double();
  }

  std::vector<double> uniform_seq(double lo, double hi, size_t n) {
    if (!(lo < hi)) throw RangeError("uniform requires lo < hi");
    std::vector<double> out(n);
    for (auto& v : out) v = lo + (hi - lo) * next_double();
    return out;
  }

  // Box-Muller; two draws per value.
  double normal(double mean = 0.0, double sigma = 1.0) {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(2.0 * M_PI * u2);
  }

  // Index in [0, n). Modulo bias is below 2^-50 for any n used here.
  size_t uniform_index(size_t n) {
    if (n == 0) throw RangeError("uniform_index requires n > 0");
    return static_cast<size_t>(next_u64() % n);
  }

  bool bernoulli(double p) { return next_double() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream keyed off this one; counter starts at 0.
  RngStream substream(uint64_t tag) const {
    return RngStream(seed_, mix3(stream_id_, tag, 0x5b4c6f21d3e9a7ULL));
  }

  static uint64_t mix3(uint64_t a, uint64_t b, uint64_t c) {
    return splitmix(a + splitmix(b + splitmix(c)));
  }

 private:
  static uint64_t splitmix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t seed_ = 0;
  uint64_t stream_id_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace rbcnet
