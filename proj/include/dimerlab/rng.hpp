#pragma once

#include <cstdint>
#include <limits>

namespace dimerlab {

// Counter-based generator: output i of stream `key` is a fixed mix of key + i * gamma.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0) : key_(mix(seed ^ mix(stream + kGamma))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * kGamma); }

  // Independent child stream.
  CounterRng split(std::uint64_t i) const {
    CounterRng r;
    r.key_ = mix(key_ ^ mix(i * 0xd1b54a32d192ed03ull + 1));
    return r;
  }

  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    unsigned __int128 p = static_cast<unsigned __int128>((*this)()) * n;
    auto lo = static_cast<std::uint64_t>(p);
    if (lo < n) {
      const std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        p = static_cast<unsigned __int128>((*this)()) * n;
        lo = static_cast<std::uint64_t>(p);
      }
    }
    return static_cast<std::uint64_t>(p >> 64);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace dimerlab
