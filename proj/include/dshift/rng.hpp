#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace dshift {

/// Derives a stage-specific sub-seed from a parent seed and a tag.
/// FNV-1a over the tag mixed through splitmix64; stable across platforms.
uint64_t derive_seed(uint64_t seed, std::string_view tag);

/// mt19937_64 with hand-rolled draw functions. The standard distribution
/// classes are implementation-defined, so every stream here is produced by
/// explicit arithmetic to keep seeded results bit-reproducible.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Standard normal via Box-Muller; caches the paired draw.
    double normal();

    /// Uniform integer in [0, n) via 128-bit multiply-shift.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(eng_()) * n) >> 64);
    }

    /// Fisher-Yates shuffle using below(); independent of std::shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dshift
