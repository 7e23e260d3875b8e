#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace genqc {

/// Seeded random stream. Streams derived via child() are statistically
/// independent and reproducible, so work can be fanned out across records,
/// batch samples or eval tasks without losing determinism.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(mix(seed)) {}

    /// Derived stream for (this seed, stream index).
    static Rng child(uint64_t seed, uint64_t stream) {
        return Rng(mix(seed + 0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

    double uniform() { return unif_(engine_); }

    double normal() { return norm_(engine_); }

    /// Uniform integer in [0, n).
    uint64_t integer(uint64_t n) {
        return std::uniform_int_distribution<uint64_t>(0, n - 1)(engine_);
    }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t range(int64_t lo, int64_t hi) {
        return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[integer(i)]);
        }
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    // splitmix64 finalizer; decorrelates nearby seeds before feeding mt19937.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace genqc
