#pragma once

#include <cstdint>

namespace grc {

/// SplitMix64 output function.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream key from a parent key and a stream index.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t stream) {
    return mix64(key ^ mix64(stream + 0x632BE59BD9B4E019ULL));
}

/// Counter-based generator: the i-th draw is mix64(key + (i + 1) * golden_gamma),
/// so any draw can be reproduced from (key, counter) alone on every platform.
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
        : key_(key), counter_(counter) {}

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(key_ + counter_ * kGamma);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound). Plain modulo; bias is below 2^-40 for the bounds used here.
    std::uint64_t below(std::uint64_t bound) { return next_u64() % bound; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per two draws).
    double normal();

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace grc
