#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace sfr {

/// Counter-based generator: SplitMix64 evaluated at (key + i * gamma).
///
/// Output number i of a stream with key K is mix64(K + (i + 1) * 0x9E3779B97F4A7C15)
/// with mix64 the SplitMix64 finalizer, so any draw can be reproduced in
/// another language from (key, i) alone. Keys for sub-streams are obtained
/// with derive(), which hashes the parent key together with a stream id.
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Key of sub-stream `stream` below `key`.
    static constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t stream) noexcept {
        return mix64(key ^ mix64(stream + kGamma));
    }

    CounterRng child(std::uint64_t stream) const noexcept { return CounterRng(derive(key_, stream)); }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * kGamma);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection of the low 2^64 mod n values.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("CounterRng::below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x >= threshold) return x % n;
        }
    }

    /// Standard normal via Box-Muller (uses two draws per call).
    double normal() noexcept {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = std::numeric_limits<double>::min();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace sfr

