#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace mose {

/// Counter-based generator: output i of a stream is splitmix64(key + i * golden).
///
/// Streams are derived with split(tag), so data generation, initialization and
/// shuffling never share draws. Only integer arithmetic and libm log/cos are
/// involved, which keeps streams identical across platforms.
class Rng {
public:
    struct State {
        std::uint64_t key = 0;
        std::uint64_t counter = 0;
        friend bool operator==(const State&, const State&) = default;
    };

    explicit Rng(std::uint64_t seed) : state_{mix(seed ^ 0x6a09e667f3bcc909ULL), 0} {}

    static Rng from_state(State s) {
        Rng r(0);
        r.state_ = s;
        return r;
    }

    State state() const noexcept { return state_; }

    Rng split(std::uint64_t tag) const {
        return from_state({mix(state_.key ^ mix(tag + 0x9e3779b97f4a7c15ULL)), 0});
    }

    std::uint64_t next_u64() noexcept { return mix(state_.key + (state_.counter++) * kGolden); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one output per pair of draws).
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = -bound % bound;  // 2^64 mod bound
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= limit) return r % bound;
        }
    }

    /// Fisher-Yates.
    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
    State state_;
};

}  // namespace mose
