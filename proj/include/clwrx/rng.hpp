#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is drawn from a stream keyed by
// (master seed, object id, field index). Values therefore depend only on the
// key, never on generation order or on how work is split across threads.
// The base generator is SplitMix64 over an incrementing counter; normals are
// produced with the Box-Muller transform so results are bit-identical across
// standard library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace clwrx {

// Identifier written into dataset headers and run manifests.
inline constexpr std::uint32_t kGeneratorId = 1;
inline constexpr const char* kGeneratorName = "splitmix64-boxmuller";

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Well-known field indices for sub-streams.
enum class StreamField : std::uint64_t {
    Fading = 0,
    Geometry = 1,
    PolicyInit = 2,
    Reservoir = 3,
    Shuffle = 4,
    Misc = 5,
};

class RandomStream {
public:
    using result_type = std::uint64_t;

    constexpr RandomStream(std::uint64_t seed, std::uint64_t id, std::uint64_t field) noexcept
        : key_(splitmix64(splitmix64(splitmix64(seed) ^ id) ^ (field * 0xD1B54A32D192ED03ULL))) {}

    constexpr RandomStream(std::uint64_t seed, std::uint64_t id, StreamField field) noexcept
        : RandomStream(seed, id, static_cast<std::uint64_t>(field)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    constexpr result_type operator()() noexcept { return splitmix64(key_ + 0x632BE59BD9B4E019ULL * counter_++); }

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Lemire's rejection keeps it unbiased.
    std::uint64_t index(std::uint64_t n) noexcept {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
            if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    // Standard normal draw.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t draws() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// In-place Fisher-Yates shuffle driven by a RandomStream.
template <class Range>
void shuffle(Range& r, RandomStream& rng) {
    using std::swap;
    const auto n = static_cast<std::uint64_t>(std::size(r));
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.index(i);
        swap(r[i - 1], r[j]);
    }
}

}  // namespace clwrx
