#pragma once

// Synthetic interference-channel generation and episodic streaming.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clwrx/error.hpp"
#include "clwrx/rng.hpp"

namespace clwrx {

using Complex = std::complex<double>;

// One K x K channel realization. Entry (k, j) is the channel from
// transmitter j to receiver k; the diagonal holds the direct links.
class ChannelSample {
public:
    ChannelSample() = default;

    explicit ChannelSample(std::size_t k_pairs, std::uint32_t episode_id = 0, std::uint64_t sample_id = 0)
        : k_(k_pairs), episode_id_(episode_id), sample_id_(sample_id), h_(k_pairs * k_pairs) {
        detail::require(k_pairs >= 1, "channel: k_pairs must be >= 1");
    }

    std::size_t k_pairs() const noexcept { return k_; }
    std::uint32_t episode_id() const noexcept { return episode_id_; }
    std::uint64_t sample_id() const noexcept { return sample_id_; }
    void set_tags(std::uint32_t episode_id, std::uint64_t sample_id) noexcept {
        episode_id_ = episode_id;
        sample_id_ = sample_id;
    }

    Complex& at(std::size_t rx, std::size_t tx) noexcept { return h_[rx * k_ + tx]; }
    const Complex& at(std::size_t rx, std::size_t tx) const noexcept { return h_[rx * k_ + tx]; }

    // |h_{rx,tx}|^2
    double gain(std::size_t rx, std::size_t tx) const noexcept { return std::norm(at(rx, tx)); }

    std::span<Complex> data() noexcept { return h_; }
    std::span<const Complex> data() const noexcept { return h_; }

    bool finite() const noexcept {
        return std::all_of(h_.begin(), h_.end(),
                           [](const Complex& c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); });
    }

    friend bool operator==(const ChannelSample&, const ChannelSample&) = default;

private:
    std::size_t k_ = 0;
    std::uint32_t episode_id_ = 0;
    std::uint64_t sample_id_ = 0;
    std::vector<Complex> h_;
};

// Constants of the weighted sum-rate problem.
struct ProblemConfig {
    double p_max = 1.0;
    std::vector<double> sigma2;        // noise power per receiver
    std::vector<double> user_weights;  // alpha_k

    static ProblemConfig uniform(std::size_t k, double p_max = 1.0, double sigma2 = 1.0, double weight = 1.0) {
        return ProblemConfig{p_max, std::vector<double>(k, sigma2), std::vector<double>(k, weight)};
    }

    std::size_t k_pairs() const noexcept { return sigma2.size(); }

    void validate() const {
        detail::require(std::isfinite(p_max) && p_max > 0.0, "problem: p_max must be > 0");
        detail::require(!sigma2.empty(), "problem: sigma2 must be non-empty");
        detail::require(sigma2.size() == user_weights.size(), "problem: sigma2 and user_weights lengths differ");
        for (double s : sigma2) detail::require(std::isfinite(s) && s > 0.0, "problem: sigma2 entries must be > 0");
        for (double a : user_weights)
            detail::require(std::isfinite(a) && a > 0.0, "problem: user_weights entries must be > 0");
    }

    void validate(std::size_t k) const {
        validate();
        detail::require(k_pairs() == k, "problem: config has " + std::to_string(k_pairs()) +
                                            " users but channel has " + std::to_string(k));
    }
};

enum class EpisodeKind { Rayleigh, Rician, Geometry, DiagBoost };

inline std::string_view to_string(EpisodeKind kind) {
    switch (kind) {
        case EpisodeKind::Rayleigh: return "rayleigh";
        case EpisodeKind::Rician: return "rician";
        case EpisodeKind::Geometry: return "geometry";
        case EpisodeKind::DiagBoost: return "diag_boost";
    }
    return "unknown";
}

inline EpisodeKind episode_kind_from_string(std::string_view s) {
    if (s == "rayleigh") return EpisodeKind::Rayleigh;
    if (s == "rician") return EpisodeKind::Rician;
    if (s == "geometry") return EpisodeKind::Geometry;
    if (s == "diag_boost") return EpisodeKind::DiagBoost;
    throw ConfigError("unknown episode kind '" + std::string(s) + "'");
}

struct EpisodeSpec {
    EpisodeKind kind = EpisodeKind::Rayleigh;
    double area_side = 10.0;    // meters, Geometry only
    double boost_factor = 5.0;  // DiagBoost only
    std::size_t n_train = 0;
    std::size_t n_test = 1;

    void validate() const {
        detail::require(n_test >= 1, "episode: n_test must be >= 1");
        if (kind == EpisodeKind::Geometry)
            detail::require(std::isfinite(area_side) && area_side > 0.0, "episode: area_side must be > 0");
        if (kind == EpisodeKind::DiagBoost)
            detail::require(std::isfinite(boost_factor) && boost_factor > 0.0, "episode: boost_factor must be > 0");
    }
};

struct EpisodeSchedule {
    std::vector<EpisodeSpec> episodes;
    std::size_t k_pairs = 10;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(k_pairs >= 1, "schedule: k_pairs must be >= 1");
        detail::require(batch_size >= 1, "schedule: batch_size must be >= 1");
        for (const auto& e : episodes) e.validate();
    }

    std::size_t total_train() const noexcept {
        std::size_t n = 0;
        for (const auto& e : episodes) n += e.n_train;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Generators

inline ChannelSample gen_rayleigh(std::size_t k, RandomStream& rng) {
    if (k == 0) throw ConfigError("gen_rayleigh: invalid dimension k = 0");
    ChannelSample s(k);
    const double scale = 1.0 / std::numbers::sqrt2;
    for (auto& c : s.data()) {
        const double re = rng.normal() * scale;
        const double im = rng.normal() * scale;
        c = {re, im};
    }
    return s;
}

// Rician fading with 0 dB K-factor: Re, Im ~ (1 + N(0,1)) / 2.
inline ChannelSample gen_rician(std::size_t k, RandomStream& rng) {
    if (k == 0) throw ConfigError("gen_rician: invalid dimension k = 0");
    ChannelSample s(k);
    for (auto& c : s.data()) {
        const double re = (1.0 + rng.normal()) / 2.0;
        const double im = (1.0 + rng.normal()) / 2.0;
        c = {re, im};
    }
    return s;
}

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Pathloss channel for given node positions: h(rx, tx) = f / sqrt(1 + d^2)
// with f ~ CN(0, 1) and d the distance between transmitter tx and receiver rx.
inline ChannelSample geometry_channel(std::span<const Point2> tx, std::span<const Point2> rx, RandomStream& fading) {
    if (tx.empty() || tx.size() != rx.size()) throw ConfigError("geometry_channel: invalid dimension");
    const std::size_t k = tx.size();
    ChannelSample s(k);
    const double scale = 1.0 / std::numbers::sqrt2;
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t t = 0; t < k; ++t) {
            const double dx = tx[t].x - rx[r].x;
            const double dy = tx[t].y - rx[r].y;
            const double atten = 1.0 / std::sqrt(1.0 + dx * dx + dy * dy);
            const double re = fading.normal() * scale;
            const double im = fading.normal() * scale;
            s.at(r, t) = Complex{re, im} * atten;
        }
    }
    return s;
}

// Transmitters and receivers placed i.i.d. uniform in an area_side x area_side
// square; transmitter k serves receiver k.
inline ChannelSample gen_geometry(std::size_t k, double area_side, RandomStream& placement, RandomStream& fading) {
    if (k == 0) throw ConfigError("gen_geometry: invalid dimension k = 0");
    if (!(area_side > 0.0) || !std::isfinite(area_side))
        throw ConfigError("gen_geometry: area_side must be > 0");
    std::vector<Point2> tx(k), rx(k);
    for (auto& p : tx) p = {placement.uniform(0.0, area_side), placement.uniform(0.0, area_side)};
    for (auto& p : rx) p = {placement.uniform(0.0, area_side), placement.uniform(0.0, area_side)};
    return geometry_channel(tx, rx, fading);
}

inline ChannelSample gen_geometry(std::size_t k, double area_side, RandomStream& rng) {
    return gen_geometry(k, area_side, rng, rng);
}

// Base-kind sample with every direct link scaled by boost_factor.
inline ChannelSample gen_diag_boost(EpisodeKind base_kind, double boost_factor, std::size_t k, RandomStream& rng) {
    if (base_kind != EpisodeKind::Rayleigh)
        throw ConfigError("gen_diag_boost: unsupported base kind '" + std::string(to_string(base_kind)) + "'");
    if (!(boost_factor > 0.0) || !std::isfinite(boost_factor))
        throw ConfigError("gen_diag_boost: boost_factor must be > 0");
    ChannelSample s = gen_rayleigh(k, rng);
    for (std::size_t i = 0; i < k; ++i) s.at(i, i) *= boost_factor;
    return s;
}

// ---------------------------------------------------------------------------
// Sample identities and streaming

// Test samples live in a disjoint id range from the training stream.
inline constexpr std::uint64_t kTestIdBase = std::uint64_t{1} << 62;

// Generate the realization with the given id for an episode. Pure function of
// (seed, sample_id, spec).
inline ChannelSample make_sample(const EpisodeSpec& spec, std::size_t k, std::uint64_t seed, std::uint32_t episode_id,
                                 std::uint64_t sample_id) {
    RandomStream fading(seed, sample_id, StreamField::Fading);
    ChannelSample s;
    switch (spec.kind) {
        case EpisodeKind::Rayleigh: s = gen_rayleigh(k, fading); break;
        case EpisodeKind::Rician: s = gen_rician(k, fading); break;
        case EpisodeKind::Geometry: {
            RandomStream placement(seed, sample_id, StreamField::Geometry);
            s = gen_geometry(k, spec.area_side, placement, fading);
            break;
        }
        case EpisodeKind::DiagBoost: s = gen_diag_boost(EpisodeKind::Rayleigh, spec.boost_factor, k, fading); break;
    }
    s.set_tags(episode_id, sample_id);
    return s;
}

// Id of the first training sample of an episode.
inline std::uint64_t first_train_id(const EpisodeSchedule& schedule, std::size_t episode) {
    std::uint64_t id = 0;
    for (std::size_t e = 0; e < episode; ++e) id += schedule.episodes[e].n_train;
    return id;
}

inline std::uint64_t first_test_id(const EpisodeSchedule& schedule, std::size_t episode) {
    std::uint64_t id = kTestIdBase;
    for (std::size_t e = 0; e < episode; ++e) id += schedule.episodes[e].n_test;
    return id;
}

inline std::vector<ChannelSample> train_set(const EpisodeSchedule& schedule, std::size_t episode) {
    const auto& spec = schedule.episodes.at(episode);
    const auto base = first_train_id(schedule, episode);
    std::vector<ChannelSample> out;
    out.reserve(spec.n_train);
    for (std::size_t i = 0; i < spec.n_train; ++i)
        out.push_back(make_sample(spec, schedule.k_pairs, schedule.seed, static_cast<std::uint32_t>(episode), base + i));
    return out;
}

inline std::vector<ChannelSample> test_set(const EpisodeSchedule& schedule, std::size_t episode) {
    const auto& spec = schedule.episodes.at(episode);
    const auto base = first_test_id(schedule, episode);
    std::vector<ChannelSample> out;
    out.reserve(spec.n_test);
    for (std::size_t i = 0; i < spec.n_test; ++i)
        out.push_back(make_sample(spec, schedule.k_pairs, schedule.seed, static_cast<std::uint32_t>(episode), base + i));
    return out;
}

struct StreamCursor {
    std::size_t episode = 0;
    std::size_t offset = 0;  // samples already emitted from the current episode
};

// Next batch of the stream, or nullopt at end of stream. A batch never spans
// two episodes; the last batch of an episode may be short.
inline std::optional<std::vector<ChannelSample>> next_batch(const EpisodeSchedule& schedule, StreamCursor& cursor) {
    detail::require(schedule.batch_size >= 1, "next_batch: batch_size must be >= 1");
    while (cursor.episode < schedule.episodes.size() && cursor.offset >= schedule.episodes[cursor.episode].n_train) {
        ++cursor.episode;
        cursor.offset = 0;
    }
    if (cursor.episode >= schedule.episodes.size()) return std::nullopt;

    const auto& spec = schedule.episodes[cursor.episode];
    const std::size_t n = std::min(schedule.batch_size, spec.n_train - cursor.offset);
    const auto base = first_train_id(schedule, cursor.episode) + cursor.offset;
    std::vector<ChannelSample> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        batch.push_back(
            make_sample(spec, schedule.k_pairs, schedule.seed, static_cast<std::uint32_t>(cursor.episode), base + i));
    cursor.offset += n;
    return batch;
}

}  // namespace clwrx
