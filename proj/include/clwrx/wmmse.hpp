#pragma once

// WMMSE power control for the SISO interference channel, used as the
// labeling oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clwrx/channel.hpp"
#include "clwrx/error.hpp"
#include "clwrx/parallel.hpp"
#include "clwrx/rates.hpp"
#include "clwrx/rng.hpp"

namespace clwrx {

struct LabeledSample {
    ChannelSample channel;
    std::vector<double> label_power;
    double oracle_rate = 0.0;
    int solver_iters = 0;

    std::uint64_t sample_id() const noexcept { return channel.sample_id(); }
    std::uint32_t episode_id() const noexcept { return channel.episode_id(); }

    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct WmmseOptions {
    double tol = 1e-6;
    int max_iters = 500;
    // Starting powers; empty means full power on every link.
    std::vector<double> init_power;
    // Extra random starting points; the best run is kept.
    int random_starts = 4;
    std::uint64_t start_seed = 0;
    bool record_trace = false;
};

struct WmmseResult {
    std::vector<double> power;
    double rate = 0.0;
    int iters = 0;  // summed over all starts
    // Negated weighted-MSE objective after each iteration of the kept run;
    // non-decreasing.
    std::vector<double> objective_trace;
};

namespace detail {

// One WMMSE run from the given transmit amplitudes v = sqrt(p).
inline WmmseResult wmmse_run(const ChannelSample& h, const ProblemConfig& cfg, std::vector<double> v,
                             const WmmseOptions& opt) {
    const std::size_t k = h.k_pairs();
    const double v_max = std::sqrt(cfg.p_max);
    std::vector<double> direct(k), gain(k * k);
    for (std::size_t r = 0; r < k; ++r) {
        direct[r] = std::abs(h.at(r, r));
        for (std::size_t t = 0; t < k; ++t) gain[r * k + t] = h.gain(r, t);
    }

    std::vector<double> u(k), w(k);
    auto received_power = [&](std::size_t r) {
        double s = cfg.sigma2[r];
        for (std::size_t t = 0; t < k; ++t) s += gain[r * k + t] * v[t] * v[t];
        return s;
    };
    auto update_receivers = [&] {
        for (std::size_t r = 0; r < k; ++r) {
            u[r] = direct[r] * v[r] / received_power(r);
            w[r] = 1.0 / (1.0 - u[r] * direct[r] * v[r]);
        }
    };
    auto objective = [&] {
        double f = 0.0;
        for (std::size_t r = 0; r < k; ++r) {
            const double e = u[r] * u[r] * received_power(r) - 2.0 * u[r] * direct[r] * v[r] + 1.0;
            f -= cfg.user_weights[r] * (w[r] * e - std::log(w[r]));
        }
        return f;
    };

    WmmseResult res;
    update_receivers();
    double prev = objective();
    if (opt.record_trace) res.objective_trace.push_back(prev);

    int it = 0;
    while (it < opt.max_iters) {
        ++it;
        for (std::size_t t = 0; t < k; ++t) {
            double denom = 0.0;
            for (std::size_t r = 0; r < k; ++r) denom += cfg.user_weights[r] * w[r] * u[r] * u[r] * gain[r * k + t];
            v[t] = denom < 1e-30 ? 0.0 : std::clamp(cfg.user_weights[t] * w[t] * u[t] * direct[t] / denom, 0.0, v_max);
        }
        // Objective at the new amplitudes with the receivers they were
        // optimized against; then refresh receivers for the next sweep.
        const double cur = objective();
        if (opt.record_trace) res.objective_trace.push_back(cur);
        update_receivers();
        if (std::abs(cur - prev) < opt.tol) break;
        prev = cur;
    }

    res.power.resize(k);
    for (std::size_t i = 0; i < k; ++i) res.power[i] = std::min(v[i] * v[i], cfg.p_max);
    res.rate = sum_rate(res.power, h, cfg);
    res.iters = it;
    return res;
}

}  // namespace detail

// Runs WMMSE from the initial point (full power unless init_power is given)
// and from `random_starts` extra starting points drawn from a stream keyed by
// the sample id, returning the run with the highest sum-rate. Ties keep the
// earliest run.
inline WmmseResult wmmse_solve(const ChannelSample& h, const ProblemConfig& cfg, const WmmseOptions& opt = {}) {
    const std::size_t k = h.k_pairs();
    cfg.validate(k);
    detail::require(opt.tol > 0.0, "wmmse: tol must be > 0");
    detail::require(opt.max_iters >= 1, "wmmse: max_iters must be >= 1");
    detail::require(opt.random_starts >= 0, "wmmse: random_starts must be >= 0");
    if (!h.finite()) throw DataError("wmmse: non-finite channel");

    const double v_max = std::sqrt(cfg.p_max);
    std::vector<double> v0(k, v_max);
    if (!opt.init_power.empty()) {
        detail::require<DataError>(opt.init_power.size() == k, "wmmse: init_power has wrong length");
        for (std::size_t i = 0; i < k; ++i) v0[i] = std::sqrt(std::clamp(opt.init_power[i], 0.0, cfg.p_max));
    }
    WmmseResult best = detail::wmmse_run(h, cfg, std::move(v0), opt);
    int total_iters = best.iters;
    RandomStream rng(opt.start_seed, h.sample_id(), StreamField::Misc);
    for (int s = 0; s < opt.random_starts; ++s) {
        std::vector<double> v(k);
        for (auto& x : v) x = std::sqrt(rng.uniform() * cfg.p_max);
        auto cand = detail::wmmse_run(h, cfg, std::move(v), opt);
        total_iters += cand.iters;
        if (cand.rate > best.rate) best = std::move(cand);
    }
    best.iters = total_iters;
    return best;
}

inline WmmseResult wmmse_solve(const ChannelSample& h, const ProblemConfig& cfg, double tol, int max_iters) {
    WmmseOptions opt;
    opt.tol = tol;
    opt.max_iters = max_iters;
    return wmmse_solve(h, cfg, opt);
}

inline LabeledSample label_sample(const ChannelSample& h, const ProblemConfig& cfg, const WmmseOptions& opt = {}) {
    auto res = wmmse_solve(h, cfg, opt);
    return LabeledSample{h, std::move(res.power), res.rate, res.iters};
}

// Labels every sample; order preserved. Errors carry the offending sample id.
inline std::vector<LabeledSample> label_batch(std::span<const ChannelSample> batch, const ProblemConfig& cfg,
                                              const WmmseOptions& opt = {},
                                              std::size_t threads = worker_threads()) {
    std::vector<LabeledSample> out(batch.size());
    parallel_for(
        batch.size(),
        [&](std::size_t i) {
            try {
                out[i] = label_sample(batch[i], cfg, opt);
            } catch (const ConfigError& e) {
                throw ConfigError("sample " + std::to_string(batch[i].sample_id()) + ": " + e.what());
            } catch (const Error& e) {
                throw DataError("sample " + std::to_string(batch[i].sample_id()) + ": " + e.what());
            }
        },
        threads);
    return out;
}

}  // namespace clwrx
