#pragma once

// Weighted sum-rate of the SISO interference channel and its gradient with
// respect to the transmit powers. Rates are in nats.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "clwrx/channel.hpp"
#include "clwrx/error.hpp"

namespace clwrx {

namespace detail {

inline void check_rate_args(std::span<const double> p, const ChannelSample& h, const ProblemConfig& cfg) {
    const std::size_t k = h.k_pairs();
    if (p.size() != k || cfg.k_pairs() != k)
        throw DataError("sum_rate: dimension mismatch (p has " + std::to_string(p.size()) + ", channel has " +
                        std::to_string(k) + ", config has " + std::to_string(cfg.k_pairs()) + ")");
    for (std::size_t i = 0; i < k; ++i) {
        // A small slack absorbs round-off from squashed network outputs.
        if (!(p[i] >= 0.0 && p[i] <= cfg.p_max * (1.0 + 1e-12)))
            throw DataError("sum_rate: infeasible power p[" + std::to_string(i) + "] = " + std::to_string(p[i]));
    }
}

}  // namespace detail

inline double sum_rate(std::span<const double> p, const ChannelSample& h, const ProblemConfig& cfg) {
    detail::check_rate_args(p, h, cfg);
    const std::size_t k = h.k_pairs();
    double rate = 0.0;
    for (std::size_t rx = 0; rx < k; ++rx) {
        double interference = cfg.sigma2[rx];
        for (std::size_t tx = 0; tx < k; ++tx)
            if (tx != rx) interference += h.gain(rx, tx) * p[tx];
        rate += cfg.user_weights[rx] * std::log1p(h.gain(rx, rx) * p[rx] / interference);
    }
    return rate;
}

// Exact partial derivatives dR/dp_m. Writing T_k = sigma_k^2 + sum_j g_kj p_j
// and I_k = T_k - g_kk p_k, R = sum_k a_k (ln T_k - ln I_k), hence
//   dR/dp_m = sum_k a_k g_km / T_k - sum_{k != m} a_k g_km / I_k.
inline std::vector<double> sum_rate_grad(std::span<const double> p, const ChannelSample& h, const ProblemConfig& cfg) {
    detail::check_rate_args(p, h, cfg);
    const std::size_t k = h.k_pairs();
    std::vector<double> total(k), interference(k);
    for (std::size_t rx = 0; rx < k; ++rx) {
        double i = cfg.sigma2[rx];
        for (std::size_t tx = 0; tx < k; ++tx)
            if (tx != rx) i += h.gain(rx, tx) * p[tx];
        interference[rx] = i;
        total[rx] = i + h.gain(rx, rx) * p[rx];
    }
    std::vector<double> grad(k, 0.0);
    for (std::size_t m = 0; m < k; ++m) {
        double g = 0.0;
        for (std::size_t rx = 0; rx < k; ++rx) {
            const double a = cfg.user_weights[rx];
            g += a * h.gain(rx, m) / total[rx];
            if (rx != m) g -= a * h.gain(rx, m) / interference[rx];
        }
        grad[m] = g;
    }
    return grad;
}

}  // namespace clwrx
