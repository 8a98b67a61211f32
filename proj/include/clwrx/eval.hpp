#pragma once

// Evaluation metrics: mean sum-rate and approximation ratio against the
// oracle, per episode and on the mixture of all test sets, plus ratio
// histograms.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clwrx/error.hpp"
#include "clwrx/losses.hpp"
#include "clwrx/policy.hpp"
#include "clwrx/rates.hpp"
#include "clwrx/wmmse.hpp"

namespace clwrx {

// R(pred; h) / R_oracle, or nullopt when the oracle rate is degenerate.
inline std::optional<double> approx_ratio(std::span<const double> pred, const LabeledSample& sample,
                                          const ProblemConfig& cfg, double min_oracle_rate = kDefaultMinOracleRate) {
    if (!has_valid_oracle(sample, min_oracle_rate)) return std::nullopt;
    return sum_rate(pred, sample.channel, cfg) / sample.oracle_rate;
}

struct Histogram {
    std::vector<double> edges;
    std::vector<std::uint64_t> counts;  // counts[i] covers (edges[i], edges[i + 1]]
    std::vector<double> cdf;            // cdf[j] = fraction of mass at or below edges[j]
};

inline std::vector<double> uniform_edges(double lo, double hi, std::size_t bins) {
    detail::require(bins >= 1 && hi > lo, "uniform_edges: invalid range");
    std::vector<double> e(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    e.back() = hi;
    return e;
}

// Right-closed bins. Values at or below the first edge fall in the first bin
// and values above the last edge in the last bin, so the counts always sum to
// the number of ratios.
inline Histogram ratio_distribution(std::span<const double> ratios, std::span<const double> edges) {
    if (ratios.empty()) throw DataError("ratio_distribution: empty ratios");
    if (edges.size() < 2) throw ConfigError("ratio_distribution: need at least two bin edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw ConfigError("ratio_distribution: bin edges must be strictly increasing");

    Histogram h;
    h.edges.assign(edges.begin(), edges.end());
    h.counts.assign(edges.size() - 1, 0);
    for (double r : ratios) {
        const auto it = std::lower_bound(edges.begin() + 1, edges.end(), r);
        const auto bin = std::min<std::size_t>(static_cast<std::size_t>(it - (edges.begin() + 1)), h.counts.size() - 1);
        ++h.counts[bin];
    }
    h.cdf.assign(edges.size(), 0.0);
    const double n = static_cast<double>(ratios.size());
    std::uint64_t below_first = 0;
    for (double r : ratios)
        if (r <= edges.front()) ++below_first;
    h.cdf[0] = static_cast<double>(below_first) / n;
    std::uint64_t cum = 0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        cum += h.counts[i];
        h.cdf[i + 1] = static_cast<double>(cum) / n;
    }
    return h;
}

struct EpisodeEval {
    std::uint32_t episode_id = 0;
    std::size_t count = 0;
    std::size_t ratio_count = 0;  // samples with a valid oracle rate
    double mean_rate = 0.0;
    double mean_ratio = 0.0;
};

struct EvalReport {
    std::size_t t = 0;
    std::vector<EpisodeEval> episodes;
    std::size_t mixture_count = 0;
    std::size_t mixture_ratio_count = 0;
    std::size_t excluded = 0;  // samples without a usable oracle rate
    double mixture_rate = 0.0;
    double mixture_ratio = 0.0;
    std::vector<double> ratios;  // per mixture sample with a valid oracle, in test-set order
    Histogram histogram;
};

struct LabeledTestSet {
    std::uint32_t episode_id = 0;
    std::vector<LabeledSample> samples;
};

inline std::vector<double> default_ratio_edges() { return uniform_edges(0.0, 1.5, 50); }

// Read-only evaluation of the policy on every test set. Means are unweighted
// over samples; the mixture is the concatenation of all test sets.
inline EvalReport evaluate(const PolicyParams& params, const FeatureNorm& norm, std::span<const LabeledTestSet> test_sets,
                           const ProblemConfig& cfg, std::span<const double> edges = {},
                           double min_oracle_rate = kDefaultMinOracleRate) {
    EvalReport rep;
    double rate_sum = 0.0, ratio_sum = 0.0;
    for (const auto& ts : test_sets) {
        EpisodeEval ep;
        ep.episode_id = ts.episode_id;
        ep.count = ts.samples.size();
        if (!ts.samples.empty()) {
            const auto powers = predict(params, norm, ts.samples);
            double ep_rate = 0.0, ep_ratio = 0.0;
            for (std::size_t i = 0; i < ts.samples.size(); ++i) {
                const double r = sum_rate(powers[i], ts.samples[i].channel, cfg);
                ep_rate += r;
                if (const auto q = approx_ratio(powers[i], ts.samples[i], cfg, min_oracle_rate)) {
                    ep_ratio += *q;
                    ++ep.ratio_count;
                    rep.ratios.push_back(*q);
                } else {
                    ++rep.excluded;
                }
            }
            rate_sum += ep_rate;
            ratio_sum += ep_ratio;
            ep.mean_rate = ep_rate / static_cast<double>(ep.count);
            ep.mean_ratio = ep.ratio_count ? ep_ratio / static_cast<double>(ep.ratio_count) : 0.0;
        }
        rep.mixture_count += ep.count;
        rep.mixture_ratio_count += ep.ratio_count;
        rep.episodes.push_back(ep);
    }
    if (rep.mixture_count == 0) throw DataError("evaluate: empty mixture test set");
    rep.mixture_rate = rate_sum / static_cast<double>(rep.mixture_count);
    rep.mixture_ratio = rep.mixture_ratio_count ? ratio_sum / static_cast<double>(rep.mixture_ratio_count) : 0.0;
    if (!rep.ratios.empty()) {
        const auto e = edges.empty() ? default_ratio_edges() : std::vector<double>(edges.begin(), edges.end());
        rep.histogram = ratio_distribution(rep.ratios, e);
    }
    return rep;
}

}  // namespace clwrx
