#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clwrx/channel.hpp"
#include "clwrx/error.hpp"
#include "clwrx/rates.hpp"
#include "clwrx/wmmse.hpp"

namespace clwrx {

// Oracle rates at or below this are treated as degenerate: the adaptive
// weight 1 / R_oracle is undefined there.
inline constexpr double kDefaultMinOracleRate = 1e-9;

struct LossValue {
    double value = 0.0;
    std::vector<double> grad;  // with respect to the prediction
};

// ||label - pred||^2 and its gradient 2 (pred - label).
inline LossValue mse_loss(std::span<const double> pred, std::span<const double> label) {
    if (pred.size() != label.size())
        throw DataError("mse_loss: length mismatch (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(label.size()) + ")");
    LossValue out{0.0, std::vector<double>(pred.size())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - label[i];
        out.value += d * d;
        out.grad[i] = 2.0 * d;
    }
    return out;
}

inline bool has_valid_oracle(const LabeledSample& s, double min_oracle_rate = kDefaultMinOracleRate) {
    return s.oracle_rate > min_oracle_rate;
}

// Adaptive weighted negative sum-rate: -R(pred; h) / R_oracle, the negated
// per-sample approximation ratio. nullopt marks a sample excluded from the
// sample-weight ascent because its oracle rate is degenerate.
inline std::optional<double> perf_loss_g(std::span<const double> pred, const LabeledSample& sample,
                                         const ProblemConfig& cfg, double min_oracle_rate = kDefaultMinOracleRate) {
    if (!has_valid_oracle(sample, min_oracle_rate)) return std::nullopt;
    return -sum_rate(pred, sample.channel, cfg) / sample.oracle_rate;
}

// Value and prediction gradient of perf_loss_g, for training directly on it.
inline std::optional<LossValue> perf_loss_with_grad(std::span<const double> pred, const LabeledSample& sample,
                                                    const ProblemConfig& cfg,
                                                    double min_oracle_rate = kDefaultMinOracleRate) {
    if (!has_valid_oracle(sample, min_oracle_rate)) return std::nullopt;
    LossValue out;
    out.value = -sum_rate(pred, sample.channel, cfg) / sample.oracle_rate;
    out.grad = sum_rate_grad(pred, sample.channel, cfg);
    for (auto& g : out.grad) g = -g / sample.oracle_rate;
    return out;
}

}  // namespace clwrx
