#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "clwrx/rates.hpp"

using namespace clwrx;

namespace {

ChannelSample real_channel(const std::vector<std::vector<double>>& amp) {
    ChannelSample h(amp.size());
    for (std::size_t r = 0; r < amp.size(); ++r)
        for (std::size_t t = 0; t < amp.size(); ++t) h.at(r, t) = amp[r][t];
    return h;
}

// Central finite differences of sum_rate, independent of the analytic gradient.
std::vector<double> fd_grad(const std::vector<double>& p, const ChannelSample& h, const ProblemConfig& cfg, double step) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto hi = p, lo = p;
        hi[i] += step;
        lo[i] -= step;
        g[i] = (sum_rate(hi, h, cfg) - sum_rate(lo, h, cfg)) / (2 * step);
    }
    return g;
}

}  // namespace

TEST(SumRate, SingleUser) {
    const auto h = real_channel({{1.0}});
    EXPECT_NEAR(sum_rate(std::vector<double>{1.0}, h, ProblemConfig::uniform(1)), std::log(2.0), 1e-15);
}

TEST(SumRate, ZeroPowerZeroRate) {
    RandomStream rng(1, 1, StreamField::Fading);
    const auto h = gen_rayleigh(4, rng);
    EXPECT_EQ(sum_rate(std::vector<double>(4, 0.0), h, ProblemConfig::uniform(4)), 0.0);
}

TEST(SumRate, TwoUserClosedForm) {
    // |h|^2 = [[4, 1], [1, 4]]: SINR = 4 / (1 + 1) = 2 for both users.
    const auto h = real_channel({{2.0, 1.0}, {1.0, 2.0}});
    EXPECT_NEAR(sum_rate(std::vector<double>{1.0, 1.0}, h, ProblemConfig::uniform(2)), 2.0 * std::log(3.0), 1e-14);
}

TEST(SumRate, Errors) {
    const auto h = real_channel({{1.0, 0.0}, {0.0, 1.0}});
    const auto cfg = ProblemConfig::uniform(2);
    EXPECT_THROW(sum_rate(std::vector<double>{1.0}, h, cfg), DataError);
    EXPECT_THROW(sum_rate(std::vector<double>{1.5, 0.0}, h, cfg), DataError);
    EXPECT_THROW(sum_rate(std::vector<double>{-0.1, 0.0}, h, cfg), DataError);
    EXPECT_THROW(sum_rate_grad(std::vector<double>{1.0, 0.0}, h, ProblemConfig::uniform(3)), DataError);
}

TEST(SumRateGrad, SingleUser) {
    const auto h = real_channel({{1.0}});
    const auto g = sum_rate_grad(std::vector<double>{1.0}, h, ProblemConfig::uniform(1));
    EXPECT_NEAR(g[0], 0.5, 1e-15);
}

TEST(SumRateGrad, DiagonalChannelDecouples) {
    const auto h = real_channel({{2.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 3.0}});
    auto cfg = ProblemConfig::uniform(3);
    cfg.user_weights = {1.0, 2.0, 0.5};
    const std::vector<double> p{0.3, 0.7, 0.1};
    const auto g = sum_rate_grad(p, h, cfg);
    for (std::size_t k = 0; k < 3; ++k) {
        const double gk = h.gain(k, k);
        EXPECT_NEAR(g[k], cfg.user_weights[k] * gk / (1.0 + gk * p[k]), 1e-14);
    }
}

TEST(SumRateGrad, MatchesFiniteDifferencesOnRandomInstances) {
    for (std::uint64_t id = 0; id < 100; ++id) {
        RandomStream rng(123, id, StreamField::Fading);
        const auto h = gen_rayleigh(5, rng);
        auto cfg = ProblemConfig::uniform(5);
        std::vector<double> p(5);
        for (std::size_t k = 0; k < 5; ++k) {
            p[k] = rng.uniform(0.05, 0.95);
            cfg.user_weights[k] = rng.uniform(0.5, 2.0);
            cfg.sigma2[k] = rng.uniform(0.5, 2.0);
        }
        const auto g = sum_rate_grad(p, h, cfg);
        const auto fd = fd_grad(p, h, cfg, 1e-6);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            num += (g[k] - fd[k]) * (g[k] - fd[k]);
            den += fd[k] * fd[k];
        }
        EXPECT_LT(std::sqrt(num / den), 1e-6) << "instance " << id;
    }
}

TEST(SumRateGrad, BoundaryIsFinite) {
    RandomStream rng(5, 5, StreamField::Fading);
    const auto h = gen_rayleigh(4, rng);
    const auto g = sum_rate_grad(std::vector<double>{0.0, 1.0, 0.0, 1.0}, h, ProblemConfig::uniform(4));
    for (double x : g) EXPECT_TRUE(std::isfinite(x));
}

TEST(SumRateProperties, NonNegativeMonotoneAndLinearInWeights) {
    for (std::uint64_t id = 0; id < 50; ++id) {
        RandomStream rng(77, id, StreamField::Fading);
        auto h = gen_rayleigh(4, rng);
        auto cfg = ProblemConfig::uniform(4);
        std::vector<double> p(4);
        for (auto& x : p) x = rng.uniform(0.01, 1.0);
        const double base = sum_rate(p, h, cfg);
        EXPECT_GE(base, 0.0);

        auto stronger = h;
        stronger.at(2, 2) *= 1.5;
        EXPECT_GE(sum_rate(p, stronger, cfg), base);

        // Doubling alpha_1 adds exactly user 1's rate term once more.
        auto only1 = cfg;
        for (std::size_t k = 0; k < 4; ++k) only1.user_weights[k] = k == 1 ? 1.0 : 1e-300;
        const double term1 = sum_rate(p, h, only1);
        auto doubled = cfg;
        doubled.user_weights[1] = 2.0;
        EXPECT_NEAR(sum_rate(p, h, doubled), base + term1, 1e-12);
    }
}
