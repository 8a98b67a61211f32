#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "clwrx/wmmse.hpp"

using namespace clwrx;

namespace {

ChannelSample real_channel(const std::vector<std::vector<double>>& amp) {
    ChannelSample h(amp.size());
    for (std::size_t r = 0; r < amp.size(); ++r)
        for (std::size_t t = 0; t < amp.size(); ++t) h.at(r, t) = amp[r][t];
    return h;
}

// Exhaustive search over a 201 x 201 grid of [0, p_max]^2.
double grid_optimum(const ChannelSample& h, const ProblemConfig& cfg) {
    double best = 0.0;
    for (int i = 0; i <= 200; ++i)
        for (int j = 0; j <= 200; ++j) {
            const std::vector<double> p{cfg.p_max * i / 200.0, cfg.p_max * j / 200.0};
            best = std::max(best, sum_rate(p, h, cfg));
        }
    return best;
}

}  // namespace

TEST(Wmmse, SingleUserUsesFullPower) {
    const auto h = real_channel({{1.0}});
    const auto res = wmmse_solve(h, ProblemConfig::uniform(1), 1e-6, 500);
    ASSERT_EQ(res.power.size(), 1u);
    EXPECT_NEAR(res.power[0], 1.0, 1e-12);
    EXPECT_NEAR(res.rate, std::log(2.0), 1e-12);
}

TEST(Wmmse, StrongInterferenceMatchesGridSearch) {
    // |h_kk|^2 = 1, |h_kj|^2 = 10.
    const double c = std::sqrt(10.0);
    const auto h = real_channel({{1.0, c}, {c, 1.0}});
    const auto cfg = ProblemConfig::uniform(2);
    const auto res = wmmse_solve(h, cfg);
    EXPECT_NEAR(res.rate, grid_optimum(h, cfg), 1e-3);
    // Near-binary: one link on, the other off.
    const auto [lo, hi] = std::minmax(res.power[0], res.power[1]);
    EXPECT_LT(lo, 0.05);
    EXPECT_GT(hi, 0.95);
}

TEST(Wmmse, ZeroChannelGivesZeroRate) {
    ChannelSample h(3);
    const auto res = wmmse_solve(h, ProblemConfig::uniform(3));
    EXPECT_EQ(res.rate, 0.0);
    for (double p : res.power) EXPECT_TRUE(p >= 0.0 && p <= 1.0);
}

TEST(Wmmse, Errors) {
    ChannelSample h(2);
    EXPECT_THROW(wmmse_solve(h, ProblemConfig::uniform(3)), ConfigError);
    EXPECT_THROW(wmmse_solve(h, ProblemConfig::uniform(2), 0.0, 10), ConfigError);
    EXPECT_THROW(wmmse_solve(h, ProblemConfig::uniform(2), 1e-6, 0), ConfigError);
    h.at(0, 1) = {std::nan(""), 0.0};
    EXPECT_THROW(wmmse_solve(h, ProblemConfig::uniform(2)), DataError);
}

TEST(Wmmse, SurrogateObjectiveNonDecreasing) {
    WmmseOptions opt;
    opt.record_trace = true;
    opt.random_starts = 0;
    for (std::uint64_t id = 0; id < 100; ++id) {
        RandomStream rng(3, id, StreamField::Fading);
        const auto h = gen_rayleigh(10, rng);
        const auto res = wmmse_solve(h, ProblemConfig::uniform(10), opt);
        for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
            ASSERT_GE(res.objective_trace[i], res.objective_trace[i - 1] - 1e-9) << "instance " << id << " iter " << i;
    }
}

TEST(Wmmse, IdempotentFromOwnSolution) {
    for (std::uint64_t id = 0; id < 20; ++id) {
        RandomStream rng(4, id, StreamField::Fading);
        auto h = gen_rayleigh(6, rng);
        h.set_tags(0, id);
        const auto cfg = ProblemConfig::uniform(6);
        const auto first = wmmse_solve(h, cfg);
        WmmseOptions again;
        again.init_power = first.power;
        const auto second = wmmse_solve(h, cfg, again);
        EXPECT_LT(std::abs(second.rate - first.rate), again.tol);
    }
}

TEST(LabelBatch, EmptyAndSingleUser) {
    EXPECT_TRUE(label_batch(std::vector<ChannelSample>{}, ProblemConfig::uniform(2)).empty());
    std::vector<ChannelSample> batch;
    for (std::uint64_t i = 0; i < 3; ++i) {
        RandomStream rng(8, i, StreamField::Fading);
        auto h = gen_rayleigh(1, rng);
        h.set_tags(0, i);
        batch.push_back(h);
    }
    auto cfg = ProblemConfig::uniform(1);
    cfg.p_max = 2.5;
    const auto labeled = label_batch(batch, cfg);
    ASSERT_EQ(labeled.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(labeled[i].sample_id(), i);
        EXPECT_NEAR(labeled[i].label_power[0], 2.5, 1e-12);
        EXPECT_NEAR(labeled[i].oracle_rate, sum_rate(labeled[i].label_power, batch[i], cfg), 1e-9);
    }
}

TEST(LabelBatch, BeatsSimpleBaselines) {
    std::vector<ChannelSample> batch;
    for (std::uint64_t i = 0; i < 100; ++i) {
        RandomStream rng(9, i, StreamField::Fading);
        auto h = gen_rayleigh(10, rng);
        h.set_tags(0, i);
        batch.push_back(h);
    }
    const auto cfg = ProblemConfig::uniform(10);
    const auto labeled = label_batch(batch, cfg);
    for (const auto& s : labeled) {
        EXPECT_GE(s.oracle_rate, sum_rate(std::vector<double>(10, 1.0), s.channel, cfg));
        EXPECT_GE(s.oracle_rate, sum_rate(std::vector<double>(10, 0.5), s.channel, cfg));
    }
}

TEST(LabelBatch, ErrorCarriesSampleId) {
    ChannelSample h(2, 0, 4242);
    h.at(0, 0) = {INFINITY, 0.0};
    std::vector<ChannelSample> batch{h};
    try {
        label_batch(batch, ProblemConfig::uniform(2));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("4242"), std::string::npos);
    }
}
