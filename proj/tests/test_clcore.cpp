#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>
#include <vector>

#include "clwrx/trainer.hpp"

using namespace clwrx;

namespace {

ChannelSample real_channel(const std::vector<std::vector<double>>& amp, std::uint64_t id = 0) {
    ChannelSample h(amp.size(), 0, id);
    for (std::size_t r = 0; r < amp.size(); ++r)
        for (std::size_t t = 0; t < amp.size(); ++t) h.at(r, t) = amp[r][t];
    return h;
}

std::vector<LabeledSample> rayleigh_labeled(std::size_t n, std::size_t k, std::uint64_t first_id,
                                            std::uint32_t episode = 0, std::uint64_t seed = 1) {
    std::vector<LabeledSample> out;
    EpisodeSpec spec;
    for (std::uint64_t i = 0; i < n; ++i)
        out.push_back(label_sample(make_sample(spec, k, seed, episode, first_id + i), ProblemConfig::uniform(k)));
    return out;
}

// Exact projection by enumerating every support set: on a support S the
// projection is v_S shifted by a constant; keep the feasible candidate
// closest to v.
std::vector<double> project_by_enumeration(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        double sum = 0.0;
        int size = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) sum += v[i], ++size;
        const double shift = (sum - 1.0) / size;
        std::vector<double> x(n, 0.0);
        bool feasible = true;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) {
                x[i] = v[i] - shift;
                if (x[i] < 0.0) feasible = false;
            }
        if (!feasible) continue;
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += (x[i] - v[i]) * (x[i] - v[i]);
        if (d < best_d) best_d = d, best = x;
    }
    return best;
}

// Two-sample scalar game: loss_i = (theta - c_i)^2 is both the training and
// the performance loss.
struct ScalarQuadraticGame {
    double theta = 0.0;
    double c[2] = {0.0, 1.0};

    double grad(std::span<const double> lambda) const {
        return lambda[0] * 2 * (theta - c[0]) + lambda[1] * 2 * (theta - c[1]);
    }
    void descend(std::span<const double> lambda, double step) { theta -= step * grad(lambda); }
    std::vector<double> performance() const { return {(theta - c[0]) * (theta - c[0]), (theta - c[1]) * (theta - c[1])}; }
};

TrainerConfig quick_config(Strategy s, std::size_t memory) {
    TrainerConfig cfg;
    cfg.strategy = s;
    cfg.alpha = 0.05;
    cfg.beta = 0.01;
    cfg.rounds = 2;
    cfg.epochs = 2;
    cfg.memory_capacity = memory;
    return cfg;
}

TrainerState fresh_state(std::size_t k, const TrainerConfig& cfg) {
    auto params = init_policy({k * k, 8, k}, 1);
    return TrainerState::create(std::move(params), FeatureNorm::identity(k * k), cfg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

TEST(MseLoss, Examples) {
    const auto zero = mse_loss(std::vector<double>{0.3, 0.4}, std::vector<double>{0.3, 0.4});
    EXPECT_EQ(zero.value, 0.0);
    EXPECT_EQ(zero.grad, (std::vector<double>{0.0, 0.0}));
    const auto one = mse_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0});
    EXPECT_EQ(one.value, 1.0);
    EXPECT_EQ(one.grad, (std::vector<double>{2.0, 0.0}));
    EXPECT_THROW(mse_loss(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), DataError);
}

TEST(MseLoss, GradientMatchesFiniteDifferences) {
    RandomStream rng(1, 2, StreamField::Misc);
    std::vector<double> pred(10), label(10);
    for (std::size_t i = 0; i < 10; ++i) pred[i] = rng.uniform(), label[i] = rng.uniform();
    const auto l = mse_loss(pred, label);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        auto hi = pred, lo = pred;
        hi[i] += 1e-6;
        lo[i] -= 1e-6;
        const double fd = (mse_loss(hi, label).value - mse_loss(lo, label).value) / 2e-6;
        num += (fd - l.grad[i]) * (fd - l.grad[i]);
        den += fd * fd;
    }
    EXPECT_LT(std::sqrt(num / den), 1e-8);
}

TEST(PerfLoss, Examples) {
    const auto cfg = ProblemConfig::uniform(3);
    const auto s = rayleigh_labeled(1, 3, 0).front();
    EXPECT_NEAR(*perf_loss_g(s.label_power, s, cfg), -1.0, 1e-12);
    EXPECT_EQ(*perf_loss_g(std::vector<double>(3, 0.0), s, cfg), 0.0);
    const std::vector<double> pred{0.2, 0.9, 0.4};
    EXPECT_DOUBLE_EQ(*perf_loss_g(pred, s, cfg), -sum_rate(pred, s.channel, cfg) / s.oracle_rate);

    auto degenerate = s;
    degenerate.oracle_rate = 0.0;
    EXPECT_FALSE(perf_loss_g(pred, degenerate, cfg).has_value());
}

// ---------------------------------------------------------------------------
// Simplex projection

TEST(Simplex, Examples) {
    EXPECT_EQ(project_simplex(std::vector<double>{0.3, 0.7}), (std::vector<double>{0.3, 0.7}));
    EXPECT_EQ(project_simplex(std::vector<double>{2.0, 0.0}), (std::vector<double>{1.0, 0.0}));
    EXPECT_THROW(project_simplex(std::vector<double>{}), ConfigError);
}

TEST(Simplex, MatchesActiveSetEnumeration) {
    RandomStream rng(3, 3, StreamField::Misc);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.index(7);
        std::vector<double> v(n);
        for (auto& x : v) x = rng.normal() * 2.0;
        const auto fast = project_simplex(v);
        const auto slow = project_by_enumeration(v);
        for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(fast[i], slow[i], 1e-8);
        ASSERT_TRUE(on_simplex(fast, 1e-12));
    }
}

TEST(Simplex, MaskedProjectionPinsInactive) {
    const auto out = project_simplex_masked(std::vector<double>{5.0, 0.2, 0.3}, {false, true, true});
    EXPECT_EQ(out[0], 0.0);
    EXPECT_TRUE(on_simplex(out));
}

TEST(Simplex, AscentStepNeverDecreasesLinearObjective) {
    RandomStream rng(4, 4, StreamField::Misc);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(20);
        std::vector<double> raw(n), g(n);
        for (auto& x : raw) x = rng.uniform();
        for (auto& x : g) x = rng.normal();
        const auto lambda = project_simplex(raw);
        std::vector<double> stepped(n);
        for (std::size_t i = 0; i < n; ++i) stepped[i] = lambda[i] + 0.3 * g[i];
        const auto next = project_simplex(stepped);
        double before = 0.0, after = 0.0;
        for (std::size_t i = 0; i < n; ++i) before += lambda[i] * g[i], after += next[i] * g[i];
        EXPECT_GE(after, before - 1e-12);
    }
}

// ---------------------------------------------------------------------------
// PGDA

TEST(Pgda, ZeroBetaIsUniformDescent) {
    ScalarQuadraticGame game;
    game.theta = 3.0;
    std::vector<double> lambda{0.5, 0.5};
    pgda_round(game, lambda, {true, true}, 0.1, 0.0);
    // theta <- 3 - 0.1 * (0.5 * 2 * 3 + 0.5 * 2 * 2) = 2.5
    EXPECT_DOUBLE_EQ(game.theta, 2.5);
    EXPECT_EQ(lambda, (std::vector<double>{0.5, 0.5}));
}

TEST(Pgda, SingleSampleWeightStaysPinned) {
    struct One {
        double theta = 1.0;
        void descend(std::span<const double> l, double s) { theta -= s * l[0] * 2 * theta; }
        std::vector<double> performance() const { return {theta * theta}; }
    } game;
    std::vector<double> lambda{1.0};
    for (int r = 0; r < 50; ++r) {
        pgda_round(game, lambda, {true}, 0.1, 0.5);
        ASSERT_EQ(lambda, std::vector<double>{1.0});
    }
}

TEST(Pgda, QuadraticGameReachesSaddle) {
    ScalarQuadraticGame game;
    game.c[0] = -1.0;
    game.c[1] = 3.0;
    game.theta = 5.0;
    std::vector<double> lambda{0.9, 0.1};
    double alpha = 0.2, beta = 0.05;
    for (int r = 0; r < 20000; ++r) {
        const double a = alpha / (1.0 + r * 1e-4), b = beta / (1.0 + r * 1e-4);
        pgda_round(game, lambda, {true, true}, a, b);
        ASSERT_TRUE(on_simplex(lambda));
    }
    EXPECT_NEAR(game.theta, 1.0, 1e-3);
    EXPECT_NEAR(lambda[0], 0.5, 1e-3);
}

// ---------------------------------------------------------------------------
// Memory

TEST(TopM, KeepsLargestWeights) {
    const auto samples = rayleigh_labeled(3, 2, 10);
    const auto ws = WorkingSet::build(MemoryBuffer(0), samples, 0);
    const auto mem = update_memory_topM(std::vector<double>{0.5, 0.3, 0.2}, ws, 2);
    ASSERT_EQ(mem.size(), 2u);
    EXPECT_EQ(mem.items()[0].sample.sample_id(), 10u);
    EXPECT_EQ(mem.items()[1].sample.sample_id(), 11u);
}

TEST(TopM, SmallWorkingSetIsKeptWhole) {
    const auto samples = rayleigh_labeled(3, 2, 10);
    const auto ws = WorkingSet::build(MemoryBuffer(0), samples, 0);
    const auto mem = update_memory_topM(std::vector<double>{1.0, 0.0, 0.0}, ws, 5);
    EXPECT_EQ(mem.size(), 3u);
    EXPECT_EQ(mem.capacity(), 5u);
}

TEST(TopM, TiesPreferWorseServedThenRecent) {
    MemoryBuffer old(4);
    const auto early = rayleigh_labeled(2, 2, 0);
    for (const auto& s : early) old.push({s, 0});
    const auto batch = rayleigh_labeled(2, 2, 100);
    const auto ws = WorkingSet::build(old, batch, 3);
    // Order: ids 0, 1 (t = 0), then 100, 101 (t = 3).
    const std::vector<double> lambda(4, 0.25);
    {
        const std::vector<double> g{-0.5, -0.9, -0.9, -0.7};
        const auto mem = update_memory_topM(lambda, ws, 2, g);
        EXPECT_EQ(mem.items()[0].sample.sample_id(), 0u);
        EXPECT_EQ(mem.items()[1].sample.sample_id(), 101u);
    }
    {
        const std::vector<double> g(4, -0.5);
        const auto mem = update_memory_topM(lambda, ws, 2, g);
        EXPECT_EQ(mem.items()[0].sample.sample_id(), 101u);
        EXPECT_EQ(mem.items()[1].sample.sample_id(), 100u);
    }
}

TEST(Reservoir, FillPhaseAndZeroCapacity) {
    const auto samples = rayleigh_labeled(6, 2, 0);
    RandomStream rng(1, 0, StreamField::Reservoir);
    MemoryBuffer mem(4);
    for (std::size_t i = 0; i < 4; ++i) reservoir_update(mem, {samples[i], 0}, i + 1, rng);
    ASSERT_EQ(mem.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(mem.items()[i].sample.sample_id(), i);

    MemoryBuffer none(0);
    for (std::size_t i = 0; i < 6; ++i) reservoir_update(none, {samples[i], 0}, i + 1, rng);
    EXPECT_TRUE(none.empty());
}

TEST(Reservoir, InclusionIsUniform) {
    // Light version of the acceptance check: 2,000 items, capacity 50, 200 trials.
    const std::size_t n = 2000, m = 50, trials = 200;
    std::vector<int> hits(n, 0);
    LabeledSample proto = rayleigh_labeled(1, 1, 0).front();
    for (std::size_t trial = 0; trial < trials; ++trial) {
        RandomStream rng(trial, 0, StreamField::Reservoir);
        MemoryBuffer mem(m);
        for (std::size_t i = 0; i < n; ++i) {
            proto.channel.set_tags(0, i);
            reservoir_update(mem, {proto, 0}, i + 1, rng);
        }
        for (const auto& it : mem.items()) ++hits[it.sample.sample_id()];
    }
    // Pooled inclusion rate over early, middle, and late thirds of the stream.
    for (std::size_t part = 0; part < 3; ++part) {
        double sum = 0.0, cnt = 0.0;
        for (std::size_t i = part * n / 3; i < (part + 1) * n / 3; ++i) sum += hits[i], cnt += trials;
        const double p = double(m) / n;
        EXPECT_NEAR(sum / cnt, p, 3 * std::sqrt(p * (1 - p) / cnt));
    }
}

// ---------------------------------------------------------------------------
// Strategies

TEST(TrainOnBatch, JointAccumulates) {
    auto cfg = quick_config(Strategy::Joint, 0);
    auto state = fresh_state(2, cfg);
    const auto a = rayleigh_labeled(4, 2, 0);
    const auto b = rayleigh_labeled(6, 2, 4);
    train_on_batch(state, a, cfg, ProblemConfig::uniform(2));
    EXPECT_EQ(state.last_working_set_size, 4u);
    train_on_batch(state, b, cfg, ProblemConfig::uniform(2));
    EXPECT_EQ(state.last_working_set_size, 10u);
}

TEST(TrainOnBatch, EmptyMemoryMinMaxConfinesWeightsToBatch) {
    auto cfg = quick_config(Strategy::MinMaxBilevel, 0);
    auto state = fresh_state(2, cfg);
    const auto problem = ProblemConfig::uniform(2);
    for (std::uint64_t t = 0; t < 3; ++t) {
        const auto batch = rayleigh_labeled(5, 2, t * 5);
        train_on_batch(state, batch, cfg, problem);
        EXPECT_EQ(state.last_working_set_size, 5u);
        EXPECT_TRUE(state.memory.empty());
        EXPECT_TRUE(on_simplex(state.last_lambda));
        EXPECT_EQ(state.last_working_set_ids.front(), t * 5);
    }
}

TEST(TrainOnBatch, ReservoirWithoutEvictionMatchesJoint) {
    const auto problem = ProblemConfig::uniform(2);
    auto rcfg = quick_config(Strategy::Reservoir, 1000);
    auto jcfg = quick_config(Strategy::Joint, 0);
    auto rs = fresh_state(2, rcfg);
    auto js = fresh_state(2, jcfg);
    for (std::uint64_t t = 0; t < 3; ++t) {
        const auto batch = rayleigh_labeled(3 + t, 2, 100 * t);
        train_on_batch(rs, batch, rcfg, problem);
        train_on_batch(js, batch, jcfg, problem);
        auto a = rs.last_working_set_ids, b = js.last_working_set_ids;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        EXPECT_EQ(a, b) << "t = " << t;
    }
    EXPECT_EQ(rs.params.flatten(), js.params.flatten());
}

TEST(TrainOnBatch, MinMaxMemoryIsTopMOfFinalWeights) {
    auto cfg = quick_config(Strategy::MinMaxBilevel, 4);
    cfg.beta = 0.5;
    auto state = fresh_state(3, cfg);
    const auto problem = ProblemConfig::uniform(3);
    for (std::uint64_t t = 0; t < 4; ++t) {
        train_on_batch(state, rayleigh_labeled(6, 3, 10 * t), cfg, problem);
        ASSERT_LE(state.memory.size(), 4u);
        // Independent re-sort of (lambda, g) over the working set.
        std::vector<std::size_t> order(state.last_lambda.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
            if (state.last_lambda[a] != state.last_lambda[b]) return state.last_lambda[a] > state.last_lambda[b];
            return state.last_g[a] > state.last_g[b];
        });
        std::vector<std::uint64_t> expect, got;
        for (std::size_t i = 0; i < 4; ++i) expect.push_back(state.last_working_set_ids[order[i]]);
        for (const auto& m : state.memory.items()) got.push_back(m.sample.sample_id());
        std::sort(expect.begin(), expect.end());
        std::sort(got.begin(), got.end());
        EXPECT_EQ(got, expect);
    }
}

TEST(TrainOnBatch, SharedLossTrainsOnPerformance) {
    auto cfg = quick_config(Strategy::MinMaxShared, 3);
    auto state = fresh_state(2, cfg);
    const auto batch = rayleigh_labeled(5, 2, 0);
    train_on_batch(state, batch, cfg, ProblemConfig::uniform(2));
    EXPECT_LT(state.last_train_loss, 0.0);
    EXPECT_EQ(state.memory.size(), 3u);
}

TEST(TrainOnBatch, RejectsUnlabeledBatch) {
    auto cfg = quick_config(Strategy::Transfer, 0);
    auto state = fresh_state(2, cfg);
    auto batch = rayleigh_labeled(2, 2, 0);
    batch[1].label_power.clear();
    EXPECT_THROW(train_on_batch(state, batch, cfg, ProblemConfig::uniform(2)), DataError);
}

TEST(TrainOnBatch, DegenerateOracleSamplesGetZeroWeight) {
    auto cfg = quick_config(Strategy::MinMaxBilevel, 10);
    auto state = fresh_state(2, cfg);
    auto batch = rayleigh_labeled(3, 2, 0);
    batch[1].oracle_rate = 0.0;
    train_on_batch(state, batch, cfg, ProblemConfig::uniform(2));
    EXPECT_EQ(state.last_lambda[1], 0.0);
    EXPECT_TRUE(on_simplex(state.last_lambda));
}

// ---------------------------------------------------------------------------
// Streaming

TEST(RunStream, EmptyScheduleLeavesParamsUntouched) {
    EpisodeSchedule schedule;
    schedule.k_pairs = 2;
    schedule.batch_size = 4;
    auto cfg = quick_config(Strategy::MinMaxBilevel, 4);
    auto state = fresh_state(2, cfg);
    const auto before = state.params.flatten();
    int calls = 0;
    const auto steps = run_stream(generated_source(schedule, ProblemConfig::uniform(2), {}), state, cfg,
                                  ProblemConfig::uniform(2), {[&](const StreamContext&) { ++calls; }});
    EXPECT_EQ(steps, 0u);
    EXPECT_EQ(calls, 0);
    EXPECT_EQ(state.params.flatten(), before);
}

TEST(RunStream, ZeroStepSizeIsNoOp) {
    EpisodeSchedule schedule{{EpisodeSpec{EpisodeKind::Rayleigh, 10, 5, 6, 2}}, 2, 6, 3};
    auto cfg = quick_config(Strategy::Transfer, 0);
    cfg.alpha = 0.0;
    cfg.epochs = 1;
    auto state = fresh_state(2, cfg);
    const auto before = state.params.flatten();
    run_stream(generated_source(schedule, ProblemConfig::uniform(2), {}), state, cfg, ProblemConfig::uniform(2));
    EXPECT_EQ(state.params.flatten(), before);
}

TEST(RunStream, DeterministicAndBoundaryFree) {
    EpisodeSpec geo{EpisodeKind::Geometry, 10, 5, 6, 2};
    EpisodeSchedule schedule{{EpisodeSpec{EpisodeKind::Rayleigh, 10, 5, 6, 2}, geo}, 2, 4, 3};
    auto cfg = quick_config(Strategy::MinMaxBilevel, 3);
    auto run = [&] {
        auto state = fresh_state(2, cfg);
        std::vector<std::uint32_t> tags;
        std::vector<double> losses;
        run_stream(generated_source(schedule, ProblemConfig::uniform(2), {}), state, cfg, ProblemConfig::uniform(2),
                   {[&](const StreamContext& ctx) {
                       tags.push_back(ctx.batch_episode_id);
                       losses.push_back(ctx.state->last_train_loss);
                   }});
        return std::make_tuple(tags, losses, state.params.flatten());
    };
    const auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_EQ(std::get<0>(a), (std::vector<std::uint32_t>{0, 0, 1, 1}));
}

TEST(RunStream, ErrorsCarryTimestamp) {
    std::vector<std::vector<LabeledSample>> episodes{rayleigh_labeled(4, 2, 0)};
    episodes[0][3].label_power.clear();
    auto cfg = quick_config(Strategy::Transfer, 0);
    auto state = fresh_state(2, cfg);
    try {
        run_stream(dataset_source(episodes, 2), state, cfg, ProblemConfig::uniform(2));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("t=1"), std::string::npos) << e.what();
    }
}
