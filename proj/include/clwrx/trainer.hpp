#pragma once

// Continual-learning engine: the alternating projected gradient
// descent-ascent (PGDA) rounds over a working set, fairness-based memory
// selection, and the Transfer / Joint / Reservoir baselines.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clwrx/error.hpp"
#include "clwrx/losses.hpp"
#include "clwrx/memory.hpp"
#include "clwrx/policy.hpp"
#include "clwrx/rates.hpp"
#include "clwrx/rng.hpp"
#include "clwrx/simplex.hpp"
#include "clwrx/wmmse.hpp"

namespace clwrx {

enum class Strategy { MinMaxBilevel, MinMaxShared, Reservoir, Transfer, Joint };

inline constexpr Strategy kAllStrategies[] = {Strategy::MinMaxBilevel, Strategy::MinMaxShared, Strategy::Reservoir,
                                              Strategy::Transfer, Strategy::Joint};

inline std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::MinMaxBilevel: return "MinMaxBilevel";
        case Strategy::MinMaxShared: return "MinMaxShared";
        case Strategy::Reservoir: return "Reservoir";
        case Strategy::Transfer: return "Transfer";
        case Strategy::Joint: return "Joint";
    }
    return "unknown";
}

inline Strategy strategy_from_string(std::string_view s) {
    for (auto st : kAllStrategies)
        if (to_string(st) == s) return st;
    throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

inline bool is_minmax(Strategy s) { return s == Strategy::MinMaxBilevel || s == Strategy::MinMaxShared; }

struct TrainerConfig {
    Strategy strategy = Strategy::MinMaxBilevel;
    double alpha = 1e-3;  // model step size
    double beta = 1e-2;   // sample-weight step size
    int rounds = 20;      // PGDA rounds per epoch
    int epochs = 100;     // epochs per timestamp
    std::size_t memory_capacity = 2000;
    double momentum = 0.0;
    std::uint64_t seed = 0;
    double min_oracle_rate = kDefaultMinOracleRate;

    void validate() const {
        detail::require(std::isfinite(alpha) && alpha >= 0.0, "trainer: alpha must be >= 0");
        detail::require(std::isfinite(beta) && beta >= 0.0, "trainer: beta must be >= 0");
        detail::require(rounds >= 1, "trainer: rounds must be >= 1");
        detail::require(epochs >= 0, "trainer: epochs must be >= 0");
        detail::require(momentum >= 0.0 && momentum < 1.0, "trainer: momentum must be in [0, 1)");
    }
};

// ---------------------------------------------------------------------------
// Generic PGDA round

// A min-max game over a finite sample set. descend() takes one step on the
// lambda-weighted training loss; performance() returns the per-sample
// performance loss g at the current model.
template <class G>
concept MinMaxGame = requires(G& game, std::span<const double> lambda, double step) {
    { game.descend(lambda, step) };
    { game.performance() } -> std::convertible_to<std::vector<double>>;
};

// One alternating round: model descent with the current weights, then a
// projected ascent step on the weights. Inactive samples keep weight zero.
// Returns the performance losses used for the ascent.
template <MinMaxGame G>
std::vector<double> pgda_round(G& game, std::vector<double>& lambda, const std::vector<bool>& active, double alpha,
                               double beta) {
    game.descend(lambda, alpha);
    std::vector<double> g = game.performance();
    detail::require<DataError>(g.size() == lambda.size(), "pgda_round: performance vector size mismatch");
    if (beta > 0.0 && std::any_of(active.begin(), active.end(), [](bool a) { return a; })) {
        std::vector<double> shifted(lambda.size());
        for (std::size_t i = 0; i < lambda.size(); ++i) shifted[i] = active[i] ? lambda[i] + beta * g[i] : 0.0;
        lambda = project_simplex_masked(shifted, active);
    }
    return g;
}

// Uniform weights over the active entries (all entries when none is active).
inline std::vector<double> uniform_weights(const std::vector<bool>& active) {
    const auto n_active = static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
    std::vector<double> lambda(active.size(), 0.0);
    if (n_active == 0) {
        std::fill(lambda.begin(), lambda.end(), active.empty() ? 0.0 : 1.0 / static_cast<double>(active.size()));
        return lambda;
    }
    for (std::size_t i = 0; i < active.size(); ++i)
        if (active[i]) lambda[i] = 1.0 / static_cast<double>(n_active);
    return lambda;
}

// ---------------------------------------------------------------------------
// The policy network as a min-max game over a working set

enum class TrainLoss { Mse, Performance };

class PolicyGame {
public:
    PolicyGame(PolicyParams& params, MomentumState& momentum, const WorkingSet& ws, const FeatureNorm& norm,
               const ProblemConfig& cfg, TrainLoss loss, double min_oracle_rate)
        : params_(params), momentum_(momentum), ws_(ws), cfg_(cfg), loss_(loss), min_rate_(min_oracle_rate) {
        features_ = feature_matrix(std::span<const MemoryItem>(ws.items), norm,
                                   [](const MemoryItem& m) -> const ChannelSample& { return m.sample.channel; });
        const auto k = static_cast<Eigen::Index>(params.output_dim());
        labels_.resize(k, static_cast<Eigen::Index>(ws.size()));
        for (std::size_t i = 0; i < ws.size(); ++i) {
            const auto& lp = ws.sample(i).label_power;
            if (lp.size() != params.output_dim())
                throw DataError("train: sample " + std::to_string(ws.sample(i).sample_id()) + " is not labeled");
            for (Eigen::Index r = 0; r < k; ++r) labels_(r, static_cast<Eigen::Index>(i)) = lp[static_cast<std::size_t>(r)];
        }
    }

    std::size_t size() const noexcept { return ws_.size(); }

    void descend(std::span<const double> lambda, double step) {
        refresh();
        const auto& out = output_;
        Eigen::MatrixXd out_grad = Eigen::MatrixXd::Zero(out.rows(), out.cols());
        double loss = 0.0;
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            const double w = lambda[static_cast<std::size_t>(c)];
            if (w == 0.0) continue;
            const auto& sample = ws_.sample(static_cast<std::size_t>(c));
            const auto pred = column(c);
            if (loss_ == TrainLoss::Mse) {
                const auto l = mse_loss(pred, sample.label_power);
                loss += w * l.value;
                for (Eigen::Index r = 0; r < out.rows(); ++r) out_grad(r, c) = w * l.grad[static_cast<std::size_t>(r)];
            } else {
                const auto l = perf_loss_with_grad(pred, sample, cfg_, min_rate_);
                if (!l) continue;
                loss += w * l->value;
                for (Eigen::Index r = 0; r < out.rows(); ++r) out_grad(r, c) = w * l->grad[static_cast<std::size_t>(r)];
            }
            if (!std::isfinite(loss))
                throw TrainingAbort("non-finite training loss at sample " + std::to_string(sample.sample_id()));
        }
        last_loss_ = loss;
        auto grad = backward(params_, cache_, out_grad);
        if (!grad.finite()) throw TrainingAbort("non-finite policy gradient");
        apply_update(params_, grad, step, &momentum_);
    }

    // perf_loss_g per sample at the current parameters; excluded samples get 0.
    std::vector<double> performance() {
        refresh();
        std::vector<double> g(ws_.size(), 0.0);
        for (std::size_t i = 0; i < ws_.size(); ++i) {
            const auto v = perf_loss_g(column(static_cast<Eigen::Index>(i)), ws_.sample(i), cfg_, min_rate_);
            if (v) {
                if (!std::isfinite(*v))
                    throw TrainingAbort("non-finite performance loss at sample " +
                                        std::to_string(ws_.sample(i).sample_id()));
                g[i] = *v;
            }
        }
        return g;
    }

    // Weighted training loss evaluated at the start of the last descent step.
    double last_loss() const noexcept { return last_loss_; }

private:
    void refresh() {
        if (have_output_ && cache_.revision == params_.revision() && cache_.owner == &params_) return;
        auto [out, cache] = forward(params_, features_);
        output_ = std::move(out);
        cache_ = std::move(cache);
        have_output_ = true;
    }

    std::vector<double> column(Eigen::Index c) const {
        std::vector<double> p(static_cast<std::size_t>(output_.rows()));
        for (Eigen::Index r = 0; r < output_.rows(); ++r)
            p[static_cast<std::size_t>(r)] = std::min(output_(r, c), params_.p_max());
        return p;
    }

    PolicyParams& params_;
    MomentumState& momentum_;
    const WorkingSet& ws_;
    const ProblemConfig& cfg_;
    TrainLoss loss_;
    double min_rate_;
    Eigen::MatrixXd features_;
    Eigen::MatrixXd labels_;
    Eigen::MatrixXd output_;
    ForwardCache cache_;
    bool have_output_ = false;
    double last_loss_ = 0.0;
};

// ---------------------------------------------------------------------------
// Trainer state and per-batch dispatch

struct TrainerState {
    PolicyParams params;
    FeatureNorm norm;
    MomentumState momentum;
    MemoryBuffer memory;
    std::vector<LabeledSample> joint_store;  // Joint only: every sample seen so far
    RandomStream reservoir_rng{0, 0, StreamField::Reservoir};
    std::uint64_t seen = 0;  // samples observed so far
    std::size_t t = 0;       // timestamps processed

    // Diagnostics of the last timestamp.
    double last_train_loss = 0.0;
    std::size_t last_working_set_size = 0;
    std::vector<std::uint64_t> last_working_set_ids;
    std::vector<double> last_lambda;
    std::vector<double> last_g;

    static TrainerState create(PolicyParams params, FeatureNorm norm, const TrainerConfig& cfg) {
        TrainerState s;
        s.params = std::move(params);
        s.norm = std::move(norm);
        s.momentum.momentum = cfg.momentum;
        s.memory = MemoryBuffer(cfg.memory_capacity);
        s.reservoir_rng = RandomStream(cfg.seed, 0, StreamField::Reservoir);
        return s;
    }
};

inline void train_on_batch(TrainerState& state, std::span<const LabeledSample> batch, const TrainerConfig& cfg,
                           const ProblemConfig& problem) {
    cfg.validate();
    for (const auto& s : batch)
        if (s.label_power.size() != s.channel.k_pairs())
            throw DataError("train: sample " + std::to_string(s.sample_id()) + " is not labeled");

    const std::size_t t = state.t;
    WorkingSet ws;
    switch (cfg.strategy) {
        case Strategy::Transfer: ws = WorkingSet::build(MemoryBuffer(0), batch, t); break;
        case Strategy::Joint:
            state.joint_store.insert(state.joint_store.end(), batch.begin(), batch.end());
            ws = WorkingSet::build(MemoryBuffer(0), state.joint_store, t);
            break;
        case Strategy::Reservoir:
        case Strategy::MinMaxBilevel:
        case Strategy::MinMaxShared: ws = WorkingSet::build(state.memory, batch, t); break;
    }

    const bool minmax = is_minmax(cfg.strategy);
    std::vector<bool> active(ws.size(), true);
    if (minmax)
        for (std::size_t i = 0; i < ws.size(); ++i) active[i] = has_valid_oracle(ws.sample(i), cfg.min_oracle_rate);

    // Sample weights restart uniform at every timestamp.
    std::vector<double> lambda = minmax ? uniform_weights(active) : std::vector<double>(ws.size(), 0.0);
    if (!minmax && !ws.items.empty()) std::fill(lambda.begin(), lambda.end(), 1.0 / static_cast<double>(ws.size()));

    std::vector<double> g(ws.size(), 0.0);
    double loss = 0.0;
    if (!ws.items.empty()) {
        const TrainLoss train_loss = cfg.strategy == Strategy::MinMaxShared ? TrainLoss::Performance : TrainLoss::Mse;
        PolicyGame game(state.params, state.momentum, ws, state.norm, problem, train_loss, cfg.min_oracle_rate);
        const long total_rounds = static_cast<long>(cfg.epochs) * cfg.rounds;
        for (long r = 0; r < total_rounds; ++r) {
            if (minmax)
                g = pgda_round(game, lambda, active, cfg.alpha, cfg.beta);
            else
                game.descend(lambda, cfg.alpha);
        }
        loss = game.last_loss();
        if (minmax && total_rounds == 0) g = game.performance();
    }

    if (minmax) {
        state.memory = update_memory_topM(lambda, ws, cfg.memory_capacity, g);
    } else if (cfg.strategy == Strategy::Reservoir) {
        std::vector<const LabeledSample*> sorted;
        for (const auto& s : batch) sorted.push_back(&s);
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const auto* a, const auto* b) { return a->sample_id() < b->sample_id(); });
        for (const auto* s : sorted) {
            ++state.seen;
            reservoir_update(state.memory, MemoryItem{*s, t}, state.seen, state.reservoir_rng);
        }
    }
    if (cfg.strategy != Strategy::Reservoir) state.seen += batch.size();

    state.last_train_loss = loss;
    state.last_working_set_size = ws.size();
    state.last_working_set_ids.clear();
    for (const auto& item : ws.items) state.last_working_set_ids.push_back(item.sample.sample_id());
    state.last_lambda = std::move(lambda);
    state.last_g = std::move(g);
    ++state.t;
}

// ---------------------------------------------------------------------------
// Streaming driver

struct StreamContext {
    std::size_t t = 0;  // timestamp just completed, 0-based
    std::uint32_t batch_episode_id = 0;
    std::size_t batch_size = 0;
    std::uint64_t samples_seen = 0;
    const TrainerState* state = nullptr;
};

using EvalHook = std::function<void(const StreamContext&)>;
using LabeledBatchSource = std::function<std::optional<std::vector<LabeledSample>>()>;

// Pulls batches until the source is exhausted, training on each and invoking
// the hooks after every timestamp. The trainer never sees episode boundaries;
// the batch episode tag is only forwarded to the hooks for logging.
inline std::size_t run_stream(const LabeledBatchSource& source, TrainerState& state, const TrainerConfig& cfg,
                              const ProblemConfig& problem, const std::vector<EvalHook>& hooks = {}) {
    std::size_t steps = 0;
    while (auto batch = source()) {
        if (batch->empty()) continue;
        const std::size_t t = state.t;
        try {
            train_on_batch(state, *batch, cfg, problem);
            StreamContext ctx{t, batch->front().episode_id(), batch->size(), state.seen, &state};
            for (const auto& hook : hooks) hook(ctx);
        } catch (const TrainingAbort& e) {
            throw TrainingAbort("t=" + std::to_string(t) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("t=" + std::to_string(t) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("t=" + std::to_string(t) + ": " + e.what());
        }
        ++steps;
    }
    return steps;
}

// Source over the generator stream: next_batch then WMMSE labeling.
inline LabeledBatchSource generated_source(const EpisodeSchedule& schedule, const ProblemConfig& problem,
                                           const WmmseOptions& wmmse) {
    return [schedule, problem, wmmse, cursor = StreamCursor{}]() mutable -> std::optional<std::vector<LabeledSample>> {
        auto batch = next_batch(schedule, cursor);
        if (!batch) return std::nullopt;
        return label_batch(*batch, problem, wmmse);
    };
}

// Source over pre-labeled per-episode training sets, batched exactly as
// next_batch batches the generator stream.
inline LabeledBatchSource dataset_source(std::vector<std::vector<LabeledSample>> episodes, std::size_t batch_size) {
    detail::require(batch_size >= 1, "dataset_source: batch_size must be >= 1");
    return [episodes = std::move(episodes), batch_size, e = std::size_t{0},
            off = std::size_t{0}]() mutable -> std::optional<std::vector<LabeledSample>> {
        while (e < episodes.size() && off >= episodes[e].size()) {
            ++e;
            off = 0;
        }
        if (e >= episodes.size()) return std::nullopt;
        const std::size_t n = std::min(batch_size, episodes[e].size() - off);
        std::vector<LabeledSample> batch(episodes[e].begin() + static_cast<std::ptrdiff_t>(off),
                                         episodes[e].begin() + static_cast<std::ptrdiff_t>(off + n));
        off += n;
        return batch;
    };
}

}  // namespace clwrx
