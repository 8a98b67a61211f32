#pragma once

// Experiment configuration and the generate / label / train / eval / report
// pipeline used by the clwrx command-line tool.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clwrx/channel.hpp"
#include "clwrx/dataset_io.hpp"
#include "clwrx/error.hpp"
#include "clwrx/eval.hpp"
#include "clwrx/hash.hpp"
#include "clwrx/parallel.hpp"
#include "clwrx/policy.hpp"
#include "clwrx/trainer.hpp"
#include "clwrx/wmmse.hpp"

#ifndef CLWRX_VERSION
#define CLWRX_VERSION "0.0.0"
#endif

namespace clwrx {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = CLWRX_VERSION;

struct EpisodeConfig {
    EpisodeSpec spec;
    // Optional external CLWX files substituted for the generated sets.
    std::string import_train;
    std::string import_test;
};

struct EvalConfig {
    std::size_t every = 1;  // evaluate after every n-th batch and after the last one
    double hist_lo = 0.0;
    double hist_hi = 1.5;
    std::size_t hist_bins = 50;

    std::vector<double> edges() const { return uniform_edges(hist_lo, hist_hi, hist_bins); }
};

struct ExperimentConfig {
    std::string name = "custom";
    std::uint64_t seed = 0;
    std::size_t k_pairs = 10;
    std::size_t batch_size = 1;
    std::vector<EpisodeConfig> episodes;
    double p_max = 1.0;
    std::vector<double> sigma2;        // empty: 1.0 for every user
    std::vector<double> user_weights;  // empty: 1.0 for every user
    WmmseOptions wmmse;
    std::vector<std::size_t> hidden{200, 200};
    TrainerConfig trainer;
    std::map<std::string, json> strategy_overrides;
    std::vector<Strategy> strategies{std::begin(kAllStrategies), std::end(kAllStrategies)};
    EvalConfig eval;
    std::string out_dir = "out";
    std::string data_dir;  // empty: <out_dir>/data

    // Directory that relative paths resolve against; not serialized.
    fs::path base_dir = fs::current_path();

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
    fs::path out_path() const { return resolve(out_dir); }
    fs::path data_path() const { return data_dir.empty() ? out_path() / "data" : resolve(data_dir); }
    fs::path run_path(Strategy s) const { return out_path() / "runs" / std::string(to_string(s)); }
    fs::path report_path() const { return out_path() / "report"; }

    EpisodeSchedule schedule() const {
        EpisodeSchedule s;
        for (const auto& e : episodes) s.episodes.push_back(e.spec);
        s.k_pairs = k_pairs;
        s.batch_size = batch_size;
        s.seed = seed;
        return s;
    }

    ProblemConfig problem() const {
        ProblemConfig p = ProblemConfig::uniform(k_pairs, p_max);
        if (!sigma2.empty()) p.sigma2 = sigma2;
        if (!user_weights.empty()) p.user_weights = user_weights;
        return p;
    }

    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> d{k_pairs * k_pairs};
        d.insert(d.end(), hidden.begin(), hidden.end());
        d.push_back(k_pairs);
        return d;
    }

    std::uint64_t init_seed() const { return splitmix64(seed ^ 0x5EED'1417'0000'0001ULL); }

    WmmseOptions wmmse_options() const {
        WmmseOptions o = wmmse;
        o.start_seed = seed;
        o.record_trace = false;
        return o;
    }

    TrainerConfig trainer_for(Strategy s) const;

    void validate() const {
        detail::require(!episodes.empty(), "config: at least one episode is required");
        detail::require(!strategies.empty(), "config: at least one strategy is required");
        for (std::size_t h : hidden) detail::require(h >= 1, "config: hidden sizes must be >= 1");
        detail::require(eval.every >= 1, "config: eval.every must be >= 1");
        detail::require(eval.hist_bins >= 1 && eval.hist_hi > eval.hist_lo, "config: invalid histogram bins");
        detail::require(wmmse.tol > 0.0 && wmmse.max_iters >= 1 && wmmse.random_starts >= 0,
                        "config: invalid wmmse settings");
        schedule().validate();
        problem().validate(k_pairs);
        for (auto s : strategies) trainer_for(s).validate();
    }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: field '") + key + "': " + e.what());
    }
}

inline std::vector<double> per_user(const json& j, const char* key, std::size_t k) {
    if (!j.contains(key)) return {};
    const auto& v = j.at(key);
    if (v.is_number()) return std::vector<double>(k, v.get<double>());
    try {
        return v.get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: field '") + key + "': " + e.what());
    }
}

inline json trainer_json(const TrainerConfig& t) {
    return json{{"alpha", t.alpha},           {"beta", t.beta},
                {"rounds", t.rounds},         {"epochs", t.epochs},
                {"memory_capacity", t.memory_capacity}, {"momentum", t.momentum},
                {"min_oracle_rate", t.min_oracle_rate}};
}

inline void apply_trainer_json(TrainerConfig& t, const json& j) {
    if (!j.is_object()) throw ConfigError("config: trainer settings must be an object");
    t.alpha = get_or(j, "alpha", t.alpha);
    t.beta = get_or(j, "beta", t.beta);
    t.rounds = get_or(j, "rounds", t.rounds);
    t.epochs = get_or(j, "epochs", t.epochs);
    t.memory_capacity = get_or(j, "memory_capacity", t.memory_capacity);
    t.momentum = get_or(j, "momentum", t.momentum);
    t.min_oracle_rate = get_or(j, "min_oracle_rate", t.min_oracle_rate);
}

}  // namespace detail

inline TrainerConfig ExperimentConfig::trainer_for(Strategy s) const {
    TrainerConfig t = trainer;
    t.strategy = s;
    t.seed = seed;
    if (auto it = strategy_overrides.find(std::string(to_string(s))); it != strategy_overrides.end())
        detail::apply_trainer_json(t, it->second);
    return t;
}

inline json to_json(const ExperimentConfig& c) {
    json eps = json::array();
    for (const auto& e : c.episodes) {
        json je{{"kind", std::string(to_string(e.spec.kind))}, {"n_train", e.spec.n_train}, {"n_test", e.spec.n_test}};
        if (e.spec.kind == EpisodeKind::Geometry) je["area_side"] = e.spec.area_side;
        if (e.spec.kind == EpisodeKind::DiagBoost) je["boost_factor"] = e.spec.boost_factor;
        if (!e.import_train.empty()) je["import_train"] = e.import_train;
        if (!e.import_test.empty()) je["import_test"] = e.import_test;
        eps.push_back(std::move(je));
    }
    json strategies = json::array();
    for (auto s : c.strategies) strategies.push_back(std::string(to_string(s)));
    json overrides = json::object();
    for (const auto& [k, v] : c.strategy_overrides) overrides[k] = v;
    const auto prob = c.problem();
    json j{{"name", c.name},
           {"seed", c.seed},
           {"schedule", {{"k_pairs", c.k_pairs}, {"batch_size", c.batch_size}, {"episodes", eps}}},
           {"problem", {{"p_max", c.p_max}, {"sigma2", prob.sigma2}, {"user_weights", prob.user_weights}}},
           {"wmmse",
            {{"tol", c.wmmse.tol}, {"max_iters", c.wmmse.max_iters}, {"random_starts", c.wmmse.random_starts}}},
           {"policy", {{"hidden", c.hidden}}},
           {"trainer", detail::trainer_json(c.trainer)},
           {"strategy_overrides", overrides},
           {"strategies", strategies},
           {"eval",
            {{"every", c.eval.every},
             {"hist_lo", c.eval.hist_lo},
             {"hist_hi", c.eval.hist_hi},
             {"hist_bins", c.eval.hist_bins}}},
           {"out_dir", c.out_dir}};
    if (!c.data_dir.empty()) j["data_dir"] = c.data_dir;
    return j;
}

json recipe_json(std::string_view name);

inline ExperimentConfig config_from_json(json j, const fs::path& base_dir = fs::current_path()) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (j.contains("recipe")) {
        json base = recipe_json(detail::get_or<std::string>(j, "recipe", ""));
        json patch = j;
        patch.erase("recipe");
        base.merge_patch(patch);
        j = std::move(base);
    }

    ExperimentConfig c;
    c.base_dir = base_dir;
    c.name = detail::get_or<std::string>(j, "name", c.name);
    c.seed = detail::get_or(j, "seed", c.seed);

    const json sched = j.value("schedule", json::object());
    c.k_pairs = detail::get_or(sched, "k_pairs", c.k_pairs);
    c.batch_size = detail::get_or(sched, "batch_size", c.batch_size);
    if (sched.contains("episodes")) {
        if (!sched.at("episodes").is_array()) throw ConfigError("config: schedule.episodes must be an array");
        for (const auto& je : sched.at("episodes")) {
            EpisodeConfig e;
            e.spec.kind = episode_kind_from_string(detail::get_or<std::string>(je, "kind", "rayleigh"));
            e.spec.n_train = detail::get_or(je, "n_train", e.spec.n_train);
            e.spec.n_test = detail::get_or(je, "n_test", e.spec.n_test);
            e.spec.area_side = detail::get_or(je, "area_side", e.spec.area_side);
            e.spec.boost_factor = detail::get_or(je, "boost_factor", e.spec.boost_factor);
            e.import_train = detail::get_or<std::string>(je, "import_train", "");
            e.import_test = detail::get_or<std::string>(je, "import_test", "");
            c.episodes.push_back(std::move(e));
        }
    }

    const json prob = j.value("problem", json::object());
    c.p_max = detail::get_or(prob, "p_max", c.p_max);
    c.sigma2 = detail::per_user(prob, "sigma2", c.k_pairs);
    c.user_weights = detail::per_user(prob, "user_weights", c.k_pairs);

    const json wm = j.value("wmmse", json::object());
    c.wmmse.tol = detail::get_or(wm, "tol", c.wmmse.tol);
    c.wmmse.max_iters = detail::get_or(wm, "max_iters", c.wmmse.max_iters);
    c.wmmse.random_starts = detail::get_or(wm, "random_starts", c.wmmse.random_starts);

    const json pol = j.value("policy", json::object());
    c.hidden = detail::get_or(pol, "hidden", c.hidden);

    if (j.contains("trainer")) detail::apply_trainer_json(c.trainer, j.at("trainer"));
    if (j.contains("strategy_overrides")) {
        const auto& ov = j.at("strategy_overrides");
        if (!ov.is_object()) throw ConfigError("config: strategy_overrides must be an object");
        for (const auto& [k, v] : ov.items()) {
            strategy_from_string(k);
            if (!v.is_object()) throw ConfigError("config: strategy_overrides." + k + " must be an object");
            c.strategy_overrides[k] = v;
        }
    }
    if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& s : detail::get_or<std::vector<std::string>>(j, "strategies", {}))
            c.strategies.push_back(strategy_from_string(s));
    }

    const json ev = j.value("eval", json::object());
    c.eval.every = detail::get_or(ev, "every", c.eval.every);
    c.eval.hist_lo = detail::get_or(ev, "hist_lo", c.eval.hist_lo);
    c.eval.hist_hi = detail::get_or(ev, "hist_hi", c.eval.hist_hi);
    c.eval.hist_bins = detail::get_or(ev, "hist_bins", c.eval.hist_bins);

    c.out_dir = detail::get_or<std::string>(j, "out_dir", c.out_dir);
    c.data_dir = detail::get_or<std::string>(j, "data_dir", "");
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return config_from_json(std::move(j), fs::absolute(path).parent_path());
}

inline std::vector<std::string> recipe_names() { return {"desk", "paper-fig3", "paper-unbalanced"}; }

inline json recipe_json(std::string_view name) {
    const auto four = [](std::size_t n_train, std::size_t n_test) {
        return json::array({{{"kind", "rayleigh"}, {"n_train", n_train}, {"n_test", n_test}},
                            {{"kind", "rician"}, {"n_train", n_train}, {"n_test", n_test}},
                            {{"kind", "geometry"}, {"area_side", 10.0}, {"n_train", n_train}, {"n_test", n_test}},
                            {{"kind", "geometry"}, {"area_side", 50.0}, {"n_train", n_train}, {"n_test", n_test}}});
    };
    if (name == "desk")
        return json{{"name", "desk"},
                    {"seed", 1},
                    {"schedule", {{"k_pairs", 5}, {"batch_size", 500}, {"episodes", four(2000, 500)}}},
                    {"policy", {{"hidden", {64, 64}}}},
                    {"trainer",
                     {{"alpha", 0.02},
                      {"beta", 1e-4},
                      {"rounds", 20},
                      {"epochs", 10},
                      {"memory_capacity", 200},
                      {"momentum", 0.9}}}};
    if (name == "paper-fig3")
        return json{{"name", "paper-fig3"},
                    {"seed", 1},
                    {"schedule", {{"k_pairs", 10}, {"batch_size", 5000}, {"episodes", four(20000, 1000)}}},
                    {"policy", {{"hidden", {200, 200}}}},
                    {"trainer",
                     {{"alpha", 1e-3}, {"beta", 1e-2}, {"rounds", 20}, {"epochs", 100}, {"memory_capacity", 2000}}}};
    if (name == "paper-unbalanced")
        return json{
            {"name", "paper-unbalanced"},
            {"seed", 1},
            {"schedule",
             {{"k_pairs", 10},
              {"batch_size", 2000},
              {"episodes", json::array({{{"kind", "rayleigh"}, {"n_train", 2000}, {"n_test", 1000}},
                                        {{"kind", "diag_boost"}, {"boost_factor", 5.0}, {"n_train", 18000},
                                         {"n_test", 1000}}})}}},
            {"policy", {{"hidden", {200, 200}}}},
            {"trainer",
             {{"alpha", 1e-3}, {"beta", 1e-2}, {"rounds", 20}, {"epochs", 100}, {"memory_capacity", 100}}}};
    throw ConfigError("unknown recipe '" + std::string(name) + "'");
}

inline ExperimentConfig recipe(std::string_view name, const fs::path& base_dir = fs::current_path()) {
    return config_from_json(recipe_json(name), base_dir);
}

// ---------------------------------------------------------------------------
// Dataset files

inline fs::path train_file(const ExperimentConfig& c, std::size_t e, bool labeled) {
    return c.data_path() / ("episode_" + std::to_string(e) + (labeled ? "_train.labeled.clwx" : "_train.clwx"));
}
inline fs::path test_file(const ExperimentConfig& c, std::size_t e, bool labeled) {
    return c.data_path() / ("episode_" + std::to_string(e) + (labeled ? "_test.labeled.clwx" : "_test.clwx"));
}

namespace detail {

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw DataError("write failed for '" + path.string() + "'");
}

inline std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Imported files must hold channels of the configured size; the samples are
// re-tagged with the episode they stand in for.
inline std::vector<ChannelSample> import_channels(const fs::path& path, const ExperimentConfig& c, std::size_t e) {
    const Dataset ds = read_dataset_file(path);
    if (ds.header.k_pairs != c.k_pairs)
        throw DataError(path.string() + ": 'K' is " + std::to_string(ds.header.k_pairs) + ", config expects " +
                        std::to_string(c.k_pairs));
    std::vector<ChannelSample> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        ChannelSample ch = s.channel;
        ch.set_tags(static_cast<std::uint32_t>(e), ch.sample_id());
        out.push_back(std::move(ch));
    }
    return out;
}

}  // namespace detail

struct GenerateSummary {
    std::vector<std::size_t> train_counts;
    std::vector<std::size_t> test_counts;
};

inline GenerateSummary cmd_generate(const ExperimentConfig& c) {
    c.validate();
    fs::create_directories(c.data_path());
    const auto sched = c.schedule();
    GenerateSummary out;
    for (std::size_t e = 0; e < c.episodes.size(); ++e) {
        const auto& ep = c.episodes[e];
        const auto train = ep.import_train.empty() ? train_set(sched, e)
                                                   : detail::import_channels(c.resolve(ep.import_train), c, e);
        const auto test = ep.import_test.empty() ? test_set(sched, e)
                                                 : detail::import_channels(c.resolve(ep.import_test), c, e);
        if (test.empty()) throw DataError("episode " + std::to_string(e) + ": empty test set");
        write_dataset_file(train_file(c, e, false), std::span<const ChannelSample>(train));
        write_dataset_file(test_file(c, e, false), std::span<const ChannelSample>(test));
        out.train_counts.push_back(train.size());
        out.test_counts.push_back(test.size());
    }
    return out;
}

struct LabelSummary {
    std::vector<double> train_mean_rate;
    std::vector<double> test_mean_rate;
};

inline std::vector<LabeledSample> label_file(const fs::path& in, const fs::path& out, const ExperimentConfig& c) {
    const Dataset ds = read_dataset_file(in);
    if (ds.header.k_pairs != c.k_pairs)
        throw DataError(in.string() + ": 'K' is " + std::to_string(ds.header.k_pairs) + ", config expects " +
                        std::to_string(c.k_pairs));
    const auto channels = ds.channels();
    auto labeled = label_batch(channels, c.problem(), c.wmmse_options());
    write_dataset_file(out, std::span<const LabeledSample>(labeled));
    return labeled;
}

inline double mean_oracle_rate(std::span<const LabeledSample> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& x : xs) s += x.oracle_rate;
    return s / static_cast<double>(xs.size());
}

inline LabelSummary cmd_label(const ExperimentConfig& c) {
    c.validate();
    LabelSummary out;
    for (std::size_t e = 0; e < c.episodes.size(); ++e) {
        const auto tr = label_file(train_file(c, e, false), train_file(c, e, true), c);
        const auto te = label_file(test_file(c, e, false), test_file(c, e, true), c);
        out.train_mean_rate.push_back(mean_oracle_rate(tr));
        out.test_mean_rate.push_back(mean_oracle_rate(te));
    }
    return out;
}

struct LabeledData {
    std::vector<std::vector<LabeledSample>> train;
    std::vector<LabeledTestSet> test;
};

inline LabeledData load_labeled(const ExperimentConfig& c) {
    LabeledData d;
    for (std::size_t e = 0; e < c.episodes.size(); ++e) {
        for (int which = 0; which < 2; ++which) {
            const auto path = which == 0 ? train_file(c, e, true) : test_file(c, e, true);
            Dataset ds = read_dataset_file(path);
            if (!ds.labeled()) throw DataError(path.string() + ": 'flags' does not mark the dataset as labeled");
            if (ds.header.k_pairs != c.k_pairs)
                throw DataError(path.string() + ": 'K' does not match the config");
            if (which == 0)
                d.train.push_back(std::move(ds.samples));
            else
                d.test.push_back(LabeledTestSet{static_cast<std::uint32_t>(e), std::move(ds.samples)});
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Training runs

namespace detail {

inline std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

inline std::string metrics_header(std::size_t n_episodes) {
    std::string h = "t,strategy,episode_id_of_batch,samples_seen,train_loss";
    for (std::size_t e = 0; e < n_episodes; ++e) h += ",rate_ep" + std::to_string(e);
    for (std::size_t e = 0; e < n_episodes; ++e) h += ",ratio_ep" + std::to_string(e);
    h += ",mixture_rate,mixture_ratio";
    for (std::size_t e = 0; e < n_episodes; ++e) h += ",mem_ep" + std::to_string(e);
    return h + "\n";
}

inline std::string metrics_row(const StreamContext& ctx, Strategy s, const EvalReport& r, std::size_t n_episodes) {
    std::ostringstream os;
    os << ctx.t << ',' << to_string(s) << ',' << ctx.batch_episode_id << ',' << ctx.samples_seen << ','
       << fmt(ctx.state->last_train_loss);
    for (const auto& ep : r.episodes) os << ',' << fmt(ep.mean_rate);
    for (const auto& ep : r.episodes) os << ',' << fmt(ep.mean_ratio);
    os << ',' << fmt(r.mixture_rate) << ',' << fmt(r.mixture_ratio);
    const auto comp = ctx.state->memory.episode_composition();
    for (std::size_t e = 0; e < n_episodes; ++e) {
        const auto it = comp.find(static_cast<std::uint32_t>(e));
        os << ',' << (it == comp.end() ? 0 : it->second);
    }
    os << '\n';
    return os.str();
}

inline std::string eval_rows(std::size_t t, const EvalReport& r) {
    std::ostringstream os;
    for (const auto& ep : r.episodes)
        os << t << ",ep" << ep.episode_id << ',' << ep.count << ',' << fmt(ep.mean_rate) << ',' << fmt(ep.mean_ratio)
           << '\n';
    os << t << ",mixture," << r.mixture_count << ',' << fmt(r.mixture_rate) << ',' << fmt(r.mixture_ratio) << '\n';
    return os.str();
}

inline std::string histogram_csv(const Histogram& h) {
    std::ostringstream os;
    os << "bin_lo,bin_hi,count,pdf,cdf\n";
    std::size_t total = 0;
    for (auto n : h.counts) total += n;
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        os << fmt(h.edges[b]) << ',' << fmt(h.edges[b + 1]) << ',' << h.counts[b] << ','
           << fmt(total ? static_cast<double>(h.counts[b]) / static_cast<double>(total) : 0.0) << ','
           << fmt(h.cdf[b + 1]) << '\n';
    return os.str();
}

inline json report_json(const EvalReport& r) {
    json eps = json::array();
    for (const auto& ep : r.episodes)
        eps.push_back({{"episode_id", ep.episode_id},
                       {"count", ep.count},
                       {"mean_rate", ep.mean_rate},
                       {"mean_ratio", ep.mean_ratio}});
    return json{{"t", r.t},
                {"episodes", eps},
                {"mixture", {{"count", r.mixture_count}, {"mean_rate", r.mixture_rate}, {"mean_ratio", r.mixture_ratio}}},
                {"excluded", r.excluded},
                {"histogram", {{"edges", r.histogram.edges}, {"counts", r.histogram.counts}, {"cdf", r.histogram.cdf}}}};
}

}  // namespace detail

inline std::string schedule_fingerprint(const ExperimentConfig& c) {
    const json j = to_json(c);
    const std::string s = json{{"seed", c.seed}, {"schedule", j.at("schedule")}}.dump();
    Fnv1a h;
    h.update(s.data(), s.size());
    return h.hex();
}

inline json make_manifest(const ExperimentConfig& c, Strategy s) {
    ExperimentConfig abs = c;
    abs.out_dir = c.out_path().string();
    abs.data_dir = c.data_path().string();
    for (auto& e : abs.episodes) {
        if (!e.import_train.empty()) e.import_train = c.resolve(e.import_train).string();
        if (!e.import_test.empty()) e.import_test = c.resolve(e.import_test).string();
    }
    json hashes = json::object();
    for (std::size_t e = 0; e < c.episodes.size(); ++e) {
        hashes[train_file(c, e, true).filename().string()] = file_hash(train_file(c, e, true));
        hashes[test_file(c, e, true).filename().string()] = file_hash(test_file(c, e, true));
    }
    const auto wm = c.wmmse_options();
    return json{{"version", kVersion},
                {"strategy", std::string(to_string(s))},
                {"config", to_json(abs)},
                {"trainer", detail::trainer_json(c.trainer_for(s))},
                {"seeds", {{"master", c.seed}, {"policy_init", c.init_seed()}, {"reservoir", c.seed}, {"wmmse_start", wm.start_seed}}},
                {"layer_dims", c.layer_dims()},
                {"generator", {{"id", kGeneratorId}, {"name", kGeneratorName}}},
                {"wmmse",
                 {{"tol", wm.tol},
                  {"max_iters", wm.max_iters},
                  {"random_starts", wm.random_starts},
                  {"start_seed", wm.start_seed}}},
                {"dataset_hashes", hashes},
                {"schedule_fingerprint", schedule_fingerprint(c)},
                {"status", "running"}};
}

// Config reconstructed from a run manifest, for replays.
inline ExperimentConfig config_from_manifest(const fs::path& manifest_path) {
    json m;
    try {
        m = json::parse(detail::read_text_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw ConfigError(manifest_path.string() + ": " + e.what());
    }
    if (!m.contains("config")) throw ConfigError(manifest_path.string() + ": missing 'config'");
    return config_from_json(m.at("config"), manifest_path.parent_path());
}

struct RunResult {
    Strategy strategy = Strategy::Transfer;
    bool aborted = false;
    std::string abort_cause;
    std::optional<EvalReport> final_report;
    std::size_t steps = 0;
};

// Normalization statistics come from the first batch of the stream, the only
// data available before any training.
inline FeatureNorm initial_feature_norm(const LabeledData& d, std::size_t batch_size) {
    for (const auto& ep : d.train)
        if (!ep.empty()) {
            const std::size_t n = std::min(batch_size, ep.size());
            std::vector<ChannelSample> ch;
            for (std::size_t i = 0; i < n; ++i) ch.push_back(ep[i].channel);
            return fit_feature_norm(ch);
        }
    return FeatureNorm::identity(0);
}

inline RunResult run_strategy(const ExperimentConfig& c, Strategy s, const LabeledData& data,
                              const PolicyParams& init, const FeatureNorm& norm) {
    const fs::path dir = c.run_path(s);
    fs::create_directories(dir);
    json manifest = make_manifest(c, s);
    const fs::path manifest_path = dir / "manifest.json";
    detail::write_text_file(manifest_path, manifest.dump(2) + "\n");

    const TrainerConfig tc = c.trainer_for(s);
    const ProblemConfig prob = c.problem();
    const auto edges = c.eval.edges();
    const std::size_t n_ep = c.episodes.size();
    const std::size_t total_batches = [&] {
        std::size_t n = 0;
        for (const auto& ep : data.train) n += (ep.size() + c.batch_size - 1) / c.batch_size;
        return n;
    }();

    std::ostringstream metrics, evals;
    metrics << detail::metrics_header(n_ep);
    evals << "t,scope,count,mean_rate,mean_ratio\n";

    RunResult res;
    res.strategy = s;
    auto state = TrainerState::create(init, norm, tc);
    const EvalHook hook = [&](const StreamContext& ctx) {
        if ((ctx.t + 1) % c.eval.every != 0 && ctx.t + 1 != total_batches) return;
        auto rep = evaluate(ctx.state->params, ctx.state->norm, data.test, prob, edges, tc.min_oracle_rate);
        rep.t = ctx.t;
        metrics << detail::metrics_row(ctx, s, rep, n_ep);
        evals << detail::eval_rows(ctx.t, rep);
        res.final_report = std::move(rep);
    };
    try {
        res.steps = run_stream(dataset_source(data.train, c.batch_size), state, tc, prob, {hook});
    } catch (const TrainingAbort& e) {
        res.aborted = true;
        res.abort_cause = e.what();
    }

    detail::write_text_file(dir / "metrics.csv", metrics.str());
    detail::write_text_file(dir / "eval.csv", evals.str());
    if (res.final_report) {
        detail::write_text_file(dir / "histogram.csv", detail::histogram_csv(res.final_report->histogram));
        detail::write_text_file(dir / "eval_final.json", detail::report_json(*res.final_report).dump(2) + "\n");
    }
    if (!res.aborted) save_checkpoint_file(dir / "final.clwp", state.params, state.norm);

    manifest["status"] = res.aborted ? "aborted" : "completed";
    if (res.aborted) manifest["abort_cause"] = res.abort_cause;
    manifest["timestamps"] = res.steps;
    detail::write_text_file(manifest_path, manifest.dump(2) + "\n");
    return res;
}

// Runs every strategy from the same initial parameters over the same stream.
// Strategy runs are independent, so the parallel path produces the same files.
inline std::vector<RunResult> cmd_train(const ExperimentConfig& c, const std::vector<Strategy>& strategies,
                                        bool parallel = false) {
    c.validate();
    const LabeledData data = load_labeled(c);
    const FeatureNorm norm = initial_feature_norm(data, c.batch_size);
    const PolicyParams init = init_policy(c.layer_dims(), c.init_seed(), c.p_max);
    std::vector<RunResult> results(strategies.size());
    const auto run = [&](std::size_t i) { results[i] = run_strategy(c, strategies[i], data, init, norm); };
    if (parallel)
        parallel_for(strategies.size(), run, std::min(worker_threads(), strategies.size()));
    else
        for (std::size_t i = 0; i < strategies.size(); ++i) run(i);

    std::string causes;
    for (const auto& r : results)
        if (r.aborted) causes += (causes.empty() ? "" : "; ") + std::string(to_string(r.strategy)) + ": " + r.abort_cause;
    if (!causes.empty()) throw TrainingAbort(causes);
    return results;
}

// Re-evaluates each strategy's final checkpoint on the labeled test sets.
inline std::vector<EvalReport> cmd_eval(const ExperimentConfig& c, const std::vector<Strategy>& strategies) {
    c.validate();
    const LabeledData data = load_labeled(c);
    std::vector<EvalReport> out;
    for (auto s : strategies) {
        const fs::path dir = c.run_path(s);
        const auto [params, norm] = load_checkpoint_file(dir / "final.clwp");
        if (params.input_dim() != c.k_pairs * c.k_pairs)
            throw DataError((dir / "final.clwp").string() + ": input dimension does not match the config");
        auto rep = evaluate(params, norm, data.test, c.problem(), c.eval.edges(), c.trainer_for(s).min_oracle_rate);
        std::ostringstream os;
        os << "scope,count,mean_rate,mean_ratio\n";
        for (const auto& ep : rep.episodes)
            os << "ep" << ep.episode_id << ',' << ep.count << ',' << detail::fmt(ep.mean_rate) << ','
               << detail::fmt(ep.mean_ratio) << '\n';
        os << "mixture," << rep.mixture_count << ',' << detail::fmt(rep.mixture_rate) << ','
           << detail::fmt(rep.mixture_ratio) << '\n';
        detail::write_text_file(dir / "eval_checkpoint.csv", os.str());
        detail::write_text_file(dir / "eval_checkpoint.json", detail::report_json(rep).dump(2) + "\n");
        out.push_back(std::move(rep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report bundle

namespace detail {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("csv: missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(const fs::path& path) {
    std::istringstream is(read_text_file(path));
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw DataError(path.string() + ": empty csv");
    t.header = split_csv_line(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto row = split_csv_line(line);
        if (row.size() != t.header.size()) throw DataError(path.string() + ": ragged row");
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace detail

struct ReportSummary {
    fs::path timeseries;
    fs::path distribution;
    std::size_t rows = 0;
    std::size_t metric_columns = 0;
};

// Merges the per-strategy logs into one time series keyed by (t,
// samples_seen) and tabulates the final ratio PDF/CDF of every strategy.
// Values are copied verbatim from the logs.
inline ReportSummary cmd_report(const ExperimentConfig& c, const std::vector<Strategy>& strategies) {
    c.validate();
    const std::size_t n_ep = c.episodes.size();
    std::vector<std::string> scopes;
    for (std::size_t e = 0; e < n_ep; ++e) scopes.push_back("ep" + std::to_string(e));
    scopes.push_back("mixture");

    std::optional<std::string> fingerprint;
    std::vector<std::string> keys;  // "t,samples_seen" per row of the first run
    std::vector<detail::CsvTable> logs;
    std::vector<detail::CsvTable> hists;
    for (auto s : strategies) {
        const fs::path dir = c.run_path(s);
        const json m = json::parse(detail::read_text_file(dir / "manifest.json"));
        const std::string fp = m.value("schedule_fingerprint", "");
        if (!fingerprint)
            fingerprint = fp;
        else if (*fingerprint != fp)
            throw DataError("report: run '" + std::string(to_string(s)) + "' used a different schedule");
        auto log = detail::read_csv(dir / "metrics.csv");
        std::vector<std::string> k;
        for (const auto& row : log.rows) k.push_back(row[log.column("t")] + "," + row[log.column("samples_seen")]);
        if (logs.empty())
            keys = k;
        else if (k != keys)
            throw DataError("report: run '" + std::string(to_string(s)) + "' has mismatched timestamps");
        logs.push_back(std::move(log));
        hists.push_back(detail::read_csv(dir / "histogram.csv"));
    }

    const fs::path out = c.report_path();
    fs::create_directories(out);
    ReportSummary rs;

    std::ostringstream ts;
    ts << "t,samples_seen";
    for (auto s : strategies)
        for (const auto& scope : scopes)
            for (const char* metric : {"rate", "ratio"}) {
                ts << ',' << to_string(s) << '_' << scope << '_' << metric;
                ++rs.metric_columns;
            }
    ts << '\n';
    for (std::size_t r = 0; r < keys.size(); ++r) {
        ts << keys[r];
        for (const auto& log : logs)
            for (const auto& scope : scopes)
                for (const char* metric : {"rate", "ratio"}) {
                    const std::string col =
                        scope == "mixture" ? "mixture_" + std::string(metric) : std::string(metric) + "_" + scope;
                    ts << ',' << log.rows[r][log.column(col)];
                }
        ts << '\n';
    }
    rs.timeseries = out / "timeseries.csv";
    rs.rows = keys.size();
    detail::write_text_file(rs.timeseries, ts.str());

    std::ostringstream dist;
    dist << "bin_lo,bin_hi";
    for (auto s : strategies) dist << ',' << to_string(s) << "_pdf," << to_string(s) << "_cdf";
    dist << '\n';
    const std::size_t bins = hists.empty() ? 0 : hists.front().rows.size();
    for (const auto& h : hists)
        if (h.rows.size() != bins) throw DataError("report: histogram bins differ across runs");
    for (std::size_t b = 0; b < bins; ++b) {
        dist << hists.front().rows[b][0] << ',' << hists.front().rows[b][1];
        for (const auto& h : hists) dist << ',' << h.rows[b][h.column("pdf")] << ',' << h.rows[b][h.column("cdf")];
        dist << '\n';
    }
    rs.distribution = out / "final_distribution.csv";
    detail::write_text_file(rs.distribution, dist.str());
    return rs;
}

}  // namespace clwrx
