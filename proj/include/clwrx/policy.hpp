#pragma once

// Fully connected power-allocation network with hand-written forward and
// backward passes. Hidden layers use ReLU; the output layer is a logistic
// squashing scaled by p_max, so every predicted power is feasible.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clwrx/channel.hpp"
#include "clwrx/dataset_io.hpp"
#include "clwrx/error.hpp"
#include "clwrx/hash.hpp"
#include "clwrx/rng.hpp"

namespace clwrx {

enum class Activation : std::uint32_t { Identity = 0, ReLU = 1, ScaledSigmoid = 2 };

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
    Activation activation = Activation::ReLU;
};

class PolicyParams {
public:
    PolicyParams() = default;

    // Zero-initialized network; hidden layers ReLU, output ScaledSigmoid.
    PolicyParams(std::vector<std::size_t> layer_dims, double p_max) : dims_(std::move(layer_dims)), p_max_(p_max) {
        detail::require(dims_.size() >= 2, "policy: layer_dims needs at least input and output sizes");
        for (auto d : dims_) detail::require(d >= 1, "policy: layer sizes must be >= 1");
        detail::require(p_max > 0.0, "policy: p_max must be > 0");
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            DenseLayer layer;
            layer.weight = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims_[l + 1]), static_cast<Eigen::Index>(dims_[l]));
            layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims_[l + 1]));
            layer.activation = (l + 2 == dims_.size()) ? Activation::ScaledSigmoid : Activation::ReLU;
            layers_.push_back(std::move(layer));
        }
    }

    const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
    std::size_t input_dim() const noexcept { return dims_.front(); }
    std::size_t output_dim() const noexcept { return dims_.back(); }
    double p_max() const noexcept { return p_max_; }

    std::vector<DenseLayer>& layers() noexcept { return layers_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

    // Incremented by every in-place update; forward caches record it.
    std::uint64_t revision() const noexcept { return revision_; }
    void touch() noexcept { ++revision_; }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    // Parameters in layer order, each layer's weight row-major then bias.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& l : layers_) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
        }
        return out;
    }

    void unflatten(std::span<const double> flat) {
        detail::require<DataError>(flat.size() == parameter_count(), "policy: flat parameter length mismatch");
        std::size_t i = 0;
        for (auto& l : layers_) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[i++];
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat[i++];
        }
        touch();
    }

    bool finite() const noexcept {
        for (const auto& l : layers_)
            if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }

    std::string fingerprint() const {
        Fnv1a h;
        const auto flat = flatten();
        h.update(std::span<const double>(flat));
        return h.hex();
    }

private:
    std::vector<std::size_t> dims_;
    std::vector<DenseLayer> layers_;
    double p_max_ = 1.0;
    std::uint64_t revision_ = 0;
};

// Gradient with the same shapes as PolicyParams.
struct PolicyGradient {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;

    static PolicyGradient zeros_like(const PolicyParams& p) {
        PolicyGradient g;
        for (const auto& l : p.layers()) {
            g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
            g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
        }
        return g;
    }

    PolicyGradient& operator+=(const PolicyGradient& o) {
        for (std::size_t l = 0; l < weight.size(); ++l) {
            weight[l] += o.weight[l];
            bias[l] += o.bias[l];
        }
        return *this;
    }

    bool finite() const noexcept {
        for (std::size_t l = 0; l < weight.size(); ++l)
            if (!weight[l].allFinite() || !bias[l].allFinite()) return false;
        return true;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        for (std::size_t l = 0; l < weight.size(); ++l) {
            for (Eigen::Index r = 0; r < weight[l].rows(); ++r)
                for (Eigen::Index c = 0; c < weight[l].cols(); ++c) out.push_back(weight[l](r, c));
            for (Eigen::Index r = 0; r < bias[l].size(); ++r) out.push_back(bias[l](r));
        }
        return out;
    }
};

struct ForwardCache {
    std::uint64_t revision = 0;
    const PolicyParams* owner = nullptr;
    std::vector<Eigen::MatrixXd> pre;   // per layer, out x batch
    std::vector<Eigen::MatrixXd> post;  // post[0] is the input, post[l + 1] the output of layer l
};

// He-uniform on ReLU layers (variance 2 / fan_in) and LeCun-uniform on the
// output layer (variance 1 / fan_in). Biases start at zero.
inline double init_variance(const PolicyParams& p, std::size_t layer) {
    const auto fan_in = static_cast<double>(p.layer_dims()[layer]);
    return (p.layers()[layer].activation == Activation::ReLU ? 2.0 : 1.0) / fan_in;
}

inline PolicyParams init_policy(const std::vector<std::size_t>& layer_dims, std::uint64_t seed, double p_max = 1.0) {
    if (layer_dims.empty()) throw ConfigError("init_policy: empty layer_dims");
    PolicyParams p(layer_dims, p_max);
    for (std::size_t l = 0; l < p.layers().size(); ++l) {
        RandomStream rng(seed, l, StreamField::PolicyInit);
        const double limit = std::sqrt(3.0 * init_variance(p, l));
        auto& w = p.layers()[l].weight;
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    return p;
}

namespace detail {

inline double logistic(double z) noexcept {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

// x is input_dim x batch (one sample per column). Returns output_dim x batch.
inline std::pair<Eigen::MatrixXd, ForwardCache> forward(const PolicyParams& params, const Eigen::MatrixXd& x) {
    if (static_cast<std::size_t>(x.rows()) != params.input_dim())
        throw DataError("policy forward: feature dim " + std::to_string(x.rows()) + " != input dim " +
                        std::to_string(params.input_dim()));
    ForwardCache cache;
    cache.revision = params.revision();
    cache.owner = &params;
    cache.post.push_back(x);
    for (const auto& layer : params.layers()) {
        Eigen::MatrixXd z = layer.weight * cache.post.back();
        z.colwise() += layer.bias;
        Eigen::MatrixXd a;
        switch (layer.activation) {
            case Activation::Identity: a = z; break;
            case Activation::ReLU: a = z.cwiseMax(0.0); break;
            case Activation::ScaledSigmoid:
                a = z.unaryExpr([pm = params.p_max()](double v) { return pm * detail::logistic(v); });
                break;
        }
        cache.pre.push_back(std::move(z));
        cache.post.push_back(std::move(a));
    }
    Eigen::MatrixXd out = cache.post.back();
    return {std::move(out), std::move(cache)};
}

// Reverse-mode gradient of sum over columns of <out_grad, output>. Per-sample
// loss weights are expected to be folded into out_grad by the caller.
inline PolicyGradient backward(const PolicyParams& params, const ForwardCache& cache, const Eigen::MatrixXd& out_grad) {
    if (cache.owner != &params || cache.revision != params.revision() || cache.pre.size() != params.layers().size())
        throw DataError("policy backward: stale forward cache");
    if (out_grad.rows() != cache.post.back().rows() || out_grad.cols() != cache.post.back().cols())
        throw DataError("policy backward: out_grad shape mismatch");

    PolicyGradient g = PolicyGradient::zeros_like(params);
    Eigen::MatrixXd delta = out_grad;
    for (std::size_t l = params.layers().size(); l-- > 0;) {
        const auto& layer = params.layers()[l];
        switch (layer.activation) {
            case Activation::Identity: break;
            case Activation::ReLU: delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix()); break;
            case Activation::ScaledSigmoid: {
                const double pm = params.p_max();
                delta = delta.cwiseProduct(cache.pre[l].unaryExpr([pm](double v) {
                    const double s = detail::logistic(v);
                    return pm * s * (1.0 - s);
                }));
                break;
            }
        }
        g.weight[l].noalias() = delta * cache.post[l].transpose();
        g.bias[l] = delta.rowwise().sum();
        if (l > 0) delta = layer.weight.transpose() * delta;
    }
    return g;
}

// Heavy-ball momentum buffer; momentum = 0 gives plain gradient descent.
struct MomentumState {
    double momentum = 0.0;
    PolicyGradient velocity;
};

// params <- params - step * grad (plain descent), or the heavy-ball update
// v <- momentum * v + grad, params <- params - step * v when momentum > 0.
inline void apply_update(PolicyParams& params, const PolicyGradient& grad, double step, MomentumState* state = nullptr) {
    if (!(step >= 0.0) || !std::isfinite(step)) throw ConfigError("apply_update: step must be finite and >= 0");
    if (grad.weight.size() != params.layers().size()) throw DataError("apply_update: gradient shape mismatch");
    if (!grad.finite()) throw TrainingAbort("apply_update: non-finite gradient");
    const PolicyGradient* dir = &grad;
    if (state && state->momentum > 0.0) {
        if (state->velocity.weight.empty()) state->velocity = PolicyGradient::zeros_like(params);
        for (std::size_t l = 0; l < grad.weight.size(); ++l) {
            state->velocity.weight[l] = state->momentum * state->velocity.weight[l] + grad.weight[l];
            state->velocity.bias[l] = state->momentum * state->velocity.bias[l] + grad.bias[l];
        }
        dir = &state->velocity;
    }
    for (std::size_t l = 0; l < params.layers().size(); ++l) {
        auto& layer = params.layers()[l];
        if (dir->weight[l].rows() != layer.weight.rows() || dir->weight[l].cols() != layer.weight.cols())
            throw DataError("apply_update: gradient shape mismatch");
        layer.weight -= step * dir->weight[l];
        layer.bias -= step * dir->bias[l];
    }
    params.touch();
}

// ---------------------------------------------------------------------------
// Features

// Per-feature standardization statistics, frozen once fitted.
struct FeatureNorm {
    std::vector<double> mean;
    std::vector<double> stddev;

    static FeatureNorm identity(std::size_t dim) { return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)}; }

    std::size_t dim() const noexcept { return mean.size(); }

    bool finite() const noexcept {
        for (std::size_t i = 0; i < mean.size(); ++i)
            if (!std::isfinite(mean[i]) || !std::isfinite(stddev[i]) || !(stddev[i] > 0.0)) return false;
        return mean.size() == stddev.size();
    }

    friend bool operator==(const FeatureNorm&, const FeatureNorm&) = default;
};

inline std::vector<double> raw_features(const ChannelSample& h) {
    std::vector<double> x;
    x.reserve(h.data().size());
    for (const auto& c : h.data()) x.push_back(std::abs(c));
    return x;
}

// Mean and standard deviation of each magnitude feature over the samples.
// Features with (near) zero spread get unit scale.
inline FeatureNorm fit_feature_norm(std::span<const ChannelSample> samples) {
    detail::require<DataError>(!samples.empty(), "fit_feature_norm: no samples");
    const std::size_t dim = samples.front().data().size();
    std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
    for (const auto& s : samples) {
        const auto x = raw_features(s);
        if (x.size() != dim) throw DataError("fit_feature_norm: mixed K");
        for (std::size_t i = 0; i < dim; ++i) sum[i] += x[i];
    }
    const double n = static_cast<double>(samples.size());
    FeatureNorm norm;
    norm.mean.resize(dim);
    norm.stddev.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) norm.mean[i] = sum[i] / n;
    for (const auto& s : samples) {
        const auto x = raw_features(s);
        for (std::size_t i = 0; i < dim; ++i) sq[i] += (x[i] - norm.mean[i]) * (x[i] - norm.mean[i]);
    }
    for (std::size_t i = 0; i < dim; ++i) {
        const double sd = std::sqrt(sq[i] / n);
        norm.stddev[i] = sd > 1e-12 ? sd : 1.0;
    }
    return norm;
}

inline std::vector<double> featurize(const ChannelSample& h, const FeatureNorm& norm) {
    auto x = raw_features(h);
    if (norm.dim() != x.size()) throw DataError("featurize: norm dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - norm.mean[i]) / norm.stddev[i];
    return x;
}

template <class Samples, class Proj>
Eigen::MatrixXd feature_matrix(const Samples& samples, const FeatureNorm& norm, Proj channel_of) {
    const auto n = static_cast<Eigen::Index>(std::size(samples));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(norm.dim()), n);
    Eigen::Index col = 0;
    for (const auto& s : samples) {
        const auto f = featurize(channel_of(s), norm);
        for (std::size_t i = 0; i < f.size(); ++i) x(static_cast<Eigen::Index>(i), col) = f[i];
        ++col;
    }
    return x;
}

inline Eigen::MatrixXd feature_matrix(std::span<const ChannelSample> samples, const FeatureNorm& norm) {
    return feature_matrix(samples, norm, [](const ChannelSample& s) -> const ChannelSample& { return s; });
}

inline Eigen::MatrixXd feature_matrix(std::span<const LabeledSample> samples, const FeatureNorm& norm) {
    return feature_matrix(samples, norm, [](const LabeledSample& s) -> const ChannelSample& { return s.channel; });
}

// Power allocations for a set of channels, one vector per sample.
inline std::vector<std::vector<double>> predict(const PolicyParams& params, const FeatureNorm& norm,
                                                std::span<const LabeledSample> samples) {
    const auto [out, cache] = forward(params, feature_matrix(samples, norm));
    std::vector<std::vector<double>> powers(samples.size());
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
        auto& p = powers[static_cast<std::size_t>(c)];
        p.resize(static_cast<std::size_t>(out.rows()));
        for (Eigen::Index r = 0; r < out.rows(); ++r) p[static_cast<std::size_t>(r)] = std::min(out(r, c), params.p_max());
    }
    return powers;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   char[4] "CLWP" | u16 version | u16 layer count L | u32 dims[L + 1]
//   u32 activation[L] | f64 p_max
//   per layer: weight (row-major, out x in) then bias, f64
//   u32 feature dim D | f64 mean[D] | f64 stddev[D]

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& os, const PolicyParams& params, const FeatureNorm& norm) {
    os.write("CLWP", 4);
    detail::put_le(os, kCheckpointVersion);
    detail::put_le(os, static_cast<std::uint16_t>(params.layers().size()));
    for (auto d : params.layer_dims()) detail::put_le(os, static_cast<std::uint32_t>(d));
    for (const auto& l : params.layers()) detail::put_le(os, static_cast<std::uint32_t>(l.activation));
    detail::put_le(os, params.p_max());
    for (double v : params.flatten()) detail::put_le(os, v);
    detail::put_le(os, static_cast<std::uint32_t>(norm.dim()));
    for (double v : norm.mean) detail::put_le(os, v);
    for (double v : norm.stddev) detail::put_le(os, v);
}

inline std::pair<PolicyParams, FeatureNorm> load_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "CLWP") throw DataError("checkpoint: bad magic");
    const auto version = detail::get_le<std::uint16_t>(is, "checkpoint version");
    if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const auto n_layers = detail::get_le<std::uint16_t>(is, "checkpoint layer count");
    if (n_layers == 0) throw DataError("checkpoint: zero layers");
    std::vector<std::size_t> dims(n_layers + 1u);
    for (auto& d : dims) d = detail::get_le<std::uint32_t>(is, "checkpoint dims");
    std::vector<Activation> acts(n_layers);
    for (auto& a : acts) {
        const auto v = detail::get_le<std::uint32_t>(is, "checkpoint activation");
        if (v > 2) throw DataError("checkpoint: unknown activation " + std::to_string(v));
        a = static_cast<Activation>(v);
    }
    const double p_max = detail::get_le<double>(is, "checkpoint p_max");
    PolicyParams params(dims, p_max);
    for (std::size_t l = 0; l < acts.size(); ++l) params.layers()[l].activation = acts[l];
    std::vector<double> flat(params.parameter_count());
    for (auto& v : flat) v = detail::get_le<double>(is, "checkpoint parameters");
    params.unflatten(flat);
    FeatureNorm norm;
    const auto dim = detail::get_le<std::uint32_t>(is, "checkpoint feature dim");
    norm.mean.resize(dim);
    norm.stddev.resize(dim);
    for (auto& v : norm.mean) v = detail::get_le<double>(is, "checkpoint feature mean");
    for (auto& v : norm.stddev) v = detail::get_le<double>(is, "checkpoint feature stddev");
    if (!params.finite()) throw DataError("checkpoint: non-finite parameters");
    return {std::move(params), std::move(norm)};
}

inline void save_checkpoint_file(const std::filesystem::path& path, const PolicyParams& params, const FeatureNorm& norm) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open '" + path.string() + "' for writing");
    save_checkpoint(os, params, norm);
}

inline std::pair<PolicyParams, FeatureNorm> load_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path.string() + "'");
    return load_checkpoint(is);
}

}  // namespace clwrx
