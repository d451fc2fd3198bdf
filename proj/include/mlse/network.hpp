#ifndef MLSE_NETWORK_HPP
#define MLSE_NETWORK_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mlse/errors.hpp"
#include "mlse/layers.hpp"
#include "mlse/network_config.hpp"
#include "mlse/rng.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

enum class Mode { Train, Eval };

namespace names {

inline std::string trunk(std::size_t layer, const char* what) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "trunk.%02zu.%s", layer, what);
    return buf;
}

inline std::string head(std::size_t k, const char* what) {
    return "head." + std::to_string(k) + "." + what;
}

} // namespace names

/// Architecture plus all learned tensors and batch-norm running statistics.
template <typename Real>
struct NetworkState {
    NetworkConfig config;
    ParamMap<Real> params;
    ParamMap<Real> running; // "<layer>.mean" / "<layer>.var"
    std::uint64_t rng_seed = 0;

    template <typename To>
    NetworkState<To> cast() const {
        return NetworkState<To>{config, cast_params<To>(params), cast_params<To>(running), rng_seed};
    }

    friend bool operator==(const NetworkState& a, const NetworkState& b) {
        return a.config == b.config && a.params == b.params && a.running == b.running && a.rng_seed == b.rng_seed;
    }
};

/// Expected parameter and running-stat shapes for a config.
inline std::pair<std::map<std::string, Shape>, std::map<std::string, Shape>> expected_shapes(
    const NetworkConfig& cfg) {
    const auto shapes = cfg.layer_shapes();
    std::map<std::string, Shape> params;
    std::map<std::string, Shape> running;
    Shape in = cfg.input_shape();
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        if (l.kind == LayerKind::Conv) {
            params[names::trunk(i, "weight")] = {l.units, in[0], l.kernel, l.kernel};
        } else if (l.kind == LayerKind::FullyConnected) {
            params[names::trunk(i, "weight")] = {l.units, shape_size(in)};
        }
        if (l.learnable()) {
            params[names::trunk(i, "bias")] = {l.units};
            params[names::trunk(i, "gamma")] = {l.units};
            params[names::trunk(i, "beta")] = {l.units};
            running[names::trunk(i, "mean")] = {l.units};
            running[names::trunk(i, "var")] = {l.units};
        }
        in = shapes[i];
    }
    const std::size_t features = in.at(0);
    for (std::size_t k = 0; k < NetworkConfig::kHeads; ++k) {
        params[names::head(k, "weight")] = {cfg.classes, features};
        params[names::head(k, "bias")] = {cfg.classes};
    }
    return {params, running};
}

/// He-normal weights (variance 2/fan_in), zero biases, identity batch norm.
template <typename Real = float>
NetworkState<Real> init_network(const NetworkConfig& cfg, std::uint64_t seed) {
    const auto [param_shapes, running_shapes] = expected_shapes(cfg);
    NetworkState<Real> state;
    state.config = cfg;
    state.rng_seed = seed;
    Rng rng(derive_seed(seed, {0x1417}));
    for (const auto& [name, shape] : param_shapes) {
        Tensor<Real> t(shape);
        const bool is_weight = name.ends_with(".weight");
        if (is_weight) {
            const std::size_t fan_in = shape_size(shape) / shape[0];
            const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& v : t.values()) v = static_cast<Real>(rng.normal() * sd);
        } else if (name.ends_with(".gamma")) {
            t.fill(Real{1});
        }
        state.params.emplace(name, std::move(t));
    }
    for (const auto& [name, shape] : running_shapes) {
        state.running.emplace(name, Tensor<Real>(shape, name.ends_with(".var") ? Real{1} : Real{0}));
    }
    return state;
}

/// Throws unless every tensor of the state has the name and shape its config implies.
template <typename Real>
void check_state(const NetworkState<Real>& state) {
    const auto [param_shapes, running_shapes] = expected_shapes(state.config);
    auto check = [](const auto& expected, const ParamMap<Real>& actual, const char* what) {
        if (expected.size() != actual.size()) {
            throw ConsistencyError(std::string(what) + " count does not match the config");
        }
        for (const auto& [name, shape] : expected) {
            auto it = actual.find(name);
            if (it == actual.end()) {
                throw ConsistencyError(std::string(what) + " '" + name + "' missing");
            }
            if (it->second.shape() != shape) {
                throw ConsistencyError(std::string(what) + " '" + name + "' has shape " +
                                       shape_string(it->second.shape()) + ", config implies " + shape_string(shape));
            }
        }
    };
    check(param_shapes, state.params, "parameter");
    check(running_shapes, state.running, "running statistic");
}

/// Per-layer intermediates kept by a train-mode forward.
template <typename Real>
struct LayerCache {
    Tensor<Real> input;
    kernels::BatchNormCache<Real> bn;
    Tensor<Real> pre_activation;
    Tensor<Real> slopes;
    Tensor<Real> mask;
    std::vector<std::size_t> argmax;
};

template <typename Real>
struct ForwardCache {
    Mode mode = Mode::Eval;
    std::string config_text;
    std::size_t batch = 0;
    std::vector<LayerCache<Real>> layers;
    Tensor<Real> features;
};

template <typename Real>
struct ForwardResult {
    std::array<Tensor<Real>, NetworkConfig::kHeads> heads;
    Tensor<Real> features;
    ForwardCache<Real> cache;
};

namespace detail {

inline kernels::ConvGeometry conv_geometry(const Shape& in, const LayerSpec& l, const Shape& out) {
    return {in[0], in[1], in[2], l.kernel, l.stride, l.pad, out[1], out[2]};
}

template <typename Real>
Tensor<Real> apply_dropout(const Tensor<Real>& x, double p, Rng& rng, Tensor<Real>& mask_out) {
    mask_out = make_dropout_mask<Real>(x.shape(), p, rng);
    Tensor<Real> y(x.shape());
    const Real scale = p < 1.0 ? static_cast<Real>(1.0 / (1.0 - p)) : Real{0};
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask_out[i] * scale;
    return y;
}

} // namespace detail

/**
 * Forward pass through the shared trunk and the three heads.
 *
 * Train mode draws dropout masks and leaky-ReLU slopes from `rng` and
 * normalizes with batch statistics; eval mode is a pure function of
 * (state, batch). `features` is the output of the last shared FC layer.
 */
template <typename Real>
ForwardResult<Real> network_forward(const NetworkState<Real>& state, const Tensor<Real>& batch, Mode mode, Rng& rng) {
    const NetworkConfig& cfg = state.config;
    const auto shapes = cfg.layer_shapes();
    const Shape in_shape = cfg.input_shape();
    if (batch.rank() != 4 || batch.dim(1) != in_shape[0] || batch.dim(2) != in_shape[1] ||
        batch.dim(3) != in_shape[2]) {
        throw DimensionError("batch shape " + shape_string(batch.shape()) + " does not match network input " +
                             shape_string(in_shape));
    }
    const std::size_t N = batch.dim(0);
    if (mode == Mode::Train && N < 2) {
        throw DimensionError("train-mode batch normalization needs at least 2 samples");
    }
    const bool train = mode == Mode::Train;
    ForwardResult<Real> result;
    result.cache.mode = mode;
    result.cache.config_text = cfg.to_text();
    result.cache.batch = N;
    result.cache.layers.resize(cfg.layers.size());

    Tensor<Real> x = batch;
    Shape cur = in_shape;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        LayerCache<Real>& lc = result.cache.layers[i];
        const Shape& out = shapes[i];
        if (l.kind == LayerKind::Dropout) {
            if (train) {
                x = detail::apply_dropout(x, l.dropout, rng, lc.mask);
            }
        } else if (l.kind == LayerKind::MaxPool) {
            if (train) lc.input = x;
            x = kernels::maxpool_forward(x, l.kernel, l.stride, l.pad, out[1], out[2], lc.argmax);
        } else {
            const Tensor<Real>& w = state.params.at(names::trunk(i, "weight"));
            const Tensor<Real>& b = state.params.at(names::trunk(i, "bias"));
            const Tensor<Real>& gamma = state.params.at(names::trunk(i, "gamma"));
            const Tensor<Real>& beta = state.params.at(names::trunk(i, "beta"));
            Tensor<Real> z;
            if (l.kind == LayerKind::Conv) {
                z = kernels::conv_forward(x, w, b, detail::conv_geometry(cur, l, out));
            } else {
                x.reshape({N, shape_size(cur)});
                z = kernels::fc_forward(x, w, b);
            }
            if (train) lc.input = std::move(x);
            Tensor<Real> bn = train ? kernels::batchnorm_train(z, l.units, gamma, beta, lc.bn)
                                    : kernels::batchnorm_eval(z, l.units, gamma, beta,
                                                              state.running.at(names::trunk(i, "mean")),
                                                              state.running.at(names::trunk(i, "var")));
            Tensor<Real> act(bn.shape());
            if (train) {
                lc.slopes = Tensor<Real>(bn.shape());
                for (std::size_t k = 0; k < bn.size(); ++k) {
                    const Real a = static_cast<Real>(rng.uniform(kRreluLower, kRreluUpper));
                    lc.slopes[k] = a;
                    act[k] = bn[k] >= Real{0} ? bn[k] : a * bn[k];
                }
                lc.pre_activation = std::move(bn);
            } else {
                const Real a = static_cast<Real>(kRreluEvalSlope);
                for (std::size_t k = 0; k < bn.size(); ++k) act[k] = bn[k] >= Real{0} ? bn[k] : a * bn[k];
            }
            x = std::move(act);
            if (l.kind == LayerKind::FullyConnected && l.dropout > 0.0 && train) {
                x = detail::apply_dropout(x, l.dropout, rng, lc.mask);
            }
        }
        cur = out;
    }
    result.features = x;
    for (std::size_t k = 0; k < NetworkConfig::kHeads; ++k) {
        result.heads[k] = kernels::fc_forward(x, state.params.at(names::head(k, "weight")),
                                              state.params.at(names::head(k, "bias")));
    }
    if (train) result.cache.features = std::move(x);
    return result;
}

/// Convenience eval-mode forward; no randomness is consumed.
template <typename Real>
ForwardResult<Real> network_forward_eval(const NetworkState<Real>& state, const Tensor<Real>& batch) {
    Rng unused(0);
    return network_forward(state, batch, Mode::Eval, unused);
}

/// Zero-filled tensors congruent with the state's parameters.
template <typename Real>
ParamMap<Real> zeros_like(const ParamMap<Real>& params) {
    ParamMap<Real> out;
    for (const auto& [name, t] : params) out.emplace(name, Tensor<Real>(t.shape()));
    return out;
}

/// Backpropagates head gradients through the network; the trunk sums all three heads' contributions.
template <typename Real>
ParamMap<Real> network_backward(const NetworkState<Real>& state, const ForwardCache<Real>& cache,
                                const std::array<Tensor<Real>, NetworkConfig::kHeads>& head_grads) {
    const NetworkConfig& cfg = state.config;
    if (cache.mode != Mode::Train) {
        throw ConsistencyError("backward needs the cache of a train-mode forward");
    }
    if (cache.config_text != cfg.to_text() || cache.layers.size() != cfg.layers.size()) {
        throw ConsistencyError("forward cache was produced by a different network config");
    }
    const std::size_t N = cache.batch;
    for (const auto& g : head_grads) {
        if (g.rank() != 2 || g.dim(0) != N || g.dim(1) != cfg.classes) {
            throw DimensionError("head gradient shape " + shape_string(g.shape()) + ", expected (" +
                                 std::to_string(N) + "x" + std::to_string(cfg.classes) + ")");
        }
    }
    const auto shapes = cfg.layer_shapes();
    ParamMap<Real> grads = zeros_like(state.params);

    Tensor<Real> d(cache.features.shape());
    for (std::size_t k = 0; k < NetworkConfig::kHeads; ++k) {
        Tensor<Real> dx = kernels::fc_backward(cache.features, state.params.at(names::head(k, "weight")),
                                               head_grads[k], grads.at(names::head(k, "weight")),
                                               grads.at(names::head(k, "bias")));
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dx[i];
    }

    for (std::size_t ii = cfg.layers.size(); ii-- > 0;) {
        const LayerSpec& l = cfg.layers[ii];
        const LayerCache<Real>& lc = cache.layers[ii];
        const Shape in = ii == 0 ? cfg.input_shape() : shapes[ii - 1];
        Shape in_batched{N};
        in_batched.insert(in_batched.end(), in.begin(), in.end());
        if (l.kind == LayerKind::Dropout) {
            const Real scale = l.dropout < 1.0 ? static_cast<Real>(1.0 / (1.0 - l.dropout)) : Real{0};
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= lc.mask[i] * scale;
        } else if (l.kind == LayerKind::MaxPool) {
            d = kernels::maxpool_backward(d, in_batched, lc.argmax);
        } else {
            if (l.kind == LayerKind::FullyConnected && l.dropout > 0.0) {
                const Real scale = static_cast<Real>(1.0 / (1.0 - l.dropout));
                for (std::size_t i = 0; i < d.size(); ++i) d[i] *= lc.mask[i] * scale;
            }
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (lc.pre_activation[i] < Real{0}) d[i] *= lc.slopes[i];
            }
            d.reshape(lc.pre_activation.shape());
            const Tensor<Real>& gamma = state.params.at(names::trunk(ii, "gamma"));
            Tensor<Real> dz = kernels::batchnorm_backward(d, l.units, gamma, lc.bn, grads.at(names::trunk(ii, "gamma")),
                                                          grads.at(names::trunk(ii, "beta")));
            const Tensor<Real>& w = state.params.at(names::trunk(ii, "weight"));
            Tensor<Real>& dw = grads.at(names::trunk(ii, "weight"));
            Tensor<Real>& db = grads.at(names::trunk(ii, "bias"));
            if (l.kind == LayerKind::Conv) {
                d = kernels::conv_backward(lc.input, w, dz, detail::conv_geometry(in, l, shapes[ii]), dw, db);
            } else {
                d = kernels::fc_backward(lc.input, w, dz, dw, db);
            }
        }
        d.reshape(in_batched);
    }
    return grads;
}

/// Folds the batch statistics of a train-mode forward into the running averages.
template <typename Real>
void update_running_stats(NetworkState<Real>& state, const ForwardCache<Real>& cache,
                          double momentum = kBatchNormMomentum) {
    if (cache.mode != Mode::Train) {
        throw ConsistencyError("running statistics come from a train-mode forward");
    }
    const NetworkConfig& cfg = state.config;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        if (!cfg.layers[i].learnable()) continue;
        const auto& bn = cache.layers.at(i).bn;
        Tensor<Real>& mean = state.running.at(names::trunk(i, "mean"));
        Tensor<Real>& var = state.running.at(names::trunk(i, "var"));
        const double M = static_cast<double>(cache.layers.at(i).pre_activation.size()) / static_cast<double>(mean.size());
        const double unbias = M > 1.0 ? M / (M - 1.0) : 1.0;
        for (std::size_t c = 0; c < mean.size(); ++c) {
            mean[c] = static_cast<Real>((1.0 - momentum) * mean[c] + momentum * bn.mean[c]);
            var[c] = static_cast<Real>((1.0 - momentum) * var[c] + momentum * bn.var[c] * unbias);
        }
    }
}

} // namespace mlse

#endif // MLSE_NETWORK_HPP
