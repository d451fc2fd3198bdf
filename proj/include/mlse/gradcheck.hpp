#ifndef MLSE_GRADCHECK_HPP
#define MLSE_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlse/errors.hpp"
#include "mlse/losses.hpp"
#include "mlse/network.hpp"
#include "mlse/rng.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

struct ParamCoord {
    std::string name;
    std::size_t index = 0;
};

/// Uniformly chosen (tensor, element) coordinates, weighted by tensor size.
template <typename Real>
std::vector<ParamCoord> sample_coords(const ParamMap<Real>& params, std::size_t count, Rng& rng) {
    std::size_t total = 0;
    for (const auto& [name, t] : params) total += t.size();
    std::vector<ParamCoord> coords;
    coords.reserve(count);
    for (std::size_t c = 0; c < count; ++c) {
        std::size_t flat = rng.below(total);
        for (const auto& [name, t] : params) {
            if (flat < t.size()) {
                coords.push_back({name, flat});
                break;
            }
            flat -= t.size();
        }
    }
    return coords;
}

/**
 * Max over coords of |analytic - (f(w+h) - f(w-h)) / 2h| / max(1, |analytic|).
 *
 * `loss_fn` maps a parameter map to a scalar and must be deterministic.
 * A coordinate missing from `analytic` is treated as having gradient 0.
 */
template <typename LossFn>
double finite_diff_check(LossFn&& loss_fn, ParamMap<double> params, const ParamMap<double>& analytic,
                         std::span<const ParamCoord> coords, double h) {
    if (!(h > 0.0)) {
        throw ParameterError("finite-difference step must be positive");
    }
    double worst = 0.0;
    for (const auto& c : coords) {
        auto it = params.find(c.name);
        if (it == params.end() || c.index >= it->second.size()) {
            throw ParameterError("coordinate " + c.name + "[" + std::to_string(c.index) + "] does not exist");
        }
        double& w = it->second[c.index];
        const double saved = w;
        w = saved + h;
        const double up = loss_fn(static_cast<const ParamMap<double>&>(params));
        w = saved - h;
        const double down = loss_fn(static_cast<const ParamMap<double>&>(params));
        w = saved;
        const double numeric = (up - down) / (2.0 * h);
        auto ia = analytic.find(c.name);
        const double a = ia == analytic.end() ? 0.0 : ia->second[c.index];
        worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

/// Batch-mean DML of a train-mode forward whose randomness is fixed by `forward_seed`.
inline double network_dml_loss(const NetworkState<double>& state, const Tensor<double>& batch,
                               std::span<const std::size_t> targets, const LossWeights& w,
                               std::uint64_t forward_seed) {
    Rng rng(forward_seed);
    auto fwd = network_forward(state, batch, Mode::Train, rng);
    return dml_batch<double>(fwd.heads, targets, w).loss;
}

/// Analytic DML gradient of the whole network (same fixed randomness as network_dml_loss).
inline ParamMap<double> network_dml_gradient(const NetworkState<double>& state, const Tensor<double>& batch,
                                             std::span<const std::size_t> targets, const LossWeights& w,
                                             std::uint64_t forward_seed) {
    Rng rng(forward_seed);
    auto fwd = network_forward(state, batch, Mode::Train, rng);
    auto loss = dml_batch<double>(fwd.heads, targets, w);
    return network_backward(state, fwd.cache, loss.head_grads);
}

/// Signs of every leaky-ReLU input and every max-pool winner of a forward pass.
template <typename Real>
std::vector<std::size_t> activation_pattern(const ForwardCache<Real>& cache) {
    std::vector<std::size_t> pattern;
    for (const auto& l : cache.layers) {
        for (Real v : l.pre_activation.values()) pattern.push_back(v < Real{0} ? 1 : 0);
        pattern.insert(pattern.end(), l.argmax.begin(), l.argmax.end());
    }
    return pattern;
}

struct NetworkGradCheck {
    double max_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0; // draws whose [w-h, w+h] crosses a non-differentiable point
};

/**
 * 64-bit finite-difference check of the full network under the DML loss.
 *
 * Max pooling and the leaky ReLU are piecewise linear; a central difference
 * that straddles a switch of their discrete pattern does not estimate the
 * derivative. Such draws are counted in `skipped_kinks` and replaced by a
 * fresh random coordinate until `n_coords` coordinates have been checked.
 */
inline NetworkGradCheck check_network_gradients(const NetworkState<float>& state32, const Tensor<float>& batch32,
                                                std::span<const std::size_t> targets, const LossWeights& w,
                                                std::size_t n_coords, double h, std::uint64_t seed) {
    const NetworkState<double> state = state32.cast<double>();
    const Tensor<double> batch = batch32.cast<double>();
    const std::uint64_t forward_seed = derive_seed(seed, {0xF0});
    const ParamMap<double> analytic = network_dml_gradient(state, batch, targets, w, forward_seed);
    NetworkState<double> probe = state;
    auto pattern_at = [&](const ParamMap<double>& params) {
        probe.params = params;
        Rng rng(forward_seed);
        return activation_pattern(network_forward(probe, batch, Mode::Train, rng).cache);
    };
    const auto base = pattern_at(state.params);

    Rng pick(derive_seed(seed, {0xC0}));
    NetworkGradCheck result;
    std::vector<ParamCoord> coords;
    const std::size_t max_draws = 50 * n_coords;
    ParamMap<double> shifted = state.params;
    for (std::size_t draw = 0; coords.size() < n_coords && draw < max_draws; ++draw) {
        const ParamCoord c = sample_coords(state.params, 1, pick).front();
        double& v = shifted.at(c.name)[c.index];
        const double saved = v;
        v = saved + h;
        bool smooth = pattern_at(shifted) == base;
        v = saved - h;
        smooth = smooth && pattern_at(shifted) == base;
        v = saved;
        if (smooth) {
            coords.push_back(c);
        } else {
            ++result.skipped_kinks;
        }
    }
    auto loss_fn = [&](const ParamMap<double>& params) {
        probe.params = params;
        return network_dml_loss(probe, batch, targets, w, forward_seed);
    };
    result.checked = coords.size();
    result.max_error = finite_diff_check(loss_fn, state.params, analytic, coords, h);
    return result;
}

/// Every coordinate of every tensor, no kink filtering; meant for small networks and small h.
inline double check_all_network_gradients(const NetworkState<float>& state32, const Tensor<float>& batch32,
                                          std::span<const std::size_t> targets, const LossWeights& w, double h,
                                          std::uint64_t seed) {
    const NetworkState<double> state = state32.cast<double>();
    const Tensor<double> batch = batch32.cast<double>();
    const std::uint64_t forward_seed = derive_seed(seed, {0xF0});
    const ParamMap<double> analytic = network_dml_gradient(state, batch, targets, w, forward_seed);
    std::vector<ParamCoord> coords;
    for (const auto& [name, t] : state.params) {
        for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({name, i});
    }
    NetworkState<double> probe = state;
    auto loss_fn = [&](const ParamMap<double>& params) {
        probe.params = params;
        return network_dml_loss(probe, batch, targets, w, forward_seed);
    };
    return finite_diff_check(loss_fn, state.params, analytic, coords, h);
}

} // namespace mlse

#endif // MLSE_GRADCHECK_HPP
