#ifndef MLSE_OPTIMIZER_HPP
#define MLSE_OPTIMIZER_HPP

#include <cmath>
#include <string>

#include "mlse/errors.hpp"
#include "mlse/network.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

template <typename Real>
struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    ParamMap<Real> velocity;

    static OptimizerState for_params(const ParamMap<Real>& params, double lr, double momentum) {
        if (!(lr >= 0.0) || !std::isfinite(lr)) {
            throw ParameterError("learning rate must be finite and non-negative");
        }
        if (!(momentum >= 0.0 && momentum < 1.0)) {
            throw ParameterError("momentum must lie in [0,1)");
        }
        return OptimizerState{lr, momentum, zeros_like(params)};
    }
};

/// v <- mu*v + g ; w <- w - lr*(g + mu*v). Validates everything before touching the state.
template <typename Real>
void nesterov_step(ParamMap<Real>& params, OptimizerState<Real>& opt, const ParamMap<Real>& grads) {
    require_congruent(params, grads, "gradient map");
    require_congruent(params, opt.velocity, "velocity map");
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) {
            throw NumericError("non-finite gradient in tensor '" + name + "'");
        }
    }
    const Real mu = static_cast<Real>(opt.momentum);
    const Real lr = static_cast<Real>(opt.learning_rate);
    for (auto& [name, w] : params) {
        const Tensor<Real>& g = grads.at(name);
        Tensor<Real>& v = opt.velocity.at(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            w[i] -= lr * (g[i] + mu * v[i]);
        }
    }
}

template <typename Real>
void nesterov_step(NetworkState<Real>& state, OptimizerState<Real>& opt, const ParamMap<Real>& grads) {
    nesterov_step(state.params, opt, grads);
}

} // namespace mlse

#endif // MLSE_OPTIMIZER_HPP
