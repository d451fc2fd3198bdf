#ifndef MLSE_LOSSES_HPP
#define MLSE_LOSSES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mlse/errors.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

enum class LossKind { CrossEntropy = 0, Hinge = 1, Csd = 2 };

inline std::string loss_name(LossKind k) {
    switch (k) {
    case LossKind::CrossEntropy: return "CE";
    case LossKind::Hinge: return "Hinge";
    case LossKind::Csd: return "CSD";
    }
    return "?";
}

inline constexpr double kDominantWeight = 0.98;
inline constexpr double kRegularizerWeight = 0.02;
inline constexpr double kHingeMargin = 0.5;

/// Coefficients for (CE, Hinge, CSD), in head order.
struct LossWeights {
    std::array<double, 3> lambda{kDominantWeight, kRegularizerWeight, kRegularizerWeight};

    /// Index of the largest coefficient (lowest index on ties).
    LossKind dominant() const {
        return static_cast<LossKind>(std::max_element(lambda.begin(), lambda.end()) - lambda.begin());
    }

    /// True for the rotation schedule's vectors: one 0.98, two 0.02.
    bool is_schedule_weights() const {
        int dom = 0;
        for (double l : lambda) {
            if (l == kDominantWeight) {
                ++dom;
            } else if (l != kRegularizerWeight) {
                return false;
            }
        }
        return dom == 1;
    }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Dominant loss rotates CE -> Hinge -> CSD with period 3.
inline LossWeights loss_weights_for_trial(std::size_t trial_index) {
    LossWeights w;
    w.lambda.fill(kRegularizerWeight);
    w.lambda[trial_index % 3] = kDominantWeight;
    return w;
}

/// Value and gradient with respect to the raw head output.
template <typename Real>
struct LossGrad {
    Real loss = 0;
    std::vector<Real> grad;
};

/// Max-subtracted softmax.
template <typename Real>
std::vector<Real> softmax(std::span<const Real> o) {
    std::vector<Real> p(o.size());
    if (o.empty()) return p;
    const Real m = *std::max_element(o.begin(), o.end());
    Real sum = 0;
    for (std::size_t j = 0; j < o.size(); ++j) {
        p[j] = std::exp(o[j] - m);
        sum += p[j];
    }
    for (auto& v : p) v /= sum;
    return p;
}

namespace detail {

inline void check_target(std::size_t target, std::size_t classes) {
    if (target >= classes) {
        throw DataError("class index " + std::to_string(target) + " outside [0," + std::to_string(classes) + ")");
    }
}

template <typename Real>
Real clamped_log(Real p) {
    return std::log(std::max(p, static_cast<Real>(1e-38)));
}

} // namespace detail

/// -log p_t; gradient wrt the logits is p - y.
template <typename Real>
LossGrad<Real> cross_entropy(std::size_t target, std::span<const Real> probs) {
    detail::check_target(target, probs.size());
    LossGrad<Real> r;
    r.loss = -detail::clamped_log(probs[target]);
    r.grad.assign(probs.begin(), probs.end());
    r.grad[target] -= Real{1};
    return r;
}

/// Sum_j max(0, 1/2 - y_j o_j)^2 with y = +1 at the target and -1 elsewhere; raw outputs.
template <typename Real>
LossGrad<Real> squared_hinge(std::size_t target, std::span<const Real> logits) {
    detail::check_target(target, logits.size());
    LossGrad<Real> r;
    r.grad.assign(logits.size(), Real{0});
    for (std::size_t j = 0; j < logits.size(); ++j) {
        const Real y = j == target ? Real{1} : Real{-1};
        const Real viol = std::max(Real{0}, static_cast<Real>(kHingeMargin) - y * logits[j]);
        r.loss += viol * viol;
        r.grad[j] = -2 * y * viol;
    }
    return r;
}

/**
 * Cauchy-Schwarz divergence: -log p_t + log ||p||_2, the norm taken over the
 * probability vector. Gradient wrt the logits is p^2 / ||p||^2 - y.
 */
template <typename Real>
LossGrad<Real> csd(std::size_t target, std::span<const Real> probs) {
    detail::check_target(target, probs.size());
    Real sq = 0;
    for (Real p : probs) sq += p * p;
    LossGrad<Real> r;
    r.loss = -detail::clamped_log(probs[target]) + Real{0.5} * std::log(sq);
    r.grad.resize(probs.size());
    for (std::size_t j = 0; j < probs.size(); ++j) r.grad[j] = probs[j] * probs[j] / sq;
    r.grad[target] -= Real{1};
    return r;
}

template <typename Real>
struct DmlResult {
    Real loss = 0;
    std::array<Real, 3> parts{}; // unweighted CE, Hinge, CSD
    std::array<std::vector<Real>, 3> grads;
};

inline void check_dml_weights(const LossWeights& w) {
    bool any = false;
    for (double l : w.lambda) {
        if (!std::isfinite(l) || l < 0.0) {
            throw ParameterError("loss coefficients must be finite and non-negative");
        }
        any = any || l > 0.0;
    }
    if (!any) {
        throw ParameterError("at least one loss coefficient must be positive");
    }
}

/// Weighted CE(head0) + Hinge(head1) + CSD(head2); each head receives only its own loss gradient.
template <typename Real>
DmlResult<Real> dml(std::size_t target, const std::array<std::span<const Real>, 3>& heads, const LossWeights& w) {
    check_dml_weights(w);
    const auto p_ce = softmax<Real>(heads[0]);
    const auto p_csd = softmax<Real>(heads[2]);
    LossGrad<Real> parts[3] = {cross_entropy<Real>(target, p_ce), squared_hinge<Real>(target, heads[1]),
                               csd<Real>(target, p_csd)};
    DmlResult<Real> r;
    for (std::size_t k = 0; k < 3; ++k) {
        const Real lam = static_cast<Real>(w.lambda[k]);
        r.parts[k] = parts[k].loss;
        r.loss += lam * parts[k].loss;
        r.grads[k] = std::move(parts[k].grad);
        for (auto& g : r.grads[k]) g *= lam;
    }
    return r;
}

template <typename Real>
struct BatchDml {
    Real loss = 0;
    std::array<Tensor<Real>, 3> head_grads;
};

/// Batch mean of dml; head gradients are per-sample gradients divided by the batch size.
template <typename Real>
BatchDml<Real> dml_batch(const std::array<Tensor<Real>, 3>& heads, std::span<const std::size_t> targets,
                         const LossWeights& w) {
    const std::size_t N = heads[0].dim(0);
    if (targets.size() != N) {
        throw DimensionError("target count " + std::to_string(targets.size()) + " vs batch " + std::to_string(N));
    }
    BatchDml<Real> out;
    for (std::size_t k = 0; k < 3; ++k) out.head_grads[k] = Tensor<Real>(heads[k].shape());
    const Real inv_n = Real{1} / static_cast<Real>(N);
    for (std::size_t n = 0; n < N; ++n) {
        const std::array<std::span<const Real>, 3> rows{heads[0].row(n), heads[1].row(n), heads[2].row(n)};
        auto r = dml<Real>(targets[n], rows, w);
        out.loss += r.loss;
        for (std::size_t k = 0; k < 3; ++k) {
            auto dst = out.head_grads[k].row(n);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = r.grads[k][j] * inv_n;
        }
    }
    out.loss *= inv_n;
    return out;
}

} // namespace mlse

#endif // MLSE_LOSSES_HPP
