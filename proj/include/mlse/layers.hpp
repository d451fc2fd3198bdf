#ifndef MLSE_LAYERS_HPP
#define MLSE_LAYERS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "mlse/errors.hpp"
#include "mlse/rng.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

inline constexpr double kRreluLower = 1.0 / 8.0;
inline constexpr double kRreluUpper = 1.0 / 3.0;
inline constexpr double kRreluEvalSlope = (kRreluLower + kRreluUpper) / 2.0;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Raw {0,1} mask: each element is 0 with probability p. No rescaling.
template <typename Real = float>
Tensor<Real> make_dropout_mask(const Shape& shape, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ParameterError("dropout probability must lie in [0,1], got " + std::to_string(p));
    }
    Tensor<Real> mask(shape);
    for (auto& m : mask.values()) {
        m = rng.uniform() < p ? Real{0} : Real{1};
    }
    return mask;
}

namespace kernels {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using ColVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
template <typename Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

struct ConvGeometry {
    std::size_t channels, height, width; // input
    std::size_t kernel, stride, pad;
    std::size_t out_height, out_width;

    std::size_t patch() const { return channels * kernel * kernel; }
    std::size_t positions() const { return out_height * out_width; }
};

/// Unfolds one image (C,H,W) into a (C*k*k, Ho*Wo) matrix; padding reads as zero.
template <typename Real>
void im2col(const Real* x, const ConvGeometry& g, Real* col) {
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                Real* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * P;
                for (std::size_t oy = 0; oy < g.out_height; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        dst[oy * g.out_width + ox] =
                            inside ? x[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                                       static_cast<std::size_t>(ix)]
                                   : Real{0};
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: accumulates the columns back into the image gradient.
template <typename Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* dx) {
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const Real* src = col + ((c * g.kernel + ky) * g.kernel + kx) * P;
                for (std::size_t oy = 0; oy < g.out_height; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        dx[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
                            src[oy * g.out_width + ox];
                    }
                }
            }
        }
    }
}

/// x: (N,C,H,W); weight: (Cout, C*k*k); returns (N,Cout,Ho,Wo).
template <typename Real>
Tensor<Real> conv_forward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                          const ConvGeometry& g) {
    const std::size_t N = x.dim(0);
    const std::size_t Cout = weight.dim(0);
    const std::size_t K = g.patch();
    const std::size_t P = g.positions();
    Tensor<Real> y({N, Cout, g.out_height, g.out_width});
    std::vector<Real> col(K * P);
    Eigen::Map<const RowMat<Real>> W(weight.data(), static_cast<Eigen::Index>(Cout), static_cast<Eigen::Index>(K));
    Eigen::Map<const ColVec<Real>> b(bias.data(), static_cast<Eigen::Index>(Cout));
    const std::size_t in_stride = g.channels * g.height * g.width;
    for (std::size_t n = 0; n < N; ++n) {
        im2col(x.data() + n * in_stride, g, col.data());
        Eigen::Map<const RowMat<Real>> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        Eigen::Map<RowMat<Real>> Y(y.data() + n * Cout * P, static_cast<Eigen::Index>(Cout),
                                   static_cast<Eigen::Index>(P));
        Y.noalias() = W * C;
        Y.colwise() += b;
    }
    return y;
}

/// Accumulates dW, db and returns dx for a conv layer.
template <typename Real>
Tensor<Real> conv_backward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& dy,
                           const ConvGeometry& g, Tensor<Real>& dweight, Tensor<Real>& dbias) {
    const std::size_t N = x.dim(0);
    const std::size_t Cout = weight.dim(0);
    const std::size_t K = g.patch();
    const std::size_t P = g.positions();
    Tensor<Real> dx(x.shape());
    std::vector<Real> col(K * P);
    std::vector<Real> dcol(K * P);
    Eigen::Map<const RowMat<Real>> W(weight.data(), static_cast<Eigen::Index>(Cout), static_cast<Eigen::Index>(K));
    Eigen::Map<RowMat<Real>> dW(dweight.data(), static_cast<Eigen::Index>(Cout), static_cast<Eigen::Index>(K));
    Eigen::Map<ColVec<Real>> db(dbias.data(), static_cast<Eigen::Index>(Cout));
    const std::size_t in_stride = g.channels * g.height * g.width;
    for (std::size_t n = 0; n < N; ++n) {
        im2col(x.data() + n * in_stride, g, col.data());
        Eigen::Map<const RowMat<Real>> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        Eigen::Map<const RowMat<Real>> dY(dy.data() + n * Cout * P, static_cast<Eigen::Index>(Cout),
                                          static_cast<Eigen::Index>(P));
        dW.noalias() += dY * C.transpose();
        db += dY.rowwise().sum();
        Eigen::Map<RowMat<Real>> dC(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dC.noalias() = W.transpose() * dY;
        col2im_add(dcol.data(), g, dx.data() + n * in_stride);
    }
    return dx;
}

/// x: (N, in) ; weight (out, in) ; y = x W^T + b.
template <typename Real>
Tensor<Real> fc_forward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
    const auto N = static_cast<Eigen::Index>(x.dim(0));
    const auto in = static_cast<Eigen::Index>(x.size() / x.dim(0));
    const auto out = static_cast<Eigen::Index>(weight.dim(0));
    if (static_cast<Eigen::Index>(weight.dim(1)) != in) {
        throw DimensionError("fc input width " + std::to_string(in) + " vs weight " + shape_string(weight.shape()));
    }
    Tensor<Real> y({x.dim(0), weight.dim(0)});
    Eigen::Map<const RowMat<Real>> X(x.data(), N, in);
    Eigen::Map<const RowMat<Real>> W(weight.data(), out, in);
    Eigen::Map<const RowVec<Real>> b(bias.data(), out);
    Eigen::Map<RowMat<Real>> Y(y.data(), N, out);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += b;
    return y;
}

template <typename Real>
Tensor<Real> fc_backward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& dy,
                         Tensor<Real>& dweight, Tensor<Real>& dbias) {
    const auto N = static_cast<Eigen::Index>(x.dim(0));
    const auto in = static_cast<Eigen::Index>(x.size() / x.dim(0));
    const auto out = static_cast<Eigen::Index>(weight.dim(0));
    Eigen::Map<const RowMat<Real>> X(x.data(), N, in);
    Eigen::Map<const RowMat<Real>> W(weight.data(), out, in);
    Eigen::Map<const RowMat<Real>> dY(dy.data(), N, out);
    Eigen::Map<RowMat<Real>> dW(dweight.data(), out, in);
    Eigen::Map<RowVec<Real>> db(dbias.data(), out);
    dW.noalias() += dY.transpose() * X;
    db += dY.colwise().sum();
    Tensor<Real> dx(x.shape());
    Eigen::Map<RowMat<Real>> dX(dx.data(), N, in);
    dX.noalias() = dY * W;
    return dx;
}

/// Batch-norm statistics over (N, C, S): per channel C across N*S values.
template <typename Real>
struct BatchNormCache {
    Tensor<Real> xhat;
    std::vector<Real> inv_std;
    std::vector<Real> mean;
    std::vector<Real> var; // biased
};

template <typename Real>
Tensor<Real> batchnorm_train(const Tensor<Real>& x, std::size_t channels, const Tensor<Real>& gamma,
                             const Tensor<Real>& beta, BatchNormCache<Real>& cache) {
    const std::size_t N = x.dim(0);
    const std::size_t S = x.size() / (N * channels);
    const double M = static_cast<double>(N * S);
    cache.mean.assign(channels, Real{0});
    cache.var.assign(channels, Real{0});
    cache.inv_std.assign(channels, Real{0});
    cache.xhat = Tensor<Real>(x.shape());
    Tensor<Real> y(x.shape());
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const Real* p = x.data() + (n * channels + c) * S;
            for (std::size_t s = 0; s < S; ++s) sum += static_cast<double>(p[s]);
        }
        const double mean = sum / M;
        double sq = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const Real* p = x.data() + (n * channels + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
                const double d = static_cast<double>(p[s]) - mean;
                sq += d * d;
            }
        }
        const double var = sq / M;
        const Real inv = static_cast<Real>(1.0 / std::sqrt(var + kBatchNormEpsilon));
        const Real m = static_cast<Real>(mean);
        cache.mean[c] = m;
        cache.var[c] = static_cast<Real>(var);
        cache.inv_std[c] = inv;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * channels + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
                const Real xh = (x[off + s] - m) * inv;
                cache.xhat[off + s] = xh;
                y[off + s] = gamma[c] * xh + beta[c];
            }
        }
    }
    return y;
}

template <typename Real>
Tensor<Real> batchnorm_eval(const Tensor<Real>& x, std::size_t channels, const Tensor<Real>& gamma,
                            const Tensor<Real>& beta, const Tensor<Real>& running_mean,
                            const Tensor<Real>& running_var) {
    const std::size_t N = x.dim(0);
    const std::size_t S = x.size() / (N * channels);
    Tensor<Real> y(x.shape());
    for (std::size_t c = 0; c < channels; ++c) {
        const Real inv = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + kBatchNormEpsilon));
        const Real scale = gamma[c] * inv;
        const Real shift = beta[c] - running_mean[c] * scale;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * channels + c) * S;
            for (std::size_t s = 0; s < S; ++s) y[off + s] = x[off + s] * scale + shift;
        }
    }
    return y;
}

template <typename Real>
Tensor<Real> batchnorm_backward(const Tensor<Real>& dy, std::size_t channels, const Tensor<Real>& gamma,
                                const BatchNormCache<Real>& cache, Tensor<Real>& dgamma, Tensor<Real>& dbeta) {
    const std::size_t N = dy.dim(0);
    const std::size_t S = dy.size() / (N * channels);
    const Real M = static_cast<Real>(N * S);
    Tensor<Real> dx(dy.shape());
    for (std::size_t c = 0; c < channels; ++c) {
        Real sum_dy = 0;
        Real sum_dy_xhat = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * channels + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
                sum_dy += dy[off + s];
                sum_dy_xhat += dy[off + s] * cache.xhat[off + s];
            }
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        const Real k = gamma[c] * cache.inv_std[c] / M;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * channels + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
                dx[off + s] = k * (M * dy[off + s] - sum_dy - cache.xhat[off + s] * sum_dy_xhat);
            }
        }
    }
    return dx;
}

/// Max pooling over (N,C,H,W); padded cells never win. argmax holds flat input offsets.
template <typename Real>
Tensor<Real> maxpool_forward(const Tensor<Real>& x, std::size_t kernel, std::size_t stride, std::size_t pad,
                             std::size_t out_h, std::size_t out_w, std::vector<std::size_t>& argmax) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<Real> y({N, C, out_h, out_w});
    argmax.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const std::size_t base = nc * H * W;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
                Real best = -std::numeric_limits<Real>::infinity();
                std::size_t best_idx = std::numeric_limits<std::size_t>::max();
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        const std::size_t idx =
                            base + static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
                        if (best_idx == std::numeric_limits<std::size_t>::max() || x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                if (best_idx == std::numeric_limits<std::size_t>::max()) {
                    // window entirely in padding; cannot occur when pad < kernel
                    throw DimensionError("pooling window covers only padding");
                }
                y[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    return y;
}

template <typename Real>
Tensor<Real> maxpool_backward(const Tensor<Real>& dy, const Shape& input_shape,
                              const std::vector<std::size_t>& argmax) {
    Tensor<Real> dx(input_shape);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
    return dx;
}

} // namespace kernels
} // namespace mlse

#endif // MLSE_LAYERS_HPP
