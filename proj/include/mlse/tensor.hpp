#ifndef MLSE_TENSOR_HPP
#define MLSE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlse/errors.hpp"

namespace mlse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ')';
    return os.str();
}

/// Dense row-major N-dimensional array.
template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real{0}) : shape_(std::move(shape)) {
        check_dims();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (shape_size(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " elements");
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }

    Real& operator[](std::size_t i) noexcept { return data_[i]; }
    const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Row i of a tensor viewed as (dim(0), size/dim(0)).
    std::span<Real> row(std::size_t i) {
        const std::size_t stride = size() / shape_.at(0);
        return std::span<Real>(data_).subspan(i * stride, stride);
    }
    std::span<const Real> row(std::size_t i) const {
        const std::size_t stride = size() / shape_.at(0);
        return std::span<const Real>(data_).subspan(i * stride, stride);
    }

    void reshape(Shape shape) {
        if (shape_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        shape_ = std::move(shape);
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    template <typename To>
    Tensor<To> cast() const {
        std::vector<To> out(data_.begin(), data_.end());
        return Tensor<To>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_dims() const {
        for (auto d : shape_) {
            if (d == 0) {
                throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<Real> data_;
};

/// Named tensors. Ordered so iteration (and thus serialization and RNG use) is deterministic.
template <typename Real>
using ParamMap = std::map<std::string, Tensor<Real>>;

template <typename To, typename From>
ParamMap<To> cast_params(const ParamMap<From>& in) {
    ParamMap<To> out;
    for (const auto& [name, t] : in) {
        out.emplace(name, t.template cast<To>());
    }
    return out;
}

/// Throws ConsistencyError unless both maps have identical names and shapes.
template <typename A, typename B>
void require_congruent(const ParamMap<A>& a, const ParamMap<B>& b, const std::string& what) {
    if (a.size() != b.size()) {
        throw ConsistencyError(what + ": tensor count " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
    }
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) {
            throw ConsistencyError(what + ": tensor '" + ia->first + "' vs '" + ib->first + "'");
        }
        if (ia->second.shape() != ib->second.shape()) {
            throw ConsistencyError(what + ": tensor '" + ia->first + "' shape " +
                                   shape_string(ia->second.shape()) + " vs " + shape_string(ib->second.shape()));
        }
    }
}

} // namespace mlse

#endif // MLSE_TENSOR_HPP
