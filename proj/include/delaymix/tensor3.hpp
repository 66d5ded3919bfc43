#pragma once

#include "delaymix/core.hpp"

#include <cmath>
#include <vector>

namespace delaymix {

/// Dense cubic order-3 array, row-major: element (a, b, c) lives at a*D*D + b*D + c.
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(std::size_t dim) : dim_(dim), data_(dim * dim * dim, 0.0) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t a, std::size_t b, std::size_t c) noexcept {
        return data_[(a * dim_ + b) * dim_ + c];
    }
    double operator()(std::size_t a, std::size_t b, std::size_t c) const noexcept {
        return data_[(a * dim_ + b) * dim_ + c];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    /// Mode-1 unfolding viewed as a D x D^2 row-major matrix.
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajor> unfold_front() const {
        const auto d = static_cast<Eigen::Index>(dim_);
        return Eigen::Map<const RowMajor>(data_.data(), d, d * d);
    }
    /// The same memory viewed as D^2 x D (rows indexed by a*D + b).
    Eigen::Map<const RowMajor> unfold_back() const {
        const auto d = static_cast<Eigen::Index>(dim_);
        return Eigen::Map<const RowMajor>(data_.data(), d * d, d);
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool is_zero() const {
        for (double v : data_) {
            if (v != 0.0) return false;
        }
        return true;
    }

    Tensor3& operator*=(double c) {
        for (auto& v : data_) v *= c;
        return *this;
    }

    friend Tensor3 operator-(const Tensor3& x, const Tensor3& y) {
        if (x.dim_ != y.dim_) throw ShapeError("tensor dimensions differ");
        Tensor3 out(x.dim_);
        for (std::size_t i = 0; i < x.data_.size(); ++i) out.data_[i] = x.data_[i] - y.data_[i];
        return out;
    }

    double max_abs_diff(const Tensor3& other) const {
        if (dim_ != other.dim_) throw ShapeError("tensor dimensions differ");
        double m = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
        return m;
    }

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

} // namespace delaymix
