#pragma once

// Rank-R CP decomposition of cubic order-3 tensors by alternating least squares.

#include "delaymix/core.hpp"
#include "delaymix/tensor3.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace delaymix {

/// Factor matrices for modes 1..3, each D x R; column i of every mode forms
/// component i.
struct CPFactors {
    std::array<Matrix, 3> modes;

    CPFactors() = default;
    CPFactors(Matrix q1, Matrix q2, Matrix q3) : modes{std::move(q1), std::move(q2), std::move(q3)} {
        validate();
    }

    std::size_t rank() const noexcept { return static_cast<std::size_t>(modes[0].cols()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(modes[0].rows()); }

    void validate() const {
        if (modes[0].cols() < 1) throw RankError("CP factors need rank >= 1");
        for (const auto& m : modes) {
            if (m.rows() != modes[0].rows() || m.cols() != modes[0].cols()) {
                throw ShapeError("CP factor matrices disagree in shape");
            }
        }
    }

    struct Component {
        Vector q1, q2, q3;
    };
    Component component(std::size_t i) const {
        const auto c = static_cast<Eigen::Index>(i);
        return {modes[0].col(c), modes[1].col(c), modes[2].col(c)};
    }
};

struct AlsOptions {
    std::size_t max_iters = 200;
    double tol = 1e-6;
    std::uint64_t seed = 0;
    std::optional<CPFactors> warm_start;

    void validate() const {
        if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
        if (!(tol > 0.0)) throw ConfigError("tol must be > 0");
    }
};

struct AlsResult {
    CPFactors factors;
    std::size_t iters_used = 0;
    double final_residual = 0.0;
    /// Relative residual of the initial guess followed by one entry per sweep.
    std::vector<double> residual_history;
};

/// ALS could not continue (normal equations singular beyond the ridge rescue);
/// carries the last finite factors.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, CPFactors last)
        : Error(what), last_(std::move(last)) {}
    const CPFactors& last_factors() const noexcept { return last_; }

private:
    CPFactors last_;
};

namespace detail {

/// Column-wise Khatri-Rao product: row (i*rows(y) + j) = x.row(i) .* y.row(j).
inline Matrix khatri_rao(const Matrix& x, const Matrix& y) {
    const auto r = x.cols();
    Matrix out(x.rows() * y.rows(), r);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            out.row(i * y.rows() + j) = x.row(i).cwiseProduct(y.row(j));
        }
    }
    return out;
}

/// Matricized-tensor-times-Khatri-Rao product for the given mode (0, 1, 2).
inline Matrix mttkrp(const Tensor3& t, const CPFactors& f, int mode) {
    const auto dim = static_cast<Eigen::Index>(t.dim());
    const auto r = static_cast<Eigen::Index>(f.rank());
    switch (mode) {
    case 0:
        return t.unfold_front() * khatri_rao(f.modes[1], f.modes[2]);
    case 2:
        return t.unfold_back().transpose() * khatri_rao(f.modes[0], f.modes[1]);
    default: {
        Matrix out = Matrix::Zero(dim, r);
        Matrix scaled(dim, r);
        using RowMajor = Tensor3::RowMajor;
        for (Eigen::Index a = 0; a < dim; ++a) {
            Eigen::Map<const RowMajor> slice(t.data() + a * dim * dim, dim, dim);
            scaled = f.modes[2] * f.modes[0].row(a).asDiagonal();
            out.noalias() += slice * scaled;
        }
        return out;
    }
    }
}

inline double residual_norm(const Tensor3& t, const CPFactors& f) {
    const auto dim = static_cast<Eigen::Index>(t.dim());
    const Matrix kr = khatri_rao(f.modes[1], f.modes[2]); // D^2 x R
    const auto front = t.unfold_front();
    double sum = 0.0;
    for (Eigen::Index a = 0; a < dim; ++a) {
        const Vector row = kr * f.modes[0].row(a).transpose();
        sum += (front.row(a).transpose() - row).squaredNorm();
    }
    return std::sqrt(sum);
}

/// Equalizes per-mode column norms (product preserved) and fixes signs so the
/// largest-magnitude entry of each mode-1 vector is positive, compensating in
/// mode 2.
inline void normalize_components(CPFactors& f) {
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(f.rank()); ++i) {
        const double n1 = f.modes[0].col(i).norm();
        const double n2 = f.modes[1].col(i).norm();
        const double n3 = f.modes[2].col(i).norm();
        if (n1 > 0.0 && n2 > 0.0 && n3 > 0.0) {
            const double target = std::cbrt(n1 * n2 * n3);
            f.modes[0].col(i) *= target / n1;
            f.modes[1].col(i) *= target / n2;
            f.modes[2].col(i) *= target / n3;
        }
        Eigen::Index arg = 0;
        f.modes[0].col(i).cwiseAbs().maxCoeff(&arg);
        if (f.modes[0](arg, i) < 0.0) {
            f.modes[0].col(i) *= -1.0;
            f.modes[1].col(i) *= -1.0;
        }
    }
}

} // namespace detail

/// Dense reconstruction sum_i q1_i (x) q2_i (x) q3_i.
inline Tensor3 reconstruct(const CPFactors& factors, std::size_t dim) {
    factors.validate();
    if (factors.dim() != dim) {
        throw ShapeError("factor length " + std::to_string(factors.dim()) + " differs from D = " +
                         std::to_string(dim));
    }
    Tensor3 out(dim);
    const auto d = static_cast<Eigen::Index>(dim);
    const Matrix kr = detail::khatri_rao(factors.modes[1], factors.modes[2]);
    for (Eigen::Index a = 0; a < d; ++a) {
        const Vector row = kr * factors.modes[0].row(a).transpose();
        std::copy(row.data(), row.data() + row.size(), out.data() + a * d * d);
    }
    return out;
}

inline AlsResult cp_als(const Tensor3& tensor, std::size_t rank, const AlsOptions& opts = {}) {
    opts.validate();
    const std::size_t dim = tensor.dim();
    if (rank < 1 || rank > dim) {
        throw RankError("rank " + std::to_string(rank) + " must lie in [1, D = " + std::to_string(dim) + "]");
    }
    if (!tensor.all_finite()) throw DataError("tensor contains non-finite values");
    const double tnorm = tensor.frobenius_norm();
    if (tnorm == 0.0) throw DataError("cannot decompose an all-zero tensor");

    const auto d = static_cast<Eigen::Index>(dim);
    const auto r = static_cast<Eigen::Index>(rank);
    CPFactors f;
    if (opts.warm_start) {
        f = *opts.warm_start;
        f.validate();
        if (f.dim() != dim || f.rank() != rank) throw ShapeError("warm-start factors do not match tensor and rank");
    } else {
        std::mt19937_64 rng(opts.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& m : f.modes) {
            m.resize(d, r);
            for (Eigen::Index j = 0; j < r; ++j) {
                for (Eigen::Index i = 0; i < d; ++i) m(i, j) = normal(rng);
                m.col(j).normalize();
            }
        }
    }

    AlsResult result;
    double prev = detail::residual_norm(tensor, f) / tnorm;
    result.residual_history.push_back(prev);
    std::size_t it = 0;
    while (it < opts.max_iters) {
        ++it;
        for (int mode = 0; mode < 3; ++mode) {
            const Matrix& x = f.modes[(mode + 1) % 3];
            const Matrix& y = f.modes[(mode + 2) % 3];
            Matrix gram = (x.transpose() * x).cwiseProduct(y.transpose() * y);
            gram.diagonal().array() += 1e-10 * gram.trace();
            const Matrix rhs = detail::mttkrp(tensor, f, mode);
            Eigen::LDLT<Matrix> ldlt(gram);
            Matrix next = ldlt.solve(rhs.transpose()).transpose();
            if (ldlt.info() != Eigen::Success || !next.allFinite()) {
                throw ConvergenceError("ALS normal equations are singular in mode " + std::to_string(mode + 1), f);
            }
            f.modes[mode] = std::move(next);
        }
        const double res = detail::residual_norm(tensor, f) / tnorm;
        result.residual_history.push_back(res);
        // the Gram ridge leaves a relative residual near 1e-10 even for exact fits
        const bool converged = std::abs(prev - res) < opts.tol * prev || res < 1e-9;
        prev = res;
        if (converged) break;
    }
    detail::normalize_components(f);
    result.factors = std::move(f);
    result.iters_used = it;
    result.final_residual = prev;
    return result;
}

// =============================================================================
// Component alignment
// =============================================================================

struct Alignment {
    /// permutation[i] = estimated component matched to reference component i.
    std::vector<std::size_t> permutation;
    /// Per reference component, least-squares scalars s_m with s_m * est_m ~ ref_m.
    std::vector<std::array<double, 3>> scales;
    /// Per reference component, |cosine| between matched vectors in each mode.
    std::vector<std::array<double, 3>> abs_cosines;
};

namespace detail {
inline double abs_cosine(const Vector& x, const Vector& y) {
    const double nx = x.norm(), ny = y.norm();
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return std::abs(x.dot(y)) / (nx * ny);
}
} // namespace detail

/// Greedy maximum-|cosine| matching of mode-1 vectors.
inline Alignment align_components(const CPFactors& estimated, const CPFactors& reference) {
    if (estimated.rank() != reference.rank() || estimated.dim() != reference.dim()) {
        throw ShapeError("factor sets differ in rank or dimension");
    }
    const std::size_t rank = reference.rank();
    Matrix cos(rank, rank); // (reference, estimated)
    for (std::size_t i = 0; i < rank; ++i) {
        for (std::size_t j = 0; j < rank; ++j) {
            cos(i, j) = detail::abs_cosine(reference.modes[0].col(i), estimated.modes[0].col(j));
        }
    }
    Alignment out;
    out.permutation.assign(rank, 0);
    std::vector<bool> ref_used(rank, false), est_used(rank, false);
    for (std::size_t round = 0; round < rank; ++round) {
        double best = -1.0;
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < rank; ++i) {
            if (ref_used[i]) continue;
            for (std::size_t j = 0; j < rank; ++j) {
                if (est_used[j]) continue;
                if (cos(i, j) > best) {
                    best = cos(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        ref_used[bi] = est_used[bj] = true;
        out.permutation[bi] = bj;
    }
    out.scales.resize(rank);
    out.abs_cosines.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const auto ri = static_cast<Eigen::Index>(i);
        const auto ej = static_cast<Eigen::Index>(out.permutation[i]);
        for (int m = 0; m < 3; ++m) {
            const Vector est = estimated.modes[m].col(ej);
            const Vector ref = reference.modes[m].col(ri);
            const double ee = est.squaredNorm();
            out.scales[i][m] = ee > 0.0 ? est.dot(ref) / ee : 0.0;
            out.abs_cosines[i][m] = detail::abs_cosine(est, ref);
        }
    }
    return out;
}

} // namespace delaymix
