#pragma once

// CP component -> Markov sequence -> delay-free state-space model (Ho-Kalman).

#include "delaymix/core.hpp"
#include "delaymix/cpd.hpp"
#include "delaymix/moments.hpp"
#include "delaymix/syslin.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace delaymix {

struct RealizationOptions {
    /// Fixed state dimension; when empty the order is chosen from the singular-value energy.
    std::optional<std::size_t> state_dim;
    double energy_threshold = 0.999;
    std::size_t s = 3;
    /// Eigenvalues of a realized A outside this radius are pulled back onto it;
    /// empty keeps the Ho-Kalman matrices untouched.
    std::optional<double> max_radius = 0.999;

    void validate() const {
        if (s < 1) throw ConfigError("realization s must be >= 1");
        if (max_radius && !(*max_radius > 0.0)) throw ConfigError("max_radius must be > 0");
        if (state_dim && *state_dim < 1) throw ConfigError("state_dim must be >= 1");
        if (!state_dim && !(energy_threshold > 0.0 && energy_threshold < 1.0)) {
            throw ConfigError("energy_threshold must lie in (0, 1)");
        }
    }
};

inline MarkovSequence factor_to_markov(const Vector& q1, const Vector& q2, const Vector& q3,
                                       const MomentConfig& config) {
    const auto dim = static_cast<Eigen::Index>(config.mode_size());
    if (q1.size() != dim || q2.size() != dim || q3.size() != dim) {
        throw ShapeError("component vectors must have length D = " + std::to_string(dim));
    }
    Vector v = q1.cwiseAbs() * (q2.norm() * q3.norm());
    const double vn = v.norm();
    if (vn > 0.0) v /= std::pow(vn, 2.0 / 3.0);
    for (Eigen::Index a = 0; a < dim; ++a) {
        if (q1(a) < 0.0) v(a) = -v(a);
    }
    const auto d = static_cast<Eigen::Index>(config.d);
    const auto dc = static_cast<Eigen::Index>(config.dc);
    const auto p = d * dc;
    std::vector<Matrix> blocks;
    blocks.reserve(config.k_max());
    for (std::size_t k = 0; k < config.k_max(); ++k) {
        // vec() is column-major, matching Eigen's default storage
        blocks.emplace_back(Eigen::Map<const Matrix>(v.data() + static_cast<Eigen::Index>(k) * p, d, dc));
    }
    return MarkovSequence(std::move(blocks));
}

inline MarkovSequence factor_to_markov(const CPFactors::Component& c, const MomentConfig& config) {
    return factor_to_markov(c.q1, c.q2, c.q3, config);
}

inline DelayFreeModel ho_kalman(const MarkovSequence& seq, const RealizationOptions& opts) {
    opts.validate();
    const std::size_t s = opts.s;
    if (seq.horizon() < 2 * s) {
        throw HorizonError("Ho-Kalman needs " + std::to_string(2 * s) + " Markov blocks, got " +
                           std::to_string(seq.horizon()));
    }
    const auto d = static_cast<Eigen::Index>(seq.output_dim());
    const auto dc = static_cast<Eigen::Index>(seq.input_dim());
    const auto si = static_cast<Eigen::Index>(s);
    bool finite = true, nonzero = false;
    for (std::size_t j = 0; j < 2 * s; ++j) {
        finite = finite && seq.blocks()[j].allFinite();
        nonzero = nonzero || !(seq.blocks()[j].array() == 0.0).all();
    }
    if (!finite) throw DegenerateError("Markov sequence contains non-finite values");
    if (!nonzero) throw DegenerateError("Markov sequence is identically zero");

    Matrix hankel(si * d, (si + 1) * dc);
    for (Eigen::Index r = 0; r < si; ++r) {
        for (Eigen::Index c = 0; c <= si; ++c) {
            hankel.block(r * d, c * dc, d, dc) = seq.blocks()[static_cast<std::size_t>(r + c)];
        }
    }
    const Matrix h_minus = hankel.leftCols(si * dc);
    const Matrix h_plus = hankel.rightCols(si * dc);

    Eigen::JacobiSVD<Matrix> svd(h_minus, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    Eigen::Index numeric_rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > 1e-10 * sv(0)) ++numeric_rank;
    }
    if (numeric_rank == 0) throw DegenerateError("Hankel matrix has zero numerical rank");

    Eigen::Index n = 0;
    if (opts.state_dim) {
        n = static_cast<Eigen::Index>(*opts.state_dim);
        if (n > sv.size()) {
            throw RankError("state_dim " + std::to_string(n) + " exceeds Hankel size " + std::to_string(sv.size()));
        }
    } else {
        const double total = sv.squaredNorm();
        double acc = 0.0;
        while (n < sv.size()) {
            acc += sv(n) * sv(n);
            ++n;
            if (acc >= opts.energy_threshold * total) break;
        }
        n = std::min({n, numeric_rank, si * std::min(d, dc)});
    }

    const Vector root = sv.head(n).cwiseSqrt();
    const Matrix obs = svd.matrixU().leftCols(n) * root.asDiagonal();
    const Matrix ctrb = root.asDiagonal() * svd.matrixV().leftCols(n).transpose();
    Matrix a = detail::pinv(obs) * h_plus * detail::pinv(ctrb);
    Matrix b = ctrb.leftCols(dc);
    Matrix c = obs.topRows(d);
    return DelayFreeModel(std::move(a), std::move(b), std::move(c));
}

struct RealizedDatabase {
    std::vector<DelayFreeModel> models;
    /// Markov sequences of the realized components, parallel to `models`.
    std::vector<MarkovSequence> sequences;
    /// CP component index each model came from.
    std::vector<std::size_t> component_index;
    /// One message per skipped component.
    std::vector<std::string> diagnostics;
};

namespace detail {

/// Clips eigenvalue moduli of `a` to `radius`, keeping eigenvectors and phases.
/// Falls back to uniform scaling when the eigenbasis is ill-conditioned.
inline Matrix clip_spectrum(const Matrix& a, double radius) {
    const double rho = spectral_radius(a);
    if (rho <= radius) return a;
    Eigen::ComplexEigenSolver<Matrix> es(a);
    if (es.info() == Eigen::Success) {
        const Eigen::MatrixXcd& v = es.eigenvectors();
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(v);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) > 1e-8 * sv(0)) {
            Eigen::VectorXcd lambda = es.eigenvalues();
            for (Eigen::Index i = 0; i < lambda.size(); ++i) {
                if (std::abs(lambda(i)) > radius) lambda(i) *= radius / std::abs(lambda(i));
            }
            const Eigen::MatrixXcd rebuilt = v * lambda.asDiagonal() * v.inverse();
            if (rebuilt.imag().cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, rebuilt.real().cwiseAbs().maxCoeff())) {
                return rebuilt.real();
            }
        }
    }
    return a * (radius / rho);
}

} // namespace detail

inline RealizedDatabase realize_all(const CPFactors& factors, const MomentConfig& config,
                                    const RealizationOptions& opts) {
    factors.validate();
    RealizedDatabase out;
    for (std::size_t i = 0; i < factors.rank(); ++i) {
        MarkovSequence seq = factor_to_markov(factors.component(i), config);
        try {
            DelayFreeModel model = ho_kalman(seq, opts);
            if (!model.transition().allFinite() || !model.input_map().allFinite() ||
                !model.output_map().allFinite()) {
                throw DegenerateError("realization produced non-finite matrices");
            }
            if (opts.max_radius) {
                model = DelayFreeModel(detail::clip_spectrum(model.transition(), *opts.max_radius), model.input_map(),
                                       model.output_map());
            }
            out.models.push_back(std::move(model));
            out.sequences.push_back(std::move(seq));
            out.component_index.push_back(i);
        } catch (const DegenerateError& e) {
            out.diagnostics.push_back("component " + std::to_string(i) + " skipped: " + e.what());
        }
    }
    if (out.models.empty()) throw EmptyDatabaseError("every CP component was degenerate");
    return out;
}

} // namespace delaymix
