#pragma once

// Shared numeric types, error hierarchy and small helpers used by every module.

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

namespace delaymix {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// =============================================================================
// Errors
// =============================================================================

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define DELAYMIX_ERROR(name)                                                   \
    class name : public Error {                                                \
    public:                                                                    \
        using Error::Error;                                                    \
    }

DELAYMIX_ERROR(ShapeError);
DELAYMIX_ERROR(PreconditionError);
DELAYMIX_ERROR(CapacityError);
DELAYMIX_ERROR(EmptyTensorError);
DELAYMIX_ERROR(RankError);
DELAYMIX_ERROR(DataError);
DELAYMIX_ERROR(HorizonError);
DELAYMIX_ERROR(DegenerateError);
DELAYMIX_ERROR(EmptyDatabaseError);
DELAYMIX_ERROR(ConditioningError);
DELAYMIX_ERROR(ConfigError);
DELAYMIX_ERROR(ColdStartError);
DELAYMIX_ERROR(ScenarioError);
DELAYMIX_ERROR(MappingError);
DELAYMIX_ERROR(FormatError);

#undef DELAYMIX_ERROR

/// Non-finite value encountered during a recursion; `step` is the time index.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Malformed text input, with 1-based row/column of the offending cell.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : Error(what + " (row " + std::to_string(row) + ", column " +
                std::to_string(column) + ")"),
          row_(row), column_(column) {}
    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_, column_;
};

/// Wraps a failure raised inside a named pipeline stage of the online engine.
class StageError : public Error {
public:
    StageError(std::string stage, const std::exception& inner)
        : Error(stage + ": " + inner.what()), stage_(std::move(stage)),
          inner_(std::current_exception()) {}
    const std::string& stage() const noexcept { return stage_; }
    std::exception_ptr inner() const noexcept { return inner_; }

private:
    std::string stage_;
    std::exception_ptr inner_;
};

// =============================================================================
// Helpers
// =============================================================================

namespace detail {

inline std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError(name + " has shape " + shape_string(m) + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Moore-Penrose pseudo-inverse; singular values below rel_cutoff * sigma_max
/// are treated as zero.
inline Matrix pinv(const Matrix& m, double rel_cutoff = 1e-10) {
    if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double cutoff = rel_cutoff * (sv.size() > 0 ? sv(0) : 0.0);
    Vector inv = Vector::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline double spectral_radius(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(a, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

} // namespace detail

/// Worker threads allowed for internal parallel loops: the hardware
/// concurrency, capped by DELAYMIX_THREADS when set.
inline std::size_t worker_count() {
    std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DELAYMIX_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) n = std::min(n, static_cast<std::size_t>(v));
    }
    return n;
}

} // namespace delaymix
