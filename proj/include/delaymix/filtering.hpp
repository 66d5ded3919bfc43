#pragma once

// Kalman filter, RTS smoother, window scoring, regime selection and forecasting
// for delay-free models.

#include "delaymix/core.hpp"
#include "delaymix/syslin.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace delaymix {

struct NoiseSpec {
    double process_var = 1e-4;
    double obs_var = 1e-2;
    double prior_var = 1.0;
    /// Prior state mean; zero when empty.
    std::optional<Vector> prior_mean;

    void validate() const {
        if (!(process_var > 0.0) || !(obs_var > 0.0) || !(prior_var > 0.0)) {
            throw ConfigError("noise variances must be > 0");
        }
    }
};

struct BeliefTrace {
    std::vector<Vector> filtered_means;
    std::vector<Matrix> filtered_covs;
    std::vector<Vector> predicted_means;
    std::vector<Matrix> predicted_covs;
    std::vector<Matrix> gains;
    std::vector<Vector> one_step_predictions;

    std::size_t length() const noexcept { return filtered_means.size(); }
};

struct SmoothedTrace {
    std::vector<Vector> smoothed_means;
    std::vector<Matrix> smoother_gains; // length T - 1
    std::vector<Matrix> smoothed_covs;
};

namespace detail {

/// Cholesky of a symmetric matrix, retrying once with a 1e-9 diagonal jitter.
inline Eigen::LLT<Matrix> spd_factor(const Matrix& m, const char* what, std::size_t step) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() == Eigen::Success) return llt;
    Matrix jittered = m;
    jittered.diagonal().array() += 1e-9;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success) {
        throw ConditioningError(std::string(what) + " is not positive definite at step " + std::to_string(step));
    }
    return llt;
}

inline void check_window(const DelayFreeModel& model, const Trajectory& window) {
    window.validate();
    if (window.length() < 1) throw ShapeError("window must contain at least one step");
    if (window.output_dim() != model.output_dim() || window.input_dim() != model.input_dim()) {
        throw ShapeError("window dimensions (" + std::to_string(window.output_dim()) + ", " +
                         std::to_string(window.input_dim()) + ") do not match the model (" +
                         std::to_string(model.output_dim()) + ", " + std::to_string(model.input_dim()) + ")");
    }
}

} // namespace detail

inline BeliefTrace kalman_forward(const DelayFreeModel& model, const Trajectory& window, const NoiseSpec& noise) {
    noise.validate();
    detail::check_window(model, window);
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    const auto d = static_cast<Eigen::Index>(model.output_dim());
    const Matrix& A = model.transition();
    const Matrix& B = model.input_map();
    const Matrix& C = model.output_map();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix R = noise.obs_var * Matrix::Identity(d, d);

    Vector mean = noise.prior_mean ? *noise.prior_mean : Vector::Zero(n);
    if (mean.size() != n) throw ShapeError("prior_mean has the wrong dimension");
    Matrix cov = noise.prior_var * I;

    const std::size_t T = window.length();
    BeliefTrace trace;
    trace.filtered_means.reserve(T);
    trace.filtered_covs.reserve(T);
    trace.predicted_means.reserve(T);
    trace.predicted_covs.reserve(T);
    trace.gains.reserve(T);
    trace.one_step_predictions.reserve(T);

    for (std::size_t t = 0; t < T; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        Vector pred_mean;
        Matrix pred_cov;
        if (t == 0) {
            pred_mean = mean;
            pred_cov = cov;
        } else {
            pred_mean = A * mean + B * window.inputs.col(ti - 1);
            pred_cov = A * cov * A.transpose();
            pred_cov.diagonal().array() += noise.process_var;
        }
        pred_cov = 0.5 * (pred_cov + pred_cov.transpose()).eval();

        const Vector y_hat = C * pred_mean;
        const Matrix S = C * pred_cov * C.transpose() + R;
        const auto llt = detail::spd_factor(S, "innovation covariance", t);
        const Matrix gain = llt.solve(C * pred_cov).transpose(); // P̂ Cᵀ S⁻¹
        mean = pred_mean + gain * (window.outputs.col(ti) - y_hat);
        // Joseph form: algebraically (I - K C) P̂ for the optimal gain, but stays PSD in floating point
        const Matrix ikc = I - gain * C;
        cov = ikc * pred_cov * ikc.transpose() + gain * R * gain.transpose();
        cov = 0.5 * (cov + cov.transpose()).eval();

        if (!mean.allFinite() || !cov.allFinite()) throw NumericalError("Kalman filter diverged", t);
        trace.predicted_means.push_back(std::move(pred_mean));
        trace.predicted_covs.push_back(std::move(pred_cov));
        trace.gains.push_back(gain);
        trace.one_step_predictions.push_back(y_hat);
        trace.filtered_means.push_back(mean);
        trace.filtered_covs.push_back(cov);
    }
    return trace;
}

inline SmoothedTrace rts_smoother(const DelayFreeModel& model, const BeliefTrace& trace) {
    const std::size_t T = trace.length();
    if (T == 0) throw ShapeError("empty belief trace");
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    if (trace.filtered_means.front().size() != n) throw ShapeError("trace was not produced by this model");
    const Matrix& A = model.transition();

    SmoothedTrace out;
    out.smoothed_means.assign(T, Vector());
    out.smoothed_covs.assign(T, Matrix());
    out.smoother_gains.assign(T - 1, Matrix());
    out.smoothed_means[T - 1] = trace.filtered_means[T - 1];
    out.smoothed_covs[T - 1] = trace.filtered_covs[T - 1];
    for (std::size_t t = T - 1; t-- > 0;) {
        const Matrix& pred_cov = trace.predicted_covs[t + 1];
        const auto llt = detail::spd_factor(pred_cov, "predicted covariance", t + 1);
        // V = P Aᵀ P̂⁻¹, computed as (P̂⁻¹ A P)ᵀ using symmetry
        const Matrix gain = llt.solve(A * trace.filtered_covs[t]).transpose();
        out.smoothed_means[t] =
            trace.filtered_means[t] + gain * (out.smoothed_means[t + 1] - trace.predicted_means[t + 1]);
        Matrix cov = trace.filtered_covs[t] + gain * (out.smoothed_covs[t + 1] - pred_cov) * gain.transpose();
        out.smoothed_covs[t] = 0.5 * (cov + cov.transpose());
        if (!out.smoothed_means[t].allFinite()) throw NumericalError("RTS smoother diverged", t);
        out.smoother_gains[t] = gain;
    }
    return out;
}

/// Mean one-step prediction error norm over steps [warmup, T).
inline double window_error(const DelayFreeModel& model, const Trajectory& window, const NoiseSpec& noise,
                           std::size_t warmup = 0) {
    const BeliefTrace trace = kalman_forward(model, window, noise);
    if (warmup >= trace.length()) throw PreconditionError("warm-up covers the whole window");
    double sum = 0.0;
    for (std::size_t t = warmup; t < trace.length(); ++t) {
        sum += (window.outputs.col(static_cast<Eigen::Index>(t)) - trace.one_step_predictions[t]).norm();
    }
    return sum / static_cast<double>(trace.length() - warmup);
}

struct Selection {
    std::size_t index = 0;
    double error = std::numeric_limits<double>::infinity();
};

inline Selection select_regime(const std::vector<DelayFreeModel>& database, const Trajectory& window,
                               const NoiseSpec& noise) {
    if (database.empty()) throw EmptyDatabaseError("cannot select from an empty model database");
    Selection best;
    for (std::size_t i = 0; i < database.size(); ++i) {
        const double e = window_error(database[i], window, noise);
        if (i == 0 || e < best.error) best = {i, e};
    }
    return best;
}

/// Forecasts y(T) .. y(T + l_s - 1) for a window of length T. The first step is
/// driven by the last window input u(T-1); later steps consume future_inputs in
/// order, so the final future input is not needed for the outputs returned.
inline Matrix forecast(const DelayFreeModel& model, const Trajectory& window, const Matrix& future_inputs,
                       const NoiseSpec& noise) {
    if (future_inputs.cols() < 1) throw PreconditionError("forecast horizon must be >= 1");
    if (future_inputs.rows() != static_cast<Eigen::Index>(model.input_dim())) {
        throw ShapeError("future inputs have the wrong number of channels");
    }
    const BeliefTrace trace = kalman_forward(model, window, noise);
    const SmoothedTrace smoothed = rts_smoother(model, trace);
    const auto last = static_cast<Eigen::Index>(window.length()) - 1;
    const auto ls = future_inputs.cols();
    Matrix out(model.output_dim(), ls);
    Vector x = smoothed.smoothed_means.back();
    for (Eigen::Index h = 0; h < ls; ++h) {
        const auto u = h == 0 ? window.inputs.col(last) : future_inputs.col(h - 1);
        x = model.transition() * x + model.input_map() * u;
        out.col(h) = model.output_map() * x;
    }
    return out;
}

} // namespace delaymix
