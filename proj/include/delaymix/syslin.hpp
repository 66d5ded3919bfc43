#pragma once

// Linear time-delay systems, their delay-free embeddings, impulse responses
// (Markov parameters) and the delay readout from impulse-response profiles.
//
// Time series are stored column-per-step: a trajectory of T outputs in R^d is
// a d x T matrix whose column t is y(t).

#include "delaymix/core.hpp"

#include <optional>
#include <vector>

namespace delaymix {

// =============================================================================
// Types
// =============================================================================

/// x(t+1) = A x(t) + B u(t - delay),  y(t) = C x(t).
class TimeDelaySystem {
public:
    TimeDelaySystem(Matrix transition, Matrix input_map, Matrix output_map,
                    std::size_t delay)
        : transition_(std::move(transition)), input_map_(std::move(input_map)),
          output_map_(std::move(output_map)), delay_(delay) {
        const auto k = transition_.rows();
        if (k < 1) throw ShapeError("transition must be at least 1x1");
        detail::require_shape(transition_, k, k, "transition");
        if (input_map_.rows() != k) {
            throw ShapeError("input_map has shape " + detail::shape_string(input_map_) +
                             ", expected " + std::to_string(k) + " rows");
        }
        if (output_map_.cols() != k) {
            throw ShapeError("output_map has shape " + detail::shape_string(output_map_) +
                             ", expected " + std::to_string(k) + " columns");
        }
        if (input_map_.cols() < 1 || output_map_.rows() < 1) {
            throw ShapeError("input and output dimensions must be at least 1");
        }
    }

    const Matrix& transition() const noexcept { return transition_; }
    const Matrix& input_map() const noexcept { return input_map_; }
    const Matrix& output_map() const noexcept { return output_map_; }
    std::size_t delay() const noexcept { return delay_; }
    std::size_t state_dim() const noexcept { return static_cast<std::size_t>(transition_.rows()); }
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(input_map_.cols()); }
    std::size_t output_dim() const noexcept { return static_cast<std::size_t>(output_map_.rows()); }

    double spectral_radius() const { return detail::spectral_radius(transition_); }
    bool is_stable() const { return spectral_radius() < 1.0; }

private:
    Matrix transition_, input_map_, output_map_;
    std::size_t delay_;
};

/// x(t+1) = A x(t) + B u(t),  y(t) = C x(t).
class DelayFreeModel {
public:
    DelayFreeModel(Matrix transition, Matrix input_map, Matrix output_map)
        : transition_(std::move(transition)), input_map_(std::move(input_map)),
          output_map_(std::move(output_map)) {
        const auto n = transition_.rows();
        if (n < 1) throw ShapeError("state_dim must be at least 1");
        detail::require_shape(transition_, n, n, "transition");
        if (input_map_.rows() != n || input_map_.cols() < 1) {
            throw ShapeError("input_map has shape " + detail::shape_string(input_map_) +
                             ", expected " + std::to_string(n) + " rows");
        }
        if (output_map_.cols() != n || output_map_.rows() < 1) {
            throw ShapeError("output_map has shape " + detail::shape_string(output_map_) +
                             ", expected " + std::to_string(n) + " columns");
        }
    }

    const Matrix& transition() const noexcept { return transition_; }
    const Matrix& input_map() const noexcept { return input_map_; }
    const Matrix& output_map() const noexcept { return output_map_; }
    std::size_t state_dim() const noexcept { return static_cast<std::size_t>(transition_.rows()); }
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(input_map_.cols()); }
    std::size_t output_dim() const noexcept { return static_cast<std::size_t>(output_map_.rows()); }

    /// Same dynamics with the input map multiplied by `gain`.
    DelayFreeModel with_input_gain(double gain) const {
        return DelayFreeModel(transition_, input_map_ * gain, output_map_);
    }

private:
    Matrix transition_, input_map_, output_map_;
};

/// Impulse-response blocks g_1 .. g_K, each d x dc. blocks()[j-1] holds g_j.
class MarkovSequence {
public:
    explicit MarkovSequence(std::vector<Matrix> blocks) : blocks_(std::move(blocks)) {
        if (blocks_.empty()) throw ShapeError("Markov sequence needs at least one block");
        const auto r = blocks_.front().rows(), c = blocks_.front().cols();
        for (std::size_t j = 0; j < blocks_.size(); ++j) {
            if (blocks_[j].rows() != r || blocks_[j].cols() != c) {
                throw ShapeError("Markov block " + std::to_string(j + 1) + " has shape " +
                                 detail::shape_string(blocks_[j]) + ", expected " +
                                 std::to_string(r) + "x" + std::to_string(c));
            }
        }
    }

    const std::vector<Matrix>& blocks() const noexcept { return blocks_; }
    /// 1-based access: g(j) = g_j.
    const Matrix& g(std::size_t j) const { return blocks_.at(j - 1); }
    std::size_t horizon() const noexcept { return blocks_.size(); }
    std::size_t output_dim() const noexcept { return static_cast<std::size_t>(blocks_.front().rows()); }
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(blocks_.front().cols()); }

    bool is_zero() const {
        return std::all_of(blocks_.begin(), blocks_.end(),
                           [](const Matrix& b) { return (b.array() == 0.0).all(); });
    }

    MarkovSequence scaled(double c) const {
        std::vector<Matrix> out;
        out.reserve(blocks_.size());
        for (const auto& b : blocks_) out.push_back(b * c);
        return MarkovSequence(std::move(out));
    }

private:
    std::vector<Matrix> blocks_;
};

/// Outputs (d x T) and inputs (dc x T', T' >= T) aligned at shared indices.
struct Trajectory {
    Matrix outputs;
    Matrix inputs;
    std::optional<std::vector<int>> regime_labels;

    Trajectory() = default;
    Trajectory(Matrix y, Matrix u, std::optional<std::vector<int>> labels = std::nullopt)
        : outputs(std::move(y)), inputs(std::move(u)), regime_labels(std::move(labels)) {
        validate();
    }

    std::size_t length() const noexcept { return static_cast<std::size_t>(outputs.cols()); }
    std::size_t output_dim() const noexcept { return static_cast<std::size_t>(outputs.rows()); }
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(inputs.rows()); }

    void validate() const {
        if (inputs.cols() < outputs.cols()) {
            throw ShapeError("trajectory has " + std::to_string(outputs.cols()) +
                             " outputs but only " + std::to_string(inputs.cols()) + " inputs");
        }
        if (regime_labels && regime_labels->size() != static_cast<std::size_t>(outputs.cols())) {
            throw ShapeError("regime_labels length " + std::to_string(regime_labels->size()) +
                             " differs from output length " + std::to_string(outputs.cols()));
        }
    }

    /// Steps [start, start + len) of the outputs with inputs [start, start + len + extra_inputs).
    Trajectory slice(std::size_t start, std::size_t len, std::size_t extra_inputs = 0) const {
        if (start + len > length() ||
            start + len + extra_inputs > static_cast<std::size_t>(inputs.cols())) {
            throw ShapeError("slice out of range");
        }
        const auto s = static_cast<Eigen::Index>(start);
        Trajectory t;
        t.outputs = outputs.middleCols(s, static_cast<Eigen::Index>(len));
        t.inputs = inputs.middleCols(s, static_cast<Eigen::Index>(len + extra_inputs));
        if (regime_labels) {
            t.regime_labels = std::vector<int>(regime_labels->begin() + s,
                                               regime_labels->begin() + s + static_cast<Eigen::Index>(len));
        }
        return t;
    }
};

// =============================================================================
// Simulation
// =============================================================================

/// Runs the delayed recursion over every column of `inputs`. `prehistory`
/// holds u(-delay) .. u(-1) oldest first (dc x delay); pass an empty matrix
/// for zeros.
inline Trajectory simulate_delayed(const TimeDelaySystem& sys, const Matrix& inputs,
                                   const Vector& x0, const Matrix& prehistory = Matrix()) {
    const auto k = static_cast<Eigen::Index>(sys.state_dim());
    const auto dc = static_cast<Eigen::Index>(sys.input_dim());
    const auto tau = static_cast<Eigen::Index>(sys.delay());
    if (inputs.cols() < 1) throw ShapeError("inputs must contain at least one step");
    if (inputs.rows() != dc) {
        throw ShapeError("inputs have " + std::to_string(inputs.rows()) + " channels, system expects " +
                         std::to_string(dc));
    }
    if (x0.size() != k) {
        throw ShapeError("x0 has dimension " + std::to_string(x0.size()) + ", expected " + std::to_string(k));
    }
    Matrix history = prehistory.size() == 0 ? Matrix::Zero(dc, tau) : prehistory;
    detail::require_shape(history, dc, tau, "prehistory");

    const auto T = inputs.cols();
    Matrix y(sys.output_dim(), T);
    Vector x = x0;
    for (Eigen::Index t = 0; t < T; ++t) {
        y.col(t) = sys.output_map() * x;
        const Eigen::Index src = t - tau;
        if (src >= 0) {
            x = sys.transition() * x + sys.input_map() * inputs.col(src);
        } else {
            x = sys.transition() * x + sys.input_map() * history.col(src + tau);
        }
    }
    return Trajectory(std::move(y), inputs);
}

inline Trajectory simulate_delay_free(const DelayFreeModel& model, const Matrix& inputs, const Vector& x0) {
    if (inputs.rows() != static_cast<Eigen::Index>(model.input_dim())) {
        throw ShapeError("inputs have " + std::to_string(inputs.rows()) + " channels, model expects " +
                         std::to_string(model.input_dim()));
    }
    if (x0.size() != static_cast<Eigen::Index>(model.state_dim())) {
        throw ShapeError("x0 has dimension " + std::to_string(x0.size()) + ", expected " +
                         std::to_string(model.state_dim()));
    }
    const auto T = inputs.cols();
    Matrix y(model.output_dim(), T);
    Vector x = x0;
    for (Eigen::Index t = 0; t < T; ++t) {
        y.col(t) = model.output_map() * x;
        x = model.transition() * x + model.input_map() * inputs.col(t);
    }
    return Trajectory(std::move(y), inputs);
}

// =============================================================================
// Markov parameters
// =============================================================================

inline MarkovSequence markov_parameters_delayed(const TimeDelaySystem& sys, std::size_t horizon) {
    if (horizon < 1) throw PreconditionError("horizon must be at least 1");
    std::vector<Matrix> blocks;
    blocks.reserve(horizon);
    Matrix power_b = sys.input_map(); // A^{j-tau-1} B
    for (std::size_t j = 1; j <= horizon; ++j) {
        if (j <= sys.delay()) {
            blocks.push_back(Matrix::Zero(sys.output_dim(), sys.input_dim()));
        } else {
            blocks.push_back(sys.output_map() * power_b);
            power_b = sys.transition() * power_b;
        }
    }
    return MarkovSequence(std::move(blocks));
}

inline MarkovSequence markov_parameters_free(const DelayFreeModel& model, std::size_t horizon) {
    if (horizon < 1) throw PreconditionError("horizon must be at least 1");
    std::vector<Matrix> blocks;
    blocks.reserve(horizon);
    Matrix power_b = model.input_map();
    for (std::size_t j = 1; j <= horizon; ++j) {
        blocks.push_back(model.output_map() * power_b);
        power_b = model.transition() * power_b;
    }
    return MarkovSequence(std::move(blocks));
}

// =============================================================================
// Delay embedding
// =============================================================================

/// Augmented-state realization z = [x; b_1; ...; b_tau] where the buffer holds
/// u(t-tau) .. u(t-1), oldest first. The oldest slot drives x, the buffer
/// shifts one slot per step and the current input enters the newest slot.
inline DelayFreeModel embed_delay(const TimeDelaySystem& sys) {
    const auto k = static_cast<Eigen::Index>(sys.state_dim());
    const auto dc = static_cast<Eigen::Index>(sys.input_dim());
    const auto d = static_cast<Eigen::Index>(sys.output_dim());
    const auto tau = static_cast<Eigen::Index>(sys.delay());
    if (tau == 0) return DelayFreeModel(sys.transition(), sys.input_map(), sys.output_map());

    const auto n = k + tau * dc;
    Matrix a = Matrix::Zero(n, n);
    Matrix b = Matrix::Zero(n, dc);
    Matrix c = Matrix::Zero(d, n);
    a.topLeftCorner(k, k) = sys.transition();
    a.block(0, k, k, dc) = sys.input_map();
    for (Eigen::Index i = 0; i + 1 < tau; ++i) {
        a.block(k + i * dc, k + (i + 1) * dc, dc, dc).setIdentity();
    }
    b.bottomRows(dc).setIdentity();
    c.leftCols(k) = sys.output_map();
    return DelayFreeModel(std::move(a), std::move(b), std::move(c));
}

/// Initial state of embed_delay(sys) that reproduces the delayed system started
/// from x0 with the given input prehistory (u(-tau) .. u(-1), oldest first).
inline Vector embedded_initial_state(const TimeDelaySystem& sys, const Vector& x0,
                                     const Matrix& prehistory = Matrix()) {
    const auto k = static_cast<Eigen::Index>(sys.state_dim());
    const auto dc = static_cast<Eigen::Index>(sys.input_dim());
    const auto tau = static_cast<Eigen::Index>(sys.delay());
    if (x0.size() != k) throw ShapeError("x0 has wrong dimension");
    Vector z = Vector::Zero(k + tau * dc);
    z.head(k) = x0;
    if (prehistory.size() != 0) {
        detail::require_shape(prehistory, dc, tau, "prehistory");
        for (Eigen::Index i = 0; i < tau; ++i) z.segment(k + i * dc, dc) = prehistory.col(i);
    }
    return z;
}

// =============================================================================
// Delay readout
// =============================================================================

/// Largest singular value of each block, normalized so the maximum is 1.
inline std::vector<double> spectral_norm_profile(const MarkovSequence& seq) {
    std::vector<double> profile;
    profile.reserve(seq.horizon());
    for (const auto& block : seq.blocks()) {
        Eigen::JacobiSVD<Matrix> svd(block);
        profile.push_back(svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0);
    }
    const double peak = *std::max_element(profile.begin(), profile.end());
    if (peak > 0.0) {
        for (auto& v : profile) v /= peak;
    }
    return profile;
}

/// Number of leading profile entries strictly below `rel_threshold`.
inline std::size_t detect_delay(const std::vector<double>& profile, double rel_threshold = 0.1) {
    if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) {
        throw PreconditionError("rel_threshold must lie in (0, 1)");
    }
    std::size_t count = 0;
    while (count < profile.size() && profile[count] < rel_threshold) ++count;
    return count;
}

} // namespace delaymix
