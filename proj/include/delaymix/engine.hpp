#pragma once

// Online loop: accumulate each window into the system tensor, re-identify the
// model database when the active model stops fitting, and forecast.

#include "delaymix/core.hpp"
#include "delaymix/cpd.hpp"
#include "delaymix/filtering.hpp"
#include "delaymix/moments.hpp"
#include "delaymix/realization.hpp"
#include "delaymix/syslin.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace delaymix {

struct EngineConfig {
    MomentConfig moment{1, 1, 3, 1.0};
    std::size_t rank = 2;
    double rho = 0.5;
    AlsOptions als{};
    /// Iteration cap for warm-started decompositions.
    std::size_t warm_max_iters = 50;
    bool warm_start = true;
    RealizationOptions realization{};
    NoiseSpec noise{};
    std::size_t l_c = 100;
    std::size_t l_s = 10;
    std::size_t tensor_cap = SystemTensor::default_capacity;

    /// All violated constraints, empty when the configuration is usable.
    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        auto check = [&](bool ok, const std::string& msg) {
            if (!ok) v.push_back(msg);
        };
        check(moment.d >= 1 && moment.dc >= 1, "d and dc must be >= 1");
        check(moment.s >= 1, "s must be >= 1");
        check(moment.forgetting > 0.0 && moment.forgetting <= 1.0, "forgetting must lie in (0, 1]");
        check(rank >= 1, "rank must be >= 1");
        check(rank <= moment.mode_size(), "rank must not exceed D = " + std::to_string(moment.mode_size()));
        check(rho >= 0.0, "rho must be >= 0");
        check(l_c >= moment.min_window(), "l_c must be >= 3*k_max+3 = " + std::to_string(moment.min_window()));
        check(l_s >= 1, "l_s must be >= 1");
        check(als.max_iters >= 1 && warm_max_iters >= 1, "ALS iteration caps must be >= 1");
        check(als.tol > 0.0, "ALS tolerance must be > 0");
        check(realization.s == moment.s, "realization s must equal moment s");
        check(realization.state_dim.has_value() ||
                  (realization.energy_threshold > 0.0 && realization.energy_threshold < 1.0),
              "energy_threshold must lie in (0, 1)");
        check(!realization.max_radius || *realization.max_radius > 0.0, "max_radius must be > 0");
        check(noise.process_var > 0.0 && noise.obs_var > 0.0 && noise.prior_var > 0.0,
              "noise variances must be > 0");
        check(moment.mode_size() <= tensor_cap, "mode size D = " + std::to_string(moment.mode_size()) +
                                                    " exceeds the tensor cap " + std::to_string(tensor_cap));
        return v;
    }

    void validate() const {
        const auto v = violations();
        if (v.empty()) return;
        std::string msg = "invalid engine configuration:";
        for (const auto& s : v) msg += "\n  - " + s;
        throw ConfigError(msg);
    }

    /// Plain-text key=value rendering used to tag checkpoints.
    std::string echo() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "d=" << moment.d << "\ndc=" << moment.dc << "\ns=" << moment.s << "\nforgetting=" << moment.forgetting
           << "\nrank=" << rank << "\nrho=" << rho << "\nals_max_iters=" << als.max_iters << "\nals_tol=" << als.tol
           << "\nals_seed=" << als.seed << "\nwarm_max_iters=" << warm_max_iters << "\nwarm_start=" << warm_start
           << "\nstate_dim=" << (realization.state_dim ? std::to_string(*realization.state_dim) : "auto")
           << "\nenergy_threshold=" << realization.energy_threshold
           << "\nmax_radius=" << (realization.max_radius ? std::to_string(*realization.max_radius) : "none")
           << "\nprocess_var=" << noise.process_var
           << "\nobs_var=" << noise.obs_var << "\nprior_var=" << noise.prior_var << "\nl_c=" << l_c
           << "\nl_s=" << l_s << "\n";
        return os.str();
    }
};

struct ModelStats {
    double last_fit = std::numeric_limits<double>::quiet_NaN();
    std::size_t selection_count = 0;
};

struct RegimeDatabase {
    std::vector<DelayFreeModel> models;
    /// Markov sequences the models were realized from (before rescaling).
    std::vector<MarkovSequence> sequences;
    std::vector<ModelStats> stats;
    /// Input-gain factor applied to each realized model.
    std::vector<double> gains;
    std::size_t active_index = 0;
    std::optional<CPFactors> last_factors;

    bool empty() const noexcept { return models.empty(); }
    std::size_t size() const noexcept { return models.size(); }
    const DelayFreeModel& active() const { return models.at(active_index); }
};

struct UpdateReport {
    /// d x l_s forecast in the caller's units.
    Matrix forecast;
    bool adapted = false;
    /// Active model's mean error on the window before any adaptation (infinite when no model existed).
    double window_fit = std::numeric_limits<double>::infinity();
    /// Error of the model used for forecasting.
    double active_fit = std::numeric_limits<double>::infinity();
    std::size_t als_iters = 0;
    double als_residual = std::numeric_limits<double>::quiet_NaN();
    std::chrono::nanoseconds elapsed{0};
    std::size_t active_regime = 0;
};

/// Least-squares input-gain factor c for `model` on `window`, fitted jointly
/// with a free initial state: y(t) ~ c * r(t) + C A^t x0 where r is the
/// zero-state response. Returns 1 when the fit is not identifiable.
inline double fit_input_gain(const DelayFreeModel& model, const Trajectory& window) {
    const auto n = static_cast<Eigen::Index>(model.state_dim());
    const auto d = static_cast<Eigen::Index>(model.output_dim());
    const auto T = static_cast<Eigen::Index>(window.length());
    const Matrix& A = model.transition();
    Matrix design(d * T, n + 1);
    Vector target(d * T);
    Vector x = Vector::Zero(n);
    Matrix free = Matrix::Identity(n, n); // A^t
    for (Eigen::Index t = 0; t < T; ++t) {
        design.block(t * d, 0, d, 1) = model.output_map() * x;
        design.block(t * d, 1, d, n) = model.output_map() * free;
        target.segment(t * d, d) = window.outputs.col(t);
        x = A * x + model.input_map() * window.inputs.col(t);
        free = A * free;
    }
    if (!design.allFinite()) return 1.0;
    Vector norms = design.colwise().norm();
    if (norms(0) == 0.0) return 1.0;
    for (Eigen::Index j = 0; j < norms.size(); ++j) {
        if (norms(j) == 0.0) norms(j) = 1.0;
    }
    const Matrix scaled = design * norms.cwiseInverse().asDiagonal();
    const Vector coef = scaled.colPivHouseholderQr().solve(target);
    const double c = coef(0) / norms(0);
    return std::isfinite(c) && std::abs(c) > 1e-12 ? c : 1.0;
}

class Engine {
public:
    explicit Engine(EngineConfig config) : config_(std::move(config)), tensor_(init_tensor(config_)) {}

    const EngineConfig& config() const noexcept { return config_; }
    const SystemTensor& tensor() const noexcept { return tensor_; }
    const RegimeDatabase& database() const noexcept { return db_; }
    std::size_t update_count() const noexcept { return updates_; }
    bool has_scaling() const noexcept { return y_scale_.size() > 0; }
    const Vector& output_scale() const noexcept { return y_scale_; }
    const Vector& input_scale() const noexcept { return u_scale_; }

    /// outputs: d x l_c; inputs: dc x (l_c + l_s), the trailing l_s columns are the future inputs.
    UpdateReport update(const Matrix& outputs, const Matrix& inputs) {
        const auto start = std::chrono::steady_clock::now();
        const MomentConfig& mc = config_.moment;
        const auto lc = static_cast<Eigen::Index>(config_.l_c);
        const auto ls = static_cast<Eigen::Index>(config_.l_s);
        detail::require_shape(outputs, static_cast<Eigen::Index>(mc.d), lc, "window outputs");
        detail::require_shape(inputs, static_cast<Eigen::Index>(mc.dc), lc + ls, "window inputs");
        if (!outputs.allFinite() || !inputs.allFinite()) throw DataError("window contains non-finite values");

        if (!has_scaling()) freeze_scaling(outputs, inputs);

        Trajectory window;
        window.outputs = y_scale_.cwiseInverse().asDiagonal() * outputs;
        window.inputs = u_scale_.cwiseInverse().asDiagonal() * inputs.leftCols(lc);
        const Matrix future = u_scale_.cwiseInverse().asDiagonal() * inputs.rightCols(ls);

        UpdateReport report;
        stage("accumulate", [&] { accumulate_window(tensor_, window); });

        bool adapt = db_.empty();
        if (!adapt) {
            report.window_fit = stage("score", [&] { return window_error(db_.active(), window, config_.noise); });
            adapt = !(report.window_fit < config_.rho);
        }

        if (adapt) {
            adapt_database(window, report);
        } else {
            report.active_fit = report.window_fit;
            db_.stats[db_.active_index].last_fit = report.window_fit;
            db_.stats[db_.active_index].selection_count++;
        }
        report.active_regime = db_.active_index;

        const Matrix standardized =
            stage("forecast", [&] { return delaymix::forecast(db_.active(), window, future, config_.noise); });
        report.forecast = y_scale_.asDiagonal() * standardized;
        ++updates_;
        report.elapsed = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
        return report;
    }

    /// Bytes held by the tensor, model database and scaling state.
    std::size_t footprint_bytes() const {
        auto mat = [](const Matrix& m) { return static_cast<std::size_t>(m.size()) * sizeof(double); };
        std::size_t bytes = tensor_.footprint_bytes() + mat(y_scale_) + mat(u_scale_);
        for (const auto& m : db_.models) bytes += mat(m.transition()) + mat(m.input_map()) + mat(m.output_map());
        for (const auto& s : db_.sequences) {
            for (const auto& b : s.blocks()) bytes += mat(b);
        }
        bytes += db_.stats.size() * sizeof(ModelStats) + db_.gains.size() * sizeof(double);
        if (db_.last_factors) {
            for (const auto& m : db_.last_factors->modes) bytes += mat(m);
        }
        return bytes;
    }

    void save_checkpoint(std::ostream& os) const;
    static Engine load_checkpoint(std::istream& is, const EngineConfig& config);

private:
    static SystemTensor init_tensor(const EngineConfig& config) {
        config.validate();
        return SystemTensor(config.moment, config.tensor_cap);
    }

    template <typename F>
    auto stage(const char* name, F&& fn) -> decltype(fn()) {
        try {
            return fn();
        } catch (const StageError&) {
            throw;
        } catch (const Error& e) {
            throw StageError(name, e);
        }
    }

    void freeze_scaling(const Matrix& outputs, const Matrix& inputs) {
        const auto lc = static_cast<Eigen::Index>(config_.l_c);
        const Matrix u = inputs.leftCols(lc);
        if ((outputs.array() == 0.0).all() || (u.array() == 0.0).all()) {
            throw ColdStartError("the first window has all-zero outputs or inputs; the model database cannot be "
                                 "initialized. Provide a window with informative (non-zero, persistently "
                                 "exciting) inputs and a non-zero response");
        }
        auto rms = [](const Matrix& m) {
            Vector r = (m.rowwise().squaredNorm() / static_cast<double>(m.cols())).cwiseSqrt();
            for (Eigen::Index i = 0; i < r.size(); ++i) {
                if (!(r(i) > 0.0)) r(i) = 1.0;
            }
            return r;
        };
        y_scale_ = rms(outputs);
        u_scale_ = rms(u);
    }

    void adapt_database(const Trajectory& window, UpdateReport& report) {
        const Tensor3 view = stage("normalize", [&] { return normalized_view(tensor_); });
        AlsOptions opts = config_.als;
        if (config_.warm_start && db_.last_factors && db_.last_factors->rank() == config_.rank) {
            opts.warm_start = db_.last_factors;
            opts.max_iters = config_.warm_max_iters;
        } else {
            opts.warm_start.reset();
        }
        const AlsResult als = stage("decompose", [&] { return cp_als(view, config_.rank, opts); });
        RealizedDatabase realized =
            stage("realize", [&] { return realize_all(als.factors, config_.moment, config_.realization); });

        RegimeDatabase next;
        next.last_factors = als.factors;
        stage("rescale", [&] {
            for (std::size_t i = 0; i < realized.models.size(); ++i) {
                const double g = fit_input_gain(realized.models[i], window);
                next.models.push_back(realized.models[i].with_input_gain(g));
                next.gains.push_back(g);
            }
        });
        next.sequences = std::move(realized.sequences);
        next.stats.assign(next.models.size(), ModelStats{});
        const Selection sel = stage("select", [&] { return select_regime(next.models, window, config_.noise); });
        next.active_index = sel.index;
        next.stats[sel.index].last_fit = sel.error;
        next.stats[sel.index].selection_count = 1;
        db_ = std::move(next);

        report.adapted = true;
        report.als_iters = als.iters_used;
        report.als_residual = als.final_residual;
        report.active_fit = sel.error;
    }

    EngineConfig config_;
    SystemTensor tensor_;
    RegimeDatabase db_;
    Vector y_scale_, u_scale_;
    std::uint64_t updates_ = 0;
};

// =============================================================================
// Checkpoints
// =============================================================================
//
// u8 format version, then three sections, each u64 byte length + payload:
//   1. config echo (key=value text)
//   2. tensor snapshot (see moments.hpp)
//   3. engine state: u64 update count, scaling vectors, database
// Matrices are stored as u32 rows, u32 cols, then row-major f64 values.

inline constexpr std::uint8_t checkpoint_format_version = 1;

namespace detail {

inline void write_matrix(std::ostream& os, const Matrix& m) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) write_le<double>(os, m(r, c));
    }
}

inline Matrix read_matrix(std::istream& is) {
    const auto rows = read_le<std::uint32_t>(is);
    const auto cols = read_le<std::uint32_t>(is);
    if (static_cast<std::uint64_t>(rows) * cols > (std::uint64_t{1} << 28)) throw FormatError("matrix too large");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_le<double>(is);
    }
    return m;
}

inline void write_section(std::ostream& os, const std::string& payload) {
    write_le<std::uint64_t>(os, payload.size());
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

inline std::string read_section(std::istream& is) {
    const auto size = read_le<std::uint64_t>(is);
    if (size > (std::uint64_t{1} << 34)) throw FormatError("section length is implausible");
    std::string payload(size, '\0');
    if (!is.read(payload.data(), static_cast<std::streamsize>(size))) throw FormatError("truncated section");
    return payload;
}

} // namespace detail

inline void Engine::save_checkpoint(std::ostream& os) const {
    detail::write_le<std::uint8_t>(os, checkpoint_format_version);
    detail::write_section(os, config_.echo());

    std::ostringstream tensor_bytes;
    write_snapshot(tensor_bytes, tensor_);
    detail::write_section(os, tensor_bytes.str());

    std::ostringstream st;
    detail::write_le<std::uint64_t>(st, updates_);
    detail::write_matrix(st, y_scale_);
    detail::write_matrix(st, u_scale_);
    detail::write_le<std::uint32_t>(st, static_cast<std::uint32_t>(db_.size()));
    detail::write_le<std::uint32_t>(st, static_cast<std::uint32_t>(db_.active_index));
    for (std::size_t i = 0; i < db_.size(); ++i) {
        const auto& m = db_.models[i];
        detail::write_matrix(st, m.transition());
        detail::write_matrix(st, m.input_map());
        detail::write_matrix(st, m.output_map());
        const auto& blocks = db_.sequences[i].blocks();
        detail::write_le<std::uint32_t>(st, static_cast<std::uint32_t>(blocks.size()));
        for (const auto& b : blocks) detail::write_matrix(st, b);
        detail::write_le<double>(st, db_.gains[i]);
        detail::write_le<double>(st, db_.stats[i].last_fit);
        detail::write_le<std::uint64_t>(st, db_.stats[i].selection_count);
    }
    detail::write_le<std::uint8_t>(st, db_.last_factors ? 1 : 0);
    if (db_.last_factors) {
        for (const auto& m : db_.last_factors->modes) detail::write_matrix(st, m);
    }
    detail::write_section(os, st.str());
    if (!os) throw FormatError("failed to write checkpoint");
}

inline Engine Engine::load_checkpoint(std::istream& is, const EngineConfig& config) {
    const auto version = detail::read_le<std::uint8_t>(is);
    if (version != checkpoint_format_version) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::string echo = detail::read_section(is);
    if (echo != config.echo()) throw FormatError("checkpoint was written with a different configuration");

    Engine engine(config);
    std::istringstream tensor_bytes(detail::read_section(is));
    SystemTensor tensor = read_snapshot(tensor_bytes);
    if (!(tensor.config() == config.moment)) throw FormatError("tensor snapshot does not match the configuration");
    engine.tensor_ = std::move(tensor);

    std::istringstream st(detail::read_section(is));
    engine.updates_ = detail::read_le<std::uint64_t>(st);
    engine.y_scale_ = detail::read_matrix(st);
    engine.u_scale_ = detail::read_matrix(st);
    const auto count = detail::read_le<std::uint32_t>(st);
    const auto active = detail::read_le<std::uint32_t>(st);
    RegimeDatabase db;
    for (std::uint32_t i = 0; i < count; ++i) {
        Matrix a = detail::read_matrix(st);
        Matrix b = detail::read_matrix(st);
        Matrix c = detail::read_matrix(st);
        db.models.emplace_back(std::move(a), std::move(b), std::move(c));
        const auto k = detail::read_le<std::uint32_t>(st);
        std::vector<Matrix> blocks;
        for (std::uint32_t j = 0; j < k; ++j) blocks.push_back(detail::read_matrix(st));
        db.sequences.emplace_back(std::move(blocks));
        db.gains.push_back(detail::read_le<double>(st));
        ModelStats stats;
        stats.last_fit = detail::read_le<double>(st);
        stats.selection_count = detail::read_le<std::uint64_t>(st);
        db.stats.push_back(stats);
    }
    if (count > 0 && active >= count) throw FormatError("active model index out of range");
    db.active_index = active;
    if (detail::read_le<std::uint8_t>(st) != 0) {
        Matrix q1 = detail::read_matrix(st);
        Matrix q2 = detail::read_matrix(st);
        Matrix q3 = detail::read_matrix(st);
        db.last_factors = CPFactors(std::move(q1), std::move(q2), std::move(q3));
    }
    engine.db_ = std::move(db);
    return engine;
}

// =============================================================================
// Stream driver
// =============================================================================

struct HorizonMetrics {
    std::size_t horizon = 0;
    std::size_t count = 0; // scored forecast entries
    double cumulative_se = 0.0;
    double cumulative_ae = 0.0;
    double persistence_se = 0.0;
    double persistence_ae = 0.0;

    double mse() const { return count ? cumulative_se / static_cast<double>(count) : 0.0; }
    double mae() const { return count ? cumulative_ae / static_cast<double>(count) : 0.0; }
    double persistence_mse() const { return count ? persistence_se / static_cast<double>(count) : 0.0; }
    double persistence_mae() const { return count ? persistence_ae / static_cast<double>(count) : 0.0; }
};

/// Errors are measured in standardized units (outputs divided by the engine's
/// frozen per-channel scale) so that channels contribute comparably.
struct MetricsSummary {
    std::vector<HorizonMetrics> horizons;
    std::size_t updates = 0;
    std::size_t adaptations = 0;
};

struct StreamResult {
    std::vector<UpdateReport> reports;
    /// Start index of each window in the trajectory.
    std::vector<std::size_t> window_starts;
    MetricsSummary metrics;
    RegimeDatabase final_database;
    std::size_t final_footprint = 0;
};

/// Number of whole windows a trajectory of the given length supports.
inline std::size_t window_count(std::size_t length, std::size_t input_length, std::size_t lc, std::size_t ls) {
    const std::size_t usable = std::min(length, input_length);
    return usable >= lc + ls ? (usable - ls) / lc : 0;
}

/// Runs the engine over consecutive non-overlapping windows. Each forecast is
/// scored for every horizon h in `horizons` (h <= l_s) as the error over its
/// first h steps. An empty `horizons` scores only h = l_s.
inline StreamResult run_stream(const EngineConfig& config, const Trajectory& trajectory,
                               std::vector<std::size_t> horizons = {}) {
    config.validate();
    trajectory.validate();
    if (horizons.empty()) horizons.push_back(config.l_s);
    for (std::size_t h : horizons) {
        if (h < 1 || h > config.l_s) throw ConfigError("scoring horizons must lie in [1, l_s]");
    }
    const std::size_t lc = config.l_c, ls = config.l_s;
    const std::size_t windows =
        window_count(trajectory.length(), static_cast<std::size_t>(trajectory.inputs.cols()), lc, ls);
    if (windows == 0) {
        throw DataError("trajectory of length " + std::to_string(trajectory.length()) + " is shorter than one window (" +
                        std::to_string(lc + ls) + " steps)");
    }
    Engine engine(config);
    StreamResult out;
    out.metrics.horizons.resize(horizons.size());
    for (std::size_t i = 0; i < horizons.size(); ++i) out.metrics.horizons[i].horizon = horizons[i];
    out.reports.reserve(windows);
    for (std::size_t w = 0; w < windows; ++w) {
        const auto start = static_cast<Eigen::Index>(w * lc);
        const Matrix y = trajectory.outputs.middleCols(start, static_cast<Eigen::Index>(lc));
        const Matrix u = trajectory.inputs.middleCols(start, static_cast<Eigen::Index>(lc + ls));
        UpdateReport report = engine.update(y, u);
        const Matrix actual = trajectory.outputs.middleCols(start + static_cast<Eigen::Index>(lc),
                                                            static_cast<Eigen::Index>(ls));
        const Vector inv = engine.output_scale().cwiseInverse();
        const Matrix err = inv.asDiagonal() * (report.forecast - actual);
        const Vector last = y.col(y.cols() - 1);
        for (auto& hm : out.metrics.horizons) {
            const auto h = static_cast<Eigen::Index>(hm.horizon);
            hm.cumulative_se += err.leftCols(h).squaredNorm();
            hm.cumulative_ae += err.leftCols(h).cwiseAbs().sum();
            const Matrix perr = inv.asDiagonal() * (actual.leftCols(h).colwise() - last);
            hm.persistence_se += perr.squaredNorm();
            hm.persistence_ae += perr.cwiseAbs().sum();
            hm.count += static_cast<std::size_t>(h * actual.rows());
        }
        out.metrics.adaptations += report.adapted ? 1 : 0;
        out.window_starts.push_back(static_cast<std::size_t>(start));
        out.reports.push_back(std::move(report));
    }
    out.metrics.updates = windows;
    out.final_database = engine.database();
    out.final_footprint = engine.footprint_bytes();
    return out;
}

} // namespace delaymix
