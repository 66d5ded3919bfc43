#pragma once

// Synthetic regime-switching streams, brute-force oracles and scenario files.

#include "delaymix/core.hpp"
#include "delaymix/moments.hpp"
#include "delaymix/syslin.hpp"
#include "delaymix/tensor3.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace delaymix {

struct InputDistribution {
    enum class Kind { gaussian, uniform, rademacher };
    Kind kind = Kind::rademacher;
    /// Standard deviation for gaussian, half-width for uniform; unused for rademacher.
    double scale = 1.0;

    static InputDistribution gaussian(double sigma) { return {Kind::gaussian, sigma}; }
    static InputDistribution uniform(double half_width) { return {Kind::uniform, half_width}; }
    static InputDistribution rademacher() { return {Kind::rademacher, 1.0}; }

    double variance() const {
        switch (kind) {
        case Kind::gaussian: return scale * scale;
        case Kind::uniform: return scale * scale / 3.0;
        default: return 1.0;
        }
    }

    template <typename Rng>
    double sample(Rng& rng) const {
        switch (kind) {
        case Kind::gaussian: return std::normal_distribution<double>(0.0, scale)(rng);
        case Kind::uniform: return std::uniform_real_distribution<double>(-scale, scale)(rng);
        default: return std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
        }
    }
};

struct ScheduleEntry {
    std::size_t start = 0;
    std::size_t regime = 0; // index into ScenarioSpec::regimes
};

struct ScenarioSpec {
    std::vector<TimeDelaySystem> regimes;
    std::vector<ScheduleEntry> schedule{{0, 0}};
    InputDistribution input{};
    double obs_noise_std = 0.0;
    std::size_t length = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (regimes.empty()) throw ScenarioError("scenario needs at least one regime");
        const auto d = regimes.front().output_dim(), dc = regimes.front().input_dim();
        for (std::size_t i = 0; i < regimes.size(); ++i) {
            if (regimes[i].output_dim() != d || regimes[i].input_dim() != dc) {
                throw ScenarioError("regime " + std::to_string(i) + " has different input/output dimensions");
            }
            if (!regimes[i].is_stable()) {
                throw ScenarioError("regime " + std::to_string(i) + " is unstable (spectral radius " +
                                    std::to_string(regimes[i].spectral_radius()) + ")");
            }
        }
        if (schedule.empty() || schedule.front().start != 0) throw ScenarioError("schedule must start at time 0");
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (schedule[i].regime >= regimes.size()) {
                throw ScenarioError("schedule entry " + std::to_string(i) + " names unknown regime " +
                                    std::to_string(schedule[i].regime));
            }
            if (i > 0 && schedule[i].start <= schedule[i - 1].start) {
                throw ScenarioError("schedule start times must be strictly increasing");
            }
        }
        if (!(input.scale > 0.0)) throw ScenarioError("input distribution scale must be > 0");
        if (!(obs_noise_std >= 0.0)) throw ScenarioError("observation noise must be >= 0");
        if (length < 1) throw ScenarioError("length must be >= 1");
    }
};

/// Simulates the schedule with the state reset to zero at every regime change.
/// The delayed input buffer always holds the true past inputs. Labels are
/// 1-based regime numbers.
inline Trajectory generate(const ScenarioSpec& spec) {
    spec.validate();
    const auto d = static_cast<Eigen::Index>(spec.regimes.front().output_dim());
    const auto dc = static_cast<Eigen::Index>(spec.regimes.front().input_dim());
    const auto T = static_cast<Eigen::Index>(spec.length);
    std::mt19937_64 rng(spec.seed);

    Matrix u(dc, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index j = 0; j < dc; ++j) u(j, t) = spec.input.sample(rng);
    }

    Matrix y(d, T);
    std::vector<int> labels(spec.length);
    for (std::size_t e = 0; e < spec.schedule.size(); ++e) {
        const auto begin = static_cast<Eigen::Index>(spec.schedule[e].start);
        if (begin >= T) break;
        const auto end =
            e + 1 < spec.schedule.size() ? std::min<Eigen::Index>(T, static_cast<Eigen::Index>(spec.schedule[e + 1].start)) : T;
        const TimeDelaySystem& sys = spec.regimes[spec.schedule[e].regime];
        const auto tau = static_cast<Eigen::Index>(sys.delay());
        Matrix history = Matrix::Zero(dc, tau);
        for (Eigen::Index i = 0; i < tau; ++i) {
            const Eigen::Index src = begin - tau + i;
            if (src >= 0) history.col(i) = u.col(src);
        }
        const Trajectory part = simulate_delayed(sys, u.middleCols(begin, end - begin),
                                                 Vector::Zero(static_cast<Eigen::Index>(sys.state_dim())), history);
        y.middleCols(begin, end - begin) = part.outputs;
        for (Eigen::Index t = begin; t < end; ++t) labels[static_cast<std::size_t>(t)] = static_cast<int>(spec.schedule[e].regime) + 1;
    }

    if (spec.obs_noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.obs_noise_std);
        for (Eigen::Index t = 0; t < T; ++t) {
            for (Eigen::Index i = 0; i < d; ++i) y(i, t) += noise(rng);
        }
    }
    return Trajectory(std::move(y), std::move(u), std::move(labels));
}

/// Random system with Gaussian entries whose transition is rescaled to the
/// given spectral radius.
template <typename Rng>
TimeDelaySystem random_stable_system(std::size_t k, std::size_t dc, std::size_t d, std::size_t delay, Rng& rng,
                                     double radius = 0.9) {
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](std::size_t r, std::size_t c) {
        Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
        }
        return m;
    };
    Matrix a = draw(k, k);
    const double rad = detail::spectral_radius(a);
    if (rad > 0.0) a *= radius / rad;
    return TimeDelaySystem(std::move(a), draw(k, dc), draw(d, k), delay);
}

/// Unnormalized moment tensor of one window computed element by element.
inline Tensor3 oracle_moment_tensor(const Trajectory& window, const MomentConfig& config) {
    config.validate();
    const std::size_t T = window.length();
    if (T < config.min_window()) {
        throw PreconditionError("window length " + std::to_string(T) + " is below the required " +
                                std::to_string(config.min_window()));
    }
    if (window.output_dim() != config.d || window.input_dim() != config.dc) {
        throw ShapeError("window dimensions do not match the moment configuration");
    }
    const std::size_t d = config.d, dc = config.dc, p = d * dc, kmax = config.k_max();
    Tensor3 out(config.mode_size());
    auto y = [&](std::size_t i, std::size_t t) { return window.outputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)); };
    auto u = [&](std::size_t j, std::size_t t) { return window.inputs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)); };
    for (std::size_t k1 = 1; k1 <= kmax; ++k1) {
        for (std::size_t k2 = 1; k2 <= kmax; ++k2) {
            for (std::size_t k3 = 1; k3 <= kmax; ++k3) {
                const std::size_t span = k1 + k2 + k3 + 2;
                for (std::size_t tau = 0; tau + span < T; ++tau) {
                    const std::size_t t1 = tau + k1, s1 = tau;
                    const std::size_t t2 = tau + k1 + k2 + 1, s2 = tau + k1 + 1;
                    const std::size_t t3 = tau + span, s3 = tau + k1 + k2 + 2;
                    for (std::size_t a = 0; a < p; ++a) {
                        const double m1 = y(a % d, t1) * u(a / d, s1);
                        for (std::size_t b = 0; b < p; ++b) {
                            const double m2 = y(b % d, t2) * u(b / d, s2);
                            for (std::size_t c = 0; c < p; ++c) {
                                const double m3 = y(c % d, t3) * u(c / d, s3);
                                out((k1 - 1) * p + a, (k2 - 1) * p + b, (k3 - 1) * p + c) += m1 * m2 * m3;
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// The last observed output repeated l_s times (d x l_s).
inline Matrix persistence_baseline(const Trajectory& window, std::size_t ls) {
    if (window.length() < 1) throw PreconditionError("window must be non-empty");
    const Vector last = window.outputs.col(window.outputs.cols() - 1);
    return last.replicate(1, static_cast<Eigen::Index>(ls));
}

// =============================================================================
// Scenario files
// =============================================================================
//
//   # comment
//   length = 8000
//   seed = 7
//   noise = 0.01                    observation noise std
//   input = rademacher              | gaussian <sigma> | uniform <half-width>
//   schedule = 0:0, 4000:1          start:regime pairs, regimes numbered from 0
//
//   [regime]                        one section per regime, in order
//   delay = 1
//   A = [0.6 0.3; -0.2 0.5]         rows separated by ';', entries by spaces or commas
//   B = [1; 0.5]
//   C = [1 -0.4]

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& text, std::size_t row, std::size_t col) {
    const std::string t = trim(text);
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw ParseError("expected a number, found '" + t + "'", row, col);
    }
}

inline std::uint64_t parse_unsigned(const std::string& text, std::size_t row, std::size_t col) {
    const std::string t = trim(text);
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) {
        throw ParseError("expected a non-negative integer, found '" + t + "'", row, col);
    }
    try {
        return std::stoull(t);
    } catch (const std::exception&) {
        throw ParseError("integer out of range: '" + t + "'", row, col);
    }
}

inline Matrix parse_matrix_literal(const std::string& text, std::size_t row, std::size_t col) {
    const std::string t = trim(text);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']') {
        throw ParseError("matrix literal must be enclosed in [ ]", row, col);
    }
    std::vector<std::vector<double>> rows;
    std::stringstream body(t.substr(1, t.size() - 2));
    std::string line;
    while (std::getline(body, line, ';')) {
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream entries(line);
        std::vector<double> r;
        std::string tok;
        while (entries >> tok) r.push_back(parse_double(tok, row, col));
        if (r.empty()) throw ParseError("empty matrix row", row, col);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw ParseError("empty matrix literal", row, col);
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw ParseError("ragged matrix literal", row, col);
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

} // namespace detail

inline ScenarioSpec parse_scenario(std::istream& in) {
    struct RegimeText {
        std::optional<Matrix> a, b, c;
        std::size_t delay = 0;
        std::size_t row = 0;
    };
    ScenarioSpec spec;
    std::vector<RegimeText> regimes;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t == "[regime]") {
            regimes.push_back({});
            regimes.back().row = row;
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", row, 1);
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        const std::size_t vcol = line.find('=') + 2;
        if (!regimes.empty()) {
            RegimeText& r = regimes.back();
            if (key == "A") r.a = detail::parse_matrix_literal(value, row, vcol);
            else if (key == "B") r.b = detail::parse_matrix_literal(value, row, vcol);
            else if (key == "C") r.c = detail::parse_matrix_literal(value, row, vcol);
            else if (key == "delay") r.delay = detail::parse_unsigned(value, row, vcol);
            else throw ParseError("unknown regime key '" + key + "'", row, 1);
            continue;
        }
        if (key == "length") {
            spec.length = detail::parse_unsigned(value, row, vcol);
        } else if (key == "seed") {
            spec.seed = detail::parse_unsigned(value, row, vcol);
        } else if (key == "noise") {
            spec.obs_noise_std = detail::parse_double(value, row, vcol);
        } else if (key == "input") {
            std::istringstream is(value);
            std::string kind, arg;
            is >> kind >> arg;
            if (kind == "rademacher") spec.input = InputDistribution::rademacher();
            else if (kind == "gaussian") spec.input = InputDistribution::gaussian(arg.empty() ? 1.0 : detail::parse_double(arg, row, vcol));
            else if (kind == "uniform") spec.input = InputDistribution::uniform(arg.empty() ? 1.0 : detail::parse_double(arg, row, vcol));
            else throw ParseError("unknown input distribution '" + kind + "'", row, vcol);
        } else if (key == "schedule") {
            spec.schedule.clear();
            std::stringstream entries(value);
            std::string item;
            while (std::getline(entries, item, ',')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos) throw ParseError("schedule entries are start:regime", row, vcol);
                spec.schedule.push_back({detail::parse_unsigned(item.substr(0, colon), row, vcol),
                                         detail::parse_unsigned(item.substr(colon + 1), row, vcol)});
            }
        } else {
            throw ParseError("unknown key '" + key + "'", row, 1);
        }
    }
    for (const auto& r : regimes) {
        if (!r.a || !r.b || !r.c) throw ParseError("regime section needs A, B and C", r.row, 1);
        try {
            spec.regimes.emplace_back(*r.a, *r.b, *r.c, r.delay);
        } catch (const ShapeError& e) {
            throw ParseError(e.what(), r.row, 1);
        }
    }
    spec.validate();
    return spec;
}

inline ScenarioSpec load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file " + path);
    return parse_scenario(in);
}

} // namespace delaymix
