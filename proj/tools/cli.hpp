#pragma once

// Command implementations for the delaymix executable. Kept header-only so the
// test suite can drive the commands without spawning processes.

#include "delaymix/csv.hpp"
#include "delaymix/datagen.hpp"
#include "delaymix/engine.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

namespace delaymix::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Everything a command needs: where data comes from, engine settings and
/// where artifacts go.
struct RunManifest {
    std::optional<std::string> scenario_path;
    std::optional<std::string> csv_path;
    std::vector<std::string> output_columns;
    std::vector<std::string> input_columns;
    std::optional<std::uint64_t> seed;
    std::vector<std::size_t> horizons{1, 10, 30};
    std::optional<double> rho;
    std::optional<std::size_t> rank;
    std::optional<double> forgetting;
    std::string out_dir = "out";
    json engine = json::object();
};

/// Reads a JSON config file. Recognized keys:
///   scenario, csv, outputs, inputs, seed, horizons, out, engine{...}
inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunManifest m;
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() || base.empty() ? p : (base / fp).string();
    };
    try {
        if (j.contains("scenario")) m.scenario_path = resolve(j.at("scenario").get<std::string>());
        if (j.contains("csv")) m.csv_path = resolve(j.at("csv").get<std::string>());
        if (j.contains("outputs")) m.output_columns = j.at("outputs").get<std::vector<std::string>>();
        if (j.contains("inputs")) m.input_columns = j.at("inputs").get<std::vector<std::string>>();
        if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("horizons")) m.horizons = j.at("horizons").get<std::vector<std::size_t>>();
        if (j.contains("out")) m.out_dir = j.at("out").get<std::string>();
        if (j.contains("engine")) m.engine = j.at("engine");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return m;
}

inline Trajectory load_data(const RunManifest& m) {
    if (m.scenario_path && m.csv_path) throw ConfigError("give either a scenario or a CSV input, not both");
    if (m.scenario_path) {
        ScenarioSpec spec = load_scenario(*m.scenario_path);
        if (m.seed) spec.seed = *m.seed;
        return generate(spec);
    }
    if (m.csv_path) {
        const Table table = read_csv_file(*m.csv_path);
        if (m.output_columns.empty() || m.input_columns.empty()) {
            throw MappingError("CSV input needs output and input column lists");
        }
        return table_to_trajectory(table, m.output_columns, m.input_columns);
    }
    throw ConfigError("no input source: set a scenario or a CSV file");
}

inline EngineConfig make_engine_config(const RunManifest& m, std::size_t d, std::size_t dc) {
    EngineConfig c;
    const json& e = m.engine;
    auto get = [&](const char* key, auto fallback) {
        using T = decltype(fallback);
        if (!e.contains(key) || e.at(key).is_null()) return fallback;
        try {
            return e.at(key).get<T>();
        } catch (const json::exception& ex) {
            throw ConfigError(std::string("engine.") + key + ": " + ex.what());
        }
    };
    c.moment = MomentConfig(d, dc, get("s", std::size_t{3}), get("forgetting", 1.0));
    c.rank = get("rank", std::size_t{2});
    c.rho = get("rho", 0.5);
    c.l_c = get("l_c", std::size_t{100});
    c.als.max_iters = get("als_max_iters", std::size_t{200});
    c.als.tol = get("als_tol", 1e-6);
    c.als.seed = get("als_seed", std::uint64_t{0});
    c.warm_max_iters = get("warm_max_iters", std::size_t{50});
    c.warm_start = get("warm_start", true);
    c.realization.s = c.moment.s;
    c.realization.energy_threshold = get("energy_threshold", 0.999);
    if (e.contains("state_dim") && !e.at("state_dim").is_null()) c.realization.state_dim = get("state_dim", std::size_t{1});
    if (e.contains("max_radius")) {
        if (e.at("max_radius").is_null()) c.realization.max_radius.reset();
        else c.realization.max_radius = get("max_radius", 0.999);
    }
    c.noise.process_var = get("process_var", 1e-4);
    c.noise.obs_var = get("obs_var", 1e-2);
    c.noise.prior_var = get("prior_var", 1.0);

    if (m.seed) c.als.seed = *m.seed;
    if (m.rho) c.rho = *m.rho;
    if (m.rank) c.rank = *m.rank;
    if (m.forgetting) c.moment.forgetting = *m.forgetting;
    if (m.horizons.empty()) throw ConfigError("at least one forecast horizon is required");
    c.l_s = *std::max_element(m.horizons.begin(), m.horizons.end());
    c.validate();
    return c;
}

inline json config_json(const EngineConfig& c) {
    json j;
    j["d"] = c.moment.d;
    j["dc"] = c.moment.dc;
    j["s"] = c.moment.s;
    j["forgetting"] = c.moment.forgetting;
    j["rank"] = c.rank;
    j["rho"] = c.rho;
    j["l_c"] = c.l_c;
    j["l_s"] = c.l_s;
    j["als_seed"] = c.als.seed;
    j["warm_start"] = c.warm_start;
    return j;
}

inline json metrics_json(const MetricsSummary& s) {
    json j;
    j["updates"] = s.updates;
    j["adaptations"] = s.adaptations;
    json hs = json::array();
    for (const auto& h : s.horizons) {
        hs.push_back({{"l_s", h.horizon},
                      {"mse", h.mse()},
                      {"mae", h.mae()},
                      {"cumulative_se", h.cumulative_se},
                      {"cumulative_ae", h.cumulative_ae},
                      {"count", h.count},
                      {"persistence_mse", h.persistence_mse()},
                      {"persistence_mae", h.persistence_mae()}});
    }
    j["horizons"] = hs;
    return j;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

inline double to_ms(std::chrono::nanoseconds ns) { return static_cast<double>(ns.count()) / 1e6; }

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

/// metrics.json, forecasts.csv, profile.csv, markov_profiles.csv.
inline int cmd_run(const RunManifest& m) {
    const Trajectory data = load_data(m);
    const EngineConfig config = make_engine_config(m, data.output_dim(), data.input_dim());
    const StreamResult result = run_stream(config, data, m.horizons);
    const fs::path out(m.out_dir);
    fs::create_directories(out);

    json metrics = metrics_json(result.metrics);
    metrics["config"] = config_json(config);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");

    std::ostringstream fc;
    fc << std::setprecision(10) << "update,t,step,channel,predicted,actual\n";
    for (std::size_t w = 0; w < result.reports.size(); ++w) {
        const auto& f = result.reports[w].forecast;
        const std::size_t base = result.window_starts[w] + config.l_c;
        for (Eigen::Index h = 0; h < f.cols(); ++h) {
            for (Eigen::Index c = 0; c < f.rows(); ++c) {
                fc << w << ',' << base + static_cast<std::size_t>(h) << ',' << h + 1 << ',' << c << ',' << f(c, h)
                   << ',' << data.outputs(c, static_cast<Eigen::Index>(base) + h) << '\n';
            }
        }
    }
    write_text(out / "forecasts.csv", fc.str());

    std::ostringstream pr;
    pr << std::setprecision(10) << "update,t_start,elapsed_ms,adapted,window_fit,active_fit,als_iters,active_regime\n";
    for (std::size_t w = 0; w < result.reports.size(); ++w) {
        const auto& r = result.reports[w];
        pr << w << ',' << result.window_starts[w] << ',' << to_ms(r.elapsed) << ',' << (r.adapted ? 1 : 0) << ','
           << r.window_fit << ',' << r.active_fit << ',' << r.als_iters << ',' << r.active_regime << '\n';
    }
    write_text(out / "profile.csv", pr.str());

    std::ostringstream mp;
    mp << std::setprecision(10) << "regime,lag,norm,detected_delay\n";
    const auto& seqs = result.final_database.sequences;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto profile = spectral_norm_profile(seqs[i]);
        const std::size_t delay = detect_delay(profile);
        for (std::size_t k = 0; k < profile.size(); ++k) mp << i << ',' << k + 1 << ',' << profile[k] << ',' << delay << '\n';
    }
    write_text(out / "markov_profiles.csv", mp.str());
    return 0;
}

/// bench.csv (one row per length) and bench_updates.csv (every update, adaptation flagged).
inline int cmd_bench(const RunManifest& m, std::vector<std::size_t> lengths) {
    if (lengths.empty()) throw ConfigError("bench needs at least one stream length");
    std::sort(lengths.begin(), lengths.end());
    RunManifest gen = m;
    Trajectory data;
    if (m.scenario_path) {
        ScenarioSpec spec = load_scenario(*m.scenario_path);
        if (m.seed) spec.seed = *m.seed;
        spec.length = std::max(spec.length, lengths.back());
        data = generate(spec);
    } else {
        data = load_data(gen);
    }
    const EngineConfig config = make_engine_config(m, data.output_dim(), data.input_dim());
    const fs::path out(m.out_dir);
    fs::create_directories(out);

    std::ostringstream summary, updates;
    summary << std::setprecision(10) << "length,updates,adaptations,median_update_ms,median_all_ms\n";
    updates << std::setprecision(10) << "length,update,elapsed_ms,adapted\n";
    for (std::size_t len : lengths) {
        if (len > data.length()) throw DataError("stream length " + std::to_string(len) + " exceeds the data");
        const Trajectory prefix = data.slice(0, len);
        const StreamResult r = run_stream(config, prefix, {config.l_s});
        std::vector<double> steady, all;
        for (std::size_t w = 0; w < r.reports.size(); ++w) {
            const double ms = to_ms(r.reports[w].elapsed);
            all.push_back(ms);
            if (!r.reports[w].adapted) steady.push_back(ms);
            updates << len << ',' << w << ',' << ms << ',' << (r.reports[w].adapted ? 1 : 0) << '\n';
        }
        summary << len << ',' << r.reports.size() << ',' << r.metrics.adaptations << ',' << median(steady) << ','
                << median(all) << '\n';
    }
    write_text(out / "bench.csv", summary.str());
    write_text(out / "bench_updates.csv", updates.str());
    return 0;
}

struct ValidationCell {
    double rho = 0.0;
    std::size_t rank = 0;
    double mse = 0.0;
    double mae = 0.0;
    std::optional<std::string> error;
};

/// Grid search of rho x rank on the validation prefix; writes validate.json.
/// The best cell minimizes MSE at the largest horizon; ties prefer smaller
/// rank, then larger rho.
inline int cmd_validate(const RunManifest& m, const std::vector<double>& rho_grid,
                        const std::vector<std::size_t>& rank_grid, double val_fraction) {
    if (rho_grid.empty() || rank_grid.empty()) throw ConfigError("validation grid is empty");
    if (!(val_fraction > 0.0 && val_fraction <= 1.0)) throw ConfigError("validation fraction must lie in (0, 1]");
    const Trajectory data = load_data(m);
    const auto len = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(data.length())));
    const Trajectory val = data.slice(0, len);

    std::vector<ValidationCell> cells;
    for (std::size_t rank : rank_grid) {
        for (double rho : rho_grid) {
            RunManifest cell = m;
            cell.rho = rho;
            cell.rank = rank;
            ValidationCell vc;
            vc.rho = rho;
            vc.rank = rank;
            const EngineConfig config = make_engine_config(cell, data.output_dim(), data.input_dim());
            try {
                const StreamResult r = run_stream(config, val, {config.l_s});
                vc.mse = r.metrics.horizons.front().mse();
                vc.mae = r.metrics.horizons.front().mae();
            } catch (const Error& e) {
                vc.mse = vc.mae = std::numeric_limits<double>::infinity();
                vc.error = e.what();
            }
            cells.push_back(vc);
        }
    }
    const ValidationCell* best = nullptr;
    for (const auto& c : cells) {
        if (!std::isfinite(c.mse)) continue;
        if (!best || c.mse < best->mse ||
            (c.mse == best->mse && (c.rank < best->rank || (c.rank == best->rank && c.rho > best->rho)))) {
            best = &c;
        }
    }
    if (!best) throw DataError("every grid cell failed");

    json report;
    report["validation_length"] = len;
    json arr = json::array();
    for (const auto& c : cells) {
        json jc = {{"rho", c.rho}, {"rank", c.rank}};
        if (c.error) {
            jc["error"] = *c.error;
        } else {
            jc["mse"] = c.mse;
            jc["mae"] = c.mae;
        }
        arr.push_back(jc);
    }
    report["cells"] = arr;
    report["best"] = {{"rho", best->rho}, {"rank", best->rank}, {"mse", best->mse}, {"mae", best->mae}};
    const fs::path out(m.out_dir);
    fs::create_directories(out);
    write_text(out / "validate.json", report.dump(2) + "\n");
    return 0;
}

/// Scenario -> CSV at <out>/data.csv.
inline int cmd_gen(const RunManifest& m) {
    if (!m.scenario_path) throw ConfigError("gen needs a scenario file");
    const Trajectory data = load_data(m);
    const fs::path out(m.out_dir);
    fs::create_directories(out);
    std::ostringstream os;
    write_trajectory_csv(os, data);
    write_text(out / "data.csv", os.str());
    return 0;
}

/// Writes <out>/error.json describing the failure.
inline void write_error(const std::string& out_dir, const std::exception& e) {
    json j;
    j["message"] = e.what();
    if (const auto* se = dynamic_cast<const StageError*>(&e)) j["stage"] = se->stage();
    if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
        j["row"] = pe->row();
        j["column"] = pe->column();
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream out(fs::path(out_dir) / "error.json");
    out << j.dump(2) << "\n";
}

} // namespace delaymix::cli
