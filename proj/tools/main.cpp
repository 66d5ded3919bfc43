#include "cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw delaymix::ConfigError("bad list entry '" + item + "'");
        out.push_back(v);
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    namespace cli = delaymix::cli;
    CLI::App app{"Streaming identification and forecasting with mixtures of time-delay linear systems"};
    app.require_subcommand(1);

    std::string config_path, scenario, csv, outputs, inputs, out_dir, ls;
    std::optional<std::uint64_t> seed;
    std::optional<double> rho, forgetting;
    std::optional<std::size_t> rank;
    std::string lengths = "1000,10000,100000", rho_grid = "0.5,0.6,0.7,0.8,0.9,1.0", rank_grid = "2,4,8,10";
    double val_fraction = 0.3;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--scenario", scenario, "scenario file (overrides the config)");
        cmd->add_option("--csv", csv, "CSV data file (overrides the config)");
        cmd->add_option("--outputs", outputs, "comma-separated output column names");
        cmd->add_option("--inputs", inputs, "comma-separated input column names");
        cmd->add_option("--seed", seed, "seed for data generation and ALS initialization");
        cmd->add_option("--ls", ls, "comma-separated forecast horizons");
        cmd->add_option("--rho", rho, "adaptation threshold");
        cmd->add_option("--rank", rank, "number of CP components");
        cmd->add_option("--forgetting", forgetting, "moment forgetting factor in (0, 1]");
        cmd->add_option("--out", out_dir, "output directory");
    };
    auto* run = app.add_subcommand("run", "stream the data through the engine and write metrics");
    auto* bench = app.add_subcommand("bench", "per-update timing at increasing stream lengths");
    auto* validate = app.add_subcommand("validate", "grid search over rho and rank");
    auto* gen = app.add_subcommand("gen", "write a scenario to CSV");
    for (auto* c : {run, bench, validate, gen}) common(c);
    bench->add_option("--lengths", lengths, "comma-separated stream lengths");
    validate->add_option("--rho-grid", rho_grid, "comma-separated rho values");
    validate->add_option("--rank-grid", rank_grid, "comma-separated ranks");
    validate->add_option("--val-fraction", val_fraction, "leading fraction of the data used for validation");

    CLI11_PARSE(app, argc, argv);

    std::string error_dir = out_dir.empty() ? "out" : out_dir;
    try {
        cli::RunManifest m = config_path.empty() ? cli::RunManifest{} : cli::load_manifest(config_path);
        if (!scenario.empty()) {
            m.scenario_path = scenario;
            m.csv_path.reset();
        }
        if (!csv.empty()) {
            m.csv_path = csv;
            m.scenario_path.reset();
        }
        if (!outputs.empty()) m.output_columns = parse_list<std::string>(outputs);
        if (!inputs.empty()) m.input_columns = parse_list<std::string>(inputs);
        if (seed) m.seed = seed;
        if (!ls.empty()) m.horizons = parse_list<std::size_t>(ls);
        if (rho) m.rho = rho;
        if (rank) m.rank = rank;
        if (forgetting) m.forgetting = forgetting;
        if (!out_dir.empty()) m.out_dir = out_dir;
        error_dir = m.out_dir;

        if (run->parsed()) return cli::cmd_run(m);
        if (bench->parsed()) return cli::cmd_bench(m, parse_list<std::size_t>(lengths));
        if (validate->parsed()) {
            return cli::cmd_validate(m, parse_list<double>(rho_grid), parse_list<std::size_t>(rank_grid), val_fraction);
        }
        return cli::cmd_gen(m);
    } catch (const std::exception& e) {
        cli::write_error(error_dir, e);
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
