#pragma once

// Comma-separated tables: header row, float64 cells, optional time column.

#include "delaymix/core.hpp"
#include "delaymix/syslin.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace delaymix {

struct Table {
    std::vector<std::string> header;
    /// Row-major cells, one inner vector per data row.
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MappingError("column '" + name + "' not found");
        return static_cast<std::size_t>(it - header.begin());
    }
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}
} // namespace detail

inline Table read_csv(std::istream& in) {
    Table table;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (table.header.empty()) {
            if (row == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
            if (line.find_first_not_of(" \t") == std::string::npos) throw ParseError("missing header row", row, 1);
            for (auto& h : detail::split_csv_line(line)) {
                const auto b = h.find_first_not_of(" \t"), e = h.find_last_not_of(" \t");
                table.header.push_back(b == std::string::npos ? std::string() : h.substr(b, e - b + 1));
            }
            continue;
        }
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != table.header.size()) {
            throw ParseError("expected " + std::to_string(table.header.size()) + " cells, found " +
                                 std::to_string(cells.size()),
                             row, std::min(cells.size(), table.header.size()) + 1);
        }
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const char* begin = cells[c].c_str();
            char* end = nullptr;
            values[c] = std::strtod(begin, &end);
            while (end && (*end == ' ' || *end == '\t')) ++end;
            if (end == begin || *end != '\0') throw ParseError("cell is not a number: '" + cells[c] + "'", row, c + 1);
        }
        table.rows.push_back(std::move(values));
    }
    if (table.header.empty()) throw ParseError("empty CSV input", 1, 1);
    if (table.rows.empty()) throw ParseError("CSV has a header but no data rows", row + 1, 1);
    return table;
}

inline Table read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_csv(in);
}

/// Builds a trajectory from named columns. Output and input sets must be
/// non-empty and disjoint.
inline Trajectory table_to_trajectory(const Table& table, const std::vector<std::string>& outputs,
                                      const std::vector<std::string>& inputs) {
    if (outputs.empty() || inputs.empty()) throw MappingError("output and input column sets must be non-empty");
    for (const auto& o : outputs) {
        if (std::find(inputs.begin(), inputs.end(), o) != inputs.end()) {
            throw MappingError("column '" + o + "' is mapped as both output and input");
        }
    }
    std::vector<std::size_t> yi, ui;
    for (const auto& o : outputs) yi.push_back(table.column(o));
    for (const auto& i : inputs) ui.push_back(table.column(i));
    const auto T = static_cast<Eigen::Index>(table.rows.size());
    Matrix y(static_cast<Eigen::Index>(yi.size()), T), u(static_cast<Eigen::Index>(ui.size()), T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto& r = table.rows[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < yi.size(); ++i) y(static_cast<Eigen::Index>(i), t) = r[yi[i]];
        for (std::size_t i = 0; i < ui.size(); ++i) u(static_cast<Eigen::Index>(i), t) = r[ui[i]];
    }
    return Trajectory(std::move(y), std::move(u));
}

/// Default column names: y0.., u0.. plus "t" and, when present, "regime".
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    const auto T = static_cast<Eigen::Index>(traj.length());
    os << "t";
    for (std::size_t i = 0; i < traj.output_dim(); ++i) os << ",y" << i;
    for (std::size_t i = 0; i < traj.input_dim(); ++i) os << ",u" << i;
    if (traj.regime_labels) os << ",regime";
    os << '\n' << std::setprecision(17);
    for (Eigen::Index t = 0; t < T; ++t) {
        os << t;
        for (Eigen::Index i = 0; i < traj.outputs.rows(); ++i) os << ',' << traj.outputs(i, t);
        for (Eigen::Index i = 0; i < traj.inputs.rows(); ++i) os << ',' << traj.inputs(i, t);
        if (traj.regime_labels) os << ',' << (*traj.regime_labels)[static_cast<std::size_t>(t)];
        os << '\n';
    }
}

} // namespace delaymix
