#pragma once

#include "delaymix/core.hpp"

#include <random>

namespace testutil {

using delaymix::Matrix;
using delaymix::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    }
    return m;
}

inline Matrix rademacher(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::bernoulli_distribution coin(0.5);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = coin(rng) ? 1.0 : -1.0;
    }
    return m;
}

inline Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

} // namespace testutil

#include "delaymix/datagen.hpp"

namespace testutil {

/// Two well-separated scalar regimes: a 2-state system with delay 1 and a
/// first-order oscillating system with delay 2.
inline std::vector<delaymix::TimeDelaySystem> two_scalar_regimes() {
    Matrix a1(2, 2), b1(2, 1), c1(1, 2);
    a1 << 0.6, 0.3, -0.2, 0.5;
    b1 << 1, 0.5;
    c1 << 1, -0.4;
    return {delaymix::TimeDelaySystem(a1, b1, c1, 1), delaymix::TimeDelaySystem(scalar(-0.7), scalar(1), scalar(1), 2)};
}

inline delaymix::ScenarioSpec switch_scenario(std::uint64_t seed, std::size_t segment, double noise = 0.01) {
    delaymix::ScenarioSpec spec;
    spec.regimes = two_scalar_regimes();
    spec.schedule = {{0, 0}, {segment, 1}};
    spec.length = 2 * segment;
    spec.obs_noise_std = noise;
    spec.seed = seed;
    return spec;
}

} // namespace testutil
