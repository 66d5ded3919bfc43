#include "delaymix/syslin.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace delaymix;
using testutil::random_matrix;
using testutil::scalar;

namespace {

TimeDelaySystem half_decay(std::size_t delay) { return TimeDelaySystem(scalar(0.5), scalar(1), scalar(1), delay); }

std::vector<double> row(const Matrix& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

} // namespace

TEST(TimeDelaySystem, RejectsInconsistentShapes) {
    EXPECT_THROW(TimeDelaySystem(Matrix::Zero(2, 2), Matrix::Zero(3, 1), Matrix::Zero(1, 2), 0), ShapeError);
    EXPECT_THROW(TimeDelaySystem(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(1, 3), 0), ShapeError);
    EXPECT_THROW(TimeDelaySystem(Matrix::Zero(2, 3), Matrix::Zero(2, 1), Matrix::Zero(1, 2), 0), ShapeError);
}

TEST(TimeDelaySystem, StabilityFlag) {
    EXPECT_TRUE(half_decay(0).is_stable());
    EXPECT_FALSE(TimeDelaySystem(scalar(1.2), scalar(1), scalar(1), 0).is_stable());
}

TEST(SimulateDelayed, PassThrough) {
    TimeDelaySystem sys(scalar(0), scalar(1), scalar(1), 0);
    Matrix u(1, 3);
    u << 1, 0, 0;
    const auto y = simulate_delayed(sys, u, Vector::Zero(1));
    EXPECT_EQ(row(y.outputs), (std::vector<double>{0, 1, 0}));
}

TEST(SimulateDelayed, DelayedImpulseByHand) {
    Matrix u = Matrix::Zero(1, 7);
    u(0, 0) = 1;
    const auto y = simulate_delayed(half_decay(2), u, Vector::Zero(1), Matrix::Zero(1, 2));
    const std::vector<double> expect{0, 0, 0, 1, 0.5, 0.25, 0.125};
    const auto got = row(y.outputs);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_DOUBLE_EQ(got[i], expect[i]);
}

TEST(SimulateDelayed, PrehistoryFeedsEarlySteps) {
    Matrix pre(1, 2);
    pre << 3, 0; // u(-2) = 3
    const auto y = simulate_delayed(half_decay(2), Matrix::Zero(1, 3), Vector::Zero(1), pre);
    EXPECT_DOUBLE_EQ(y.outputs(0, 0), 0);
    EXPECT_DOUBLE_EQ(y.outputs(0, 1), 3);
    EXPECT_DOUBLE_EQ(y.outputs(0, 2), 1.5);
}

TEST(SimulateDelayed, ZeroInputZeroOutput) {
    std::mt19937_64 rng(1);
    TimeDelaySystem sys(random_matrix(rng, 3, 3) * 0.2, random_matrix(rng, 3, 2), random_matrix(rng, 2, 3), 3);
    const auto y = simulate_delayed(sys, Matrix::Zero(2, 20), Vector::Zero(3));
    EXPECT_TRUE((y.outputs.array() == 0).all());
}

TEST(SimulateDelayed, ShapeErrorsNameOperand) {
    const auto sys = half_decay(2);
    try {
        simulate_delayed(sys, Matrix::Zero(1, 4), Vector::Zero(1), Matrix::Zero(1, 3));
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("prehistory"), std::string::npos);
    }
    EXPECT_THROW(simulate_delayed(sys, Matrix::Zero(2, 4), Vector::Zero(1)), ShapeError);
    EXPECT_THROW(simulate_delayed(sys, Matrix::Zero(1, 4), Vector::Zero(2)), ShapeError);
}

TEST(SimulateDelayed, Linearity) {
    std::mt19937_64 rng(2);
    TimeDelaySystem sys(random_matrix(rng, 3, 3) * 0.3, random_matrix(rng, 3, 2), random_matrix(rng, 2, 3), 2);
    const Matrix u1 = random_matrix(rng, 2, 30), u2 = random_matrix(rng, 2, 30);
    const Vector x0 = Vector::Zero(3);
    const Matrix lhs = simulate_delayed(sys, 2.0 * u1 - 0.7 * u2, x0).outputs;
    const Matrix rhs = 2.0 * simulate_delayed(sys, u1, x0).outputs - 0.7 * simulate_delayed(sys, u2, x0).outputs;
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SimulateDelayFree, Impulse) {
    DelayFreeModel m(scalar(0), scalar(1), scalar(1));
    Matrix u(1, 4);
    u << 1, 0, 0, 0;
    EXPECT_EQ(row(simulate_delay_free(m, u, Vector::Zero(1)).outputs), (std::vector<double>{0, 1, 0, 0}));
}

TEST(SimulateDelayFree, EmbeddingMatchesDelayedImpulse) {
    const auto sys = half_decay(2);
    Matrix u = Matrix::Zero(1, 8);
    u(0, 0) = 1;
    const auto emb = embed_delay(sys);
    EXPECT_EQ(emb.state_dim(), 3u);
    const Matrix a = simulate_delayed(sys, u, Vector::Zero(1)).outputs;
    const Matrix b = simulate_delay_free(emb, u, Vector::Zero(3)).outputs;
    EXPECT_EQ(a, b);
}

TEST(MarkovParameters, DelayedCaseFormula) {
    const auto seq = markov_parameters_delayed(half_decay(2), 6);
    const std::vector<double> expect{0, 0, 1, 0.5, 0.25, 0.125};
    for (std::size_t j = 1; j <= 6; ++j) EXPECT_DOUBLE_EQ(seq.g(j)(0, 0), expect[j - 1]);
}

TEST(MarkovParameters, ZeroDelayAndShortHorizon) {
    std::mt19937_64 rng(3);
    TimeDelaySystem sys(random_matrix(rng, 2, 2) * 0.4, random_matrix(rng, 2, 2), random_matrix(rng, 3, 2), 0);
    const auto seq = markov_parameters_delayed(sys, 4);
    Matrix power = Matrix::Identity(2, 2);
    for (std::size_t j = 1; j <= 4; ++j) {
        EXPECT_LT((seq.g(j) - sys.output_map() * power * sys.input_map()).norm(), 1e-14);
        power = sys.transition() * power;
    }
    TimeDelaySystem delayed(sys.transition(), sys.input_map(), sys.output_map(), 4);
    EXPECT_TRUE(markov_parameters_delayed(delayed, 4).is_zero());
}

TEST(MarkovParameters, FreeIdentityAndNilpotent) {
    const auto eye = markov_parameters_free(DelayFreeModel(Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2)), 5);
    for (const auto& b : eye.blocks()) EXPECT_EQ(b, Matrix(Matrix::Identity(2, 2)));
    Matrix nil = Matrix::Zero(3, 3);
    nil(0, 1) = 1;
    nil(1, 2) = 2;
    const auto seq = markov_parameters_free(DelayFreeModel(nil, Matrix::Ones(3, 1), Matrix::Ones(1, 3)), 6);
    for (std::size_t j = 4; j <= 6; ++j) EXPECT_EQ(seq.g(j)(0, 0), 0.0);
}

TEST(MarkovParameters, FreeMatchesImpulseSimulation) {
    std::mt19937_64 rng(4);
    Matrix a = random_matrix(rng, 2, 2);
    a *= 0.8 / detail::spectral_radius(a);
    DelayFreeModel m(a, random_matrix(rng, 2, 2), random_matrix(rng, 2, 2));
    const auto seq = markov_parameters_free(m, 6);
    for (Eigen::Index ch = 0; ch < 2; ++ch) {
        Matrix u = Matrix::Zero(2, 7);
        u(ch, 0) = 1;
        const Matrix y = simulate_delay_free(m, u, Vector::Zero(2)).outputs;
        for (std::size_t j = 1; j <= 6; ++j) {
            EXPECT_LT((seq.g(j).col(ch) - y.col(static_cast<Eigen::Index>(j))).norm(), 1e-14);
        }
    }
}

TEST(EmbedDelay, ZeroDelayIsIdentityMap) {
    std::mt19937_64 rng(5);
    TimeDelaySystem sys(random_matrix(rng, 2, 2), random_matrix(rng, 2, 1), random_matrix(rng, 1, 2), 0);
    const auto m = embed_delay(sys);
    EXPECT_EQ(m.state_dim(), 2u);
    EXPECT_EQ(m.transition(), sys.transition());
    EXPECT_EQ(m.input_map(), sys.input_map());
    EXPECT_EQ(m.output_map(), sys.output_map());
}

TEST(EmbedDelay, MarkovConsistencyRandomSystems) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto k = static_cast<Eigen::Index>(1 + rng() % 4);
        const auto dc = static_cast<Eigen::Index>(1 + rng() % 3);
        const auto d = static_cast<Eigen::Index>(1 + rng() % 3);
        const std::size_t tau = rng() % 6;
        Matrix a = random_matrix(rng, k, k);
        a *= 0.9 / std::max(1e-9, detail::spectral_radius(a));
        TimeDelaySystem sys(a, random_matrix(rng, k, dc), random_matrix(rng, d, k), tau);
        const auto emb = embed_delay(sys);
        EXPECT_EQ(emb.state_dim(), static_cast<std::size_t>(k) + tau * static_cast<std::size_t>(dc));
        const std::size_t K = 2 * emb.state_dim();
        const auto lhs = markov_parameters_free(emb, K);
        const auto rhs = markov_parameters_delayed(sys, K);
        for (std::size_t j = 1; j <= K; ++j) EXPECT_LT((lhs.g(j) - rhs.g(j)).cwiseAbs().maxCoeff(), 1e-12);
        for (std::size_t j = 1; j <= tau; ++j) EXPECT_TRUE((rhs.g(j).array() == 0).all());
    }
}

TEST(EmbedDelay, InitialStateCarriesPrehistory) {
    std::mt19937_64 rng(7);
    TimeDelaySystem sys(random_matrix(rng, 2, 2) * 0.3, random_matrix(rng, 2, 2), random_matrix(rng, 1, 2), 3);
    const Vector x0 = random_matrix(rng, 2, 1);
    const Matrix pre = random_matrix(rng, 2, 3);
    const Matrix u = random_matrix(rng, 2, 15);
    const Matrix a = simulate_delayed(sys, u, x0, pre).outputs;
    const Matrix b = simulate_delay_free(embed_delay(sys), u, embedded_initial_state(sys, x0, pre)).outputs;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpectralNormProfile, ZeroAndScalarCases) {
    const MarkovSequence zero(std::vector<Matrix>(3, Matrix::Zero(2, 2)));
    EXPECT_EQ(spectral_norm_profile(zero), (std::vector<double>{0, 0, 0}));
    const auto p = spectral_norm_profile(markov_parameters_delayed(half_decay(1), 4));
    const std::vector<double> expect{0, 1, 0.5, 0.25};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], expect[i]);
}

TEST(SpectralNormProfile, ScaleInvariant) {
    std::mt19937_64 rng(8);
    TimeDelaySystem sys(random_matrix(rng, 3, 3) * 0.3, random_matrix(rng, 3, 2), random_matrix(rng, 2, 3), 1);
    const auto seq = markov_parameters_delayed(sys, 6);
    const auto a = spectral_norm_profile(seq), b = spectral_norm_profile(seq.scaled(7.5));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(DetectDelay, LeadingLowEntries) {
    EXPECT_EQ(detect_delay({0, 0, 1, 0.5}), 2u);
    EXPECT_EQ(detect_delay({1, 0.5, 0.25}), 0u);
    EXPECT_EQ(detect_delay({0.05, 0.2, 0.01}), 1u);
    EXPECT_THROW(detect_delay({1}, 0.0), PreconditionError);
    EXPECT_THROW(detect_delay({1}, 1.0), PreconditionError);
}

TEST(Trajectory, ValidatesAlignment) {
    EXPECT_THROW(Trajectory(Matrix::Zero(1, 5), Matrix::Zero(1, 4)), ShapeError);
    EXPECT_THROW(Trajectory(Matrix::Zero(1, 3), Matrix::Zero(1, 3), std::vector<int>{1, 1}), ShapeError);
    const Trajectory t(Matrix::Zero(1, 5), Matrix::Zero(1, 7));
    const auto s = t.slice(1, 3, 2);
    EXPECT_EQ(s.length(), 3u);
    EXPECT_EQ(s.inputs.cols(), 5);
    EXPECT_THROW(t.slice(3, 3), ShapeError);
}
