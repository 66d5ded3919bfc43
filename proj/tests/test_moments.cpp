#include "delaymix/datagen.hpp"
#include "delaymix/moments.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace delaymix;
using testutil::random_matrix;

namespace {

Trajectory random_window(std::mt19937_64& rng, std::size_t d, std::size_t dc, std::size_t len) {
    const auto T = static_cast<Eigen::Index>(len);
    return Trajectory(random_matrix(rng, static_cast<Eigen::Index>(d), T),
                      random_matrix(rng, static_cast<Eigen::Index>(dc), T));
}

} // namespace

TEST(MomentConfig, DerivedSizes) {
    EXPECT_EQ(MomentConfig(1, 1, 3).mode_size(), 6u);
    EXPECT_EQ(MomentConfig(2, 2, 3).mode_size(), 24u);
    EXPECT_EQ(MomentConfig(4, 4, 3).mode_size(), 96u);
    EXPECT_EQ(MomentConfig(1, 1, 3).min_window(), 21u);
}

TEST(NewTensor, ShapeAndCap) {
    const auto t = new_tensor(MomentConfig(4, 4, 3));
    EXPECT_EQ(t.dim(), 96u);
    EXPECT_EQ(t.sample_count(), 0u);
    EXPECT_TRUE(t.data().is_zero());
    EXPECT_THROW(new_tensor(MomentConfig(4, 4, 3), 95), CapacityError);
    EXPECT_THROW(new_tensor(MomentConfig(1, 1, 3, 0.0)), ConfigError);
}

TEST(AccumulateWindow, RejectsShortWindow) {
    auto t = new_tensor(MomentConfig(1, 1, 3));
    std::mt19937_64 rng(1);
    try {
        accumulate_window(t, random_window(rng, 1, 1, 20));
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("21"), std::string::npos);
    }
}

TEST(AccumulateWindow, ZeroOutputsOnlyCount) {
    MomentConfig cfg(1, 1, 3);
    auto t = new_tensor(cfg);
    Trajectory w(Matrix::Zero(1, 21), Matrix::Ones(1, 21));
    accumulate_window(t, w);
    EXPECT_TRUE(t.data().is_zero());
    // minimum window: one admissible start for the largest triplet only
    EXPECT_EQ(t.block_weight(6, 6, 6), 1.0);
    EXPECT_EQ(t.block_weight(1, 1, 1), 16.0);
    EXPECT_GT(t.sample_count(), 0u);
}

TEST(AccumulateWindow, HandComputedScalarCase) {
    // d = dc = 1, s = 1 (k_max = 2), length 10. For triplet (1,1,1) the span is
    // 5, so tau = 0..4, and the contribution is
    //   y(tau+1)u(tau) * y(tau+3)u(tau+2) * y(tau+5)u(tau+4).
    MomentConfig cfg(1, 1, 1);
    Matrix y(1, 10), u(1, 10);
    y << 1, 2, -1, 0.5, 3, -2, 1, 1, 0.25, 4;
    u << 1, -1, 1, 1, -1, 1, -1, -1, 1, 1;
    auto t = new_tensor(cfg);
    accumulate_window(t, Trajectory(y, u));
    double expect = 0.0;
    for (int tau = 0; tau <= 4; ++tau) {
        expect += y(0, tau + 1) * u(0, tau) * y(0, tau + 3) * u(0, tau + 2) * y(0, tau + 5) * u(0, tau + 4);
    }
    EXPECT_NEAR(t.data()(0, 0, 0), expect, 1e-12);
    // triplet (2,1,2): span 7, tau = 0..2; t1 = tau+2, t2 = tau+4, t3 = tau+7
    double e212 = 0.0;
    for (int tau = 0; tau <= 2; ++tau) {
        e212 += y(0, tau + 2) * u(0, tau) * y(0, tau + 4) * u(0, tau + 3) * y(0, tau + 7) * u(0, tau + 5);
    }
    EXPECT_NEAR(t.data()(1, 0, 1), e212, 1e-12);
    EXPECT_EQ(t.block_weight(2, 1, 2), 3.0);
}

TEST(AccumulateWindow, MatchesOracleRandomConfigs) {
    std::mt19937_64 rng(11);
    const std::vector<MomentConfig> configs{{1, 1, 1}, {1, 1, 3}, {2, 1, 2}, {1, 3, 2}, {2, 2, 3}};
    for (const auto& cfg : configs) {
        const auto w = random_window(rng, cfg.d, cfg.dc, cfg.min_window() + 17);
        auto t = new_tensor(cfg);
        accumulate_window(t, w);
        const Tensor3 oracle = oracle_moment_tensor(w, cfg);
        EXPECT_LT(t.data().max_abs_diff(oracle), 1e-10) << cfg.d << "," << cfg.dc << "," << cfg.s;
    }
}

TEST(AccumulateWindow, AdditiveAcrossCalls) {
    std::mt19937_64 rng(12);
    MomentConfig cfg(2, 1, 2);
    const auto w1 = random_window(rng, 2, 1, 40), w2 = random_window(rng, 2, 1, 40);
    auto t = new_tensor(cfg);
    accumulate_window(t, w1);
    accumulate_window(t, w2);
    Tensor3 sum = oracle_moment_tensor(w1, cfg);
    const Tensor3 o2 = oracle_moment_tensor(w2, cfg);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.values()[i] += o2.values()[i];
    EXPECT_LT(t.data().max_abs_diff(sum), 1e-10);
}

TEST(AccumulateWindow, ForgettingDiscountsOnce) {
    std::mt19937_64 rng(13);
    MomentConfig cfg(1, 1, 2, 0.5);
    const auto w1 = random_window(rng, 1, 1, 30), w2 = random_window(rng, 1, 1, 30);
    auto t = new_tensor(cfg);
    accumulate_window(t, w1);
    accumulate_window(t, w2);
    const Tensor3 o1 = oracle_moment_tensor(w1, cfg), o2 = oracle_moment_tensor(w2, cfg);
    for (std::size_t i = 0; i < o1.size(); ++i) {
        EXPECT_NEAR(t.data().values()[i], 0.5 * o1.values()[i] + o2.values()[i], 1e-10);
    }
    const double n111 = static_cast<double>(admissible_starts(30, 1, 1, 1));
    EXPECT_DOUBLE_EQ(t.block_weight(1, 1, 1), 0.5 * n111 + n111);
}

TEST(AccumulateWindow, BlockDisjointness) {
    // Nonzero data only at the steps used by triplet (2,2,2) with tau = 0:
    // t1 = 2, t2 = 5, t3 = 8 and input steps 0, 3, 6.
    MomentConfig cfg(1, 1, 1);
    Matrix y = Matrix::Zero(1, 9), u = Matrix::Zero(1, 9);
    y(0, 2) = y(0, 5) = y(0, 8) = 1.0;
    u(0, 0) = u(0, 3) = u(0, 6) = 1.0;
    auto t = new_tensor(cfg);
    accumulate_window(t, Trajectory(y, u));
    EXPECT_EQ(t.block_weight(2, 2, 2), 1.0);
    for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double expect = (a == 1 && b == 1 && c == 1) ? 1.0 : 0.0;
                EXPECT_DOUBLE_EQ(t.data()(a, b, c), expect);
            }
        }
    }
}

TEST(AccumulateWindow, FootprintConstant) {
    std::mt19937_64 rng(14);
    MomentConfig cfg(1, 1, 2);
    auto t = new_tensor(cfg);
    const std::size_t before = t.footprint_bytes();
    for (int i = 0; i < 10000; ++i) {
        Trajectory w(random_matrix(rng, 1, 15), random_matrix(rng, 1, 15));
        accumulate_window(t, w);
    }
    EXPECT_EQ(t.footprint_bytes(), before);
}

TEST(NormalizedView, EmptyAndIdenticalContributions) {
    MomentConfig cfg(1, 1, 1);
    auto t = new_tensor(cfg);
    EXPECT_THROW(normalized_view(t), EmptyTensorError);
    const Trajectory w(Matrix::Constant(1, 9, 2.0), Matrix::Ones(1, 9));
    for (int i = 0; i < 3; ++i) accumulate_window(t, w);
    const Tensor3 view = normalized_view(t);
    // every contribution is 2*2*2 = 8
    for (double v : view.values()) EXPECT_DOUBLE_EQ(v, 8.0);
}

TEST(NormalizedView, DiscountedMeanOracle) {
    std::mt19937_64 rng(15);
    MomentConfig cfg(1, 2, 1, 0.8);
    const auto w1 = random_window(rng, 1, 2, 12), w2 = random_window(rng, 1, 2, 14);
    auto t = new_tensor(cfg);
    accumulate_window(t, w1);
    accumulate_window(t, w2);
    const Tensor3 view = normalized_view(t);
    const Tensor3 o1 = oracle_moment_tensor(w1, cfg), o2 = oracle_moment_tensor(w2, cfg);
    const std::size_t p = 2;
    for (std::size_t a = 0; a < view.dim(); ++a) {
        for (std::size_t b = 0; b < view.dim(); ++b) {
            for (std::size_t c = 0; c < view.dim(); ++c) {
                const std::size_t k1 = a / p + 1, k2 = b / p + 1, k3 = c / p + 1;
                const double n1 = static_cast<double>(admissible_starts(12, k1, k2, k3));
                const double n2 = static_cast<double>(admissible_starts(14, k1, k2, k3));
                const double expect = (0.8 * o1(a, b, c) + o2(a, b, c)) / (0.8 * n1 + n2);
                EXPECT_NEAR(view(a, b, c), expect, 1e-12);
            }
        }
    }
}

TEST(NormalizedView, ExpectationIsSymmetricRankOne) {
    // With i.i.d. unit-variance inputs the normalized tensor approaches
    // G∘G∘G where G stacks the Markov parameters.
    MomentConfig cfg(1, 1, 1);
    TimeDelaySystem sys(testutil::scalar(0.5), testutil::scalar(1), testutil::scalar(1), 0);
    std::mt19937_64 rng(16);
    auto t = new_tensor(cfg);
    const Matrix u = testutil::rademacher(rng, 1, 200000);
    const auto traj = simulate_delayed(sys, u, Vector::Zero(1));
    for (std::size_t s = 0; s + 1000 <= 200000; s += 1000) accumulate_window(t, traj.slice(s, 1000));
    const Tensor3 view = normalized_view(t);
    const double g[2] = {1.0, 0.5};
    for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(view(a, b, c), g[a] * g[b] * g[c], 0.05);
        }
    }
}

TEST(MismatchTrigger, ExactZeroAndPartialFits) {
    MomentConfig cfg(1, 1, 1);
    auto t = new_tensor(cfg);
    const Trajectory w(Matrix::Constant(1, 9, 2.0), Matrix::Ones(1, 9));
    accumulate_window(t, w);
    CPFactors exact(Matrix::Constant(2, 1, 2.0), Matrix::Constant(2, 1, 2.0), Matrix::Constant(2, 1, 2.0));
    EXPECT_LT(mismatch_trigger(t, exact), 1e-10);
    CPFactors zero(Matrix::Zero(2, 1), Matrix::Zero(2, 1), Matrix::Zero(2, 1));
    EXPECT_DOUBLE_EQ(mismatch_trigger(t, zero), 1.0);

    std::mt19937_64 rng(17);
    auto t2 = new_tensor(MomentConfig(1, 1, 2));
    accumulate_window(t2, random_window(rng, 1, 1, 40));
    const CPFactors f(random_matrix(rng, 4, 1), random_matrix(rng, 4, 1), random_matrix(rng, 4, 1));
    const Tensor3 view = normalized_view(t2);
    const double direct = (view - reconstruct(f, 4)).frobenius_norm() / view.frobenius_norm();
    EXPECT_NEAR(mismatch_trigger(t2, f), direct, 1e-12);
}

TEST(Snapshot, RoundTrip) {
    std::mt19937_64 rng(18);
    MomentConfig cfg(2, 1, 2, 0.9);
    auto t = new_tensor(cfg);
    accumulate_window(t, random_window(rng, 2, 1, 40));
    accumulate_window(t, random_window(rng, 2, 1, 40));
    std::stringstream ss;
    write_snapshot(ss, t);
    EXPECT_EQ(ss.str().size(), 4 * 4 + 8 + 8 + 8 * 64 + 8 * t.data().size());
    const SystemTensor back = read_snapshot(ss);
    EXPECT_EQ(back.config(), cfg);
    EXPECT_EQ(back.sample_count(), t.sample_count());
    EXPECT_EQ(back.data().values(), t.data().values());
    EXPECT_EQ(back.block_weights(), t.block_weights());
}

TEST(Snapshot, RejectsBadVersionAndTruncation) {
    std::stringstream bad;
    detail::write_le<std::uint32_t>(bad, 99);
    EXPECT_THROW(read_snapshot(bad), FormatError);

    auto t = new_tensor(MomentConfig(1, 1, 1));
    std::stringstream ss;
    write_snapshot(ss, t);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 3);
    std::stringstream cut(bytes);
    EXPECT_THROW(read_snapshot(cut), FormatError);
}
