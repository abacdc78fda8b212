#include "mdr/errors.hpp"
#include "mdr/plant.hpp"
#include "mdr/trajkit.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace mdr;

namespace {

Signal random_signal(std::mt19937_64& rng, Eigen::Index T, Eigen::Index d)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(T, d);
    for (Eigen::Index k = 0; k < T; ++k)
        for (Eigen::Index c = 0; c < d; ++c)
            m(k, c) = u(rng);
    return Signal(std::move(m));
}

} // namespace

TEST(Hankel, ScalarExample)
{
    Matrix s(5, 1);
    s << 1, 2, 3, 4, 5;
    const HankelMatrix h = build_hankel(Signal(s), 3);
    Matrix expected(3, 3);
    expected << 1, 2, 3, 2, 3, 4, 3, 4, 5;
    EXPECT_EQ(h.data, expected);
    EXPECT_EQ(h.columns(), 3);
}

TEST(Hankel, VectorExample)
{
    Matrix s(3, 2);
    s << 1, 10, 2, 20, 3, 30;
    const HankelMatrix h = build_hankel(Signal(s), 2);
    Matrix expected(4, 2);
    expected << 1, 2, 10, 20, 2, 3, 20, 30;
    EXPECT_EQ(h.data, expected);
}

TEST(Hankel, DepthBeyondDataThrows)
{
    EXPECT_THROW(build_hankel(Signal(5, 1), 6), DepthExceedsData);
    EXPECT_THROW(build_hankel(Signal(5, 1), 0), DepthExceedsData);
}

TEST(Hankel, IndexLawOnRandomSignals)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index d = 1 + trial % 3;
        const Eigen::Index T = 10 + trial;
        const Eigen::Index L = 1 + trial % 9;
        const Signal s = random_signal(rng, T, d);
        const HankelMatrix h = build_hankel(s, L);
        ASSERT_EQ(h.columns(), T - L + 1);
        for (Eigen::Index i = 0; i < L; ++i)
            for (Eigen::Index j = 0; j < h.columns(); ++j)
                EXPECT_EQ(h.block(i, j), s.at(i + j));
    }
}

TEST(Hankel, ShiftStructure)
{
    std::mt19937_64 rng(2);
    const Signal s = random_signal(rng, 30, 2);
    const HankelMatrix h = build_hankel(s, 5);
    const HankelMatrix hs = build_hankel(s.shifted(1), 5);
    for (Eigen::Index j = 0; j + 1 < h.columns(); ++j)
        EXPECT_EQ(h.data.col(j + 1), hs.data.col(j));
}

TEST(Excitation, ConstantSignalIsNotExciting)
{
    EXPECT_FALSE(persistently_exciting(Signal(Matrix::Ones(150, 1)), 24));
}

TEST(Excitation, RandomSignalsAreExciting)
{
    std::mt19937_64 rng(3);
    const Signal s1 = random_signal(rng, 150, 1);
    const Signal s3 = random_signal(rng, 150, 3);
    // Oracle: count singular values directly.
    auto full_rank = [](const Signal& s, Eigen::Index order) {
        const HankelMatrix h = build_hankel(s, order);
        Eigen::BDCSVD<Matrix> svd(h.data);
        const auto& sv = svd.singularValues();
        return (sv.array() > 1e-9 * sv(0)).count() == h.data.rows();
    };
    EXPECT_TRUE(full_rank(s1, 24));
    EXPECT_TRUE(persistently_exciting(s1, 24));
    EXPECT_TRUE(full_rank(s3, 26));
    EXPECT_TRUE(persistently_exciting(s3, 26));
    EXPECT_THROW(persistently_exciting(s1.window(0, 10), 24), DepthExceedsData);
}

TEST(Split, PastFutureRows)
{
    std::mt19937_64 rng(4);
    const HankelMatrix h = build_hankel(random_signal(rng, 60, 1), 24);
    const PastFuture pf = split_past_future(h, 4, 20);
    EXPECT_EQ(pf.past.rows(), 4);
    EXPECT_EQ(pf.future.rows(), 20);
    Matrix restacked(24, h.columns());
    restacked << pf.past, pf.future;
    EXPECT_EQ(restacked, h.data);

    const PastFuture none = split_past_future(h, 0, 24);
    EXPECT_EQ(none.past.rows(), 0);
    EXPECT_EQ(none.future, h.data);

    EXPECT_THROW(split_past_future(build_hankel(random_signal(rng, 10, 1), 3), 2, 2), DepthMismatch);
}

TEST(Signal, StackRoundTripAndCsv)
{
    std::mt19937_64 rng(5);
    const Signal s = random_signal(rng, 7, 3);
    EXPECT_EQ(Signal::from_stacked(s.stacked(), 3).samples(), s.samples());
    std::stringstream ss;
    write_signal_csv(ss, s);
    EXPECT_EQ(ss.str().substr(0, 13), "t,ch0,ch1,ch2");
    const Signal back = read_signal_csv(ss);
    EXPECT_EQ(back.samples(), s.samples());
    EXPECT_THROW(Signal::from_stacked(Vector::Zero(5), 2), DimensionMismatch);
}

TEST(FundamentalLemma, SingleMassTrajectoriesLieInDataSpan)
{
    // One mass on a spring and damper: n = 2, one input, position output.
    ContinuousLTI c;
    c.A = Matrix(2, 2);
    c.A << 0, 1, -100, -5;
    c.B = Matrix(2, 1);
    c.B << 0, 1;
    c.C = Matrix(1, 2);
    c.C << 1, 0;
    c.D = Matrix::Zero(1, 1);
    const DiscreteLTI d = discretize_zoh(c, 0.1);

    const Eigen::Index t_ini = 4, horizon = 20, n = 2, L = t_ini + horizon;
    std::mt19937_64 rng(6);
    const Signal ud = random_signal(rng, 150, 1);
    ASSERT_TRUE(persistently_exciting(ud, L + n));
    const Simulation data = simulate(d, Vector::Zero(2), ud, {}, 0);
    Matrix H(2 * L, 150 - L + 1);
    H << build_hankel(ud, L).data, build_hankel(data.outputs, L).data;

    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 10; ++trial) {
        const Signal u = random_signal(rng, L, 1);
        const Vector x0 = Eigen::Vector2d(nd(rng), nd(rng));
        const Simulation fresh = simulate(d, x0, u, {}, 0);
        Vector w(2 * L);
        w << u.stacked(), fresh.outputs.stacked();
        const Vector g = H.completeOrthogonalDecomposition().solve(w);
        EXPECT_LE((H * g - w).norm(), 1e-8);
    }
}
