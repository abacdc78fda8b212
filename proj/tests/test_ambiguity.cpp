#include "mdr/ambiguity.hpp"
#include "mdr/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace mdr;

namespace {

// MSD in hybrid order with mass-3 position and velocity both measured, so C_u is invertible and the
// output coupling reproduces A_ku exactly.
struct FullyCoupled {
    DiscreteLTI d;
    HybridPartition part;
};

FullyCoupled fully_coupled()
{
    DiscreteLTI d = permute_states(discretize_zoh(build_msd({}), 0.1), msd_hybrid_order());
    Matrix C = Matrix::Zero(4, 6);
    C(0, 0) = C(1, 1) = C(2, 4) = C(3, 5) = 1.0;
    d.Cd = C;
    d.Dd = Matrix::Zero(4, 3);
    return {d, partition_hybrid(d, 4, 2)};
}

Signal uniform_signal(std::mt19937_64& rng, Eigen::Index T, Eigen::Index d, double a)
{
    std::uniform_real_distribution<double> u(-a, a);
    Matrix m(T, d);
    for (Eigen::Index k = 0; k < T; ++k)
        for (Eigen::Index c = 0; c < d; ++c)
            m(k, c) = u(rng);
    return Signal(std::move(m));
}

EmpiricalDist random_dist(std::mt19937_64& rng, Eigen::Index S, Eigen::Index d)
{
    std::normal_distribution<double> nd;
    Matrix m(S, d);
    for (Eigen::Index s = 0; s < S; ++s)
        for (Eigen::Index c = 0; c < d; ++c)
            m(s, c) = nd(rng);
    return EmpiricalDist(std::move(m));
}

Matrix column(std::initializer_list<double> v)
{
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v)
        m(i++, 0) = x;
    return m;
}

} // namespace

TEST(Residuals, NoiselessDataGivesZeroResiduals)
{
    const FullyCoupled fc = fully_coupled();
    std::mt19937_64 rng(1);
    const Signal u = uniform_signal(rng, 100, 3, 1.0);
    const Simulation s = simulate(fc.d, Vector::Zero(6), u, {}, 0);
    const Signal xk(Matrix(s.states.samples().leftCols(4)));
    const Residuals r = estimate_residuals(fc.part, u, s.outputs, xk);
    EXPECT_EQ(r.w.size(), 100);
    EXPECT_LE(r.w.atoms().rowwise().norm().maxCoeff(), 1e-10);
    EXPECT_LE(r.v.atoms().rowwise().norm().maxCoeff(), 1e-10);
}

TEST(Residuals, InjectedConstantIsRecovered)
{
    const FullyCoupled fc = fully_coupled();
    std::mt19937_64 rng(2);
    const Eigen::Index T = 80;
    const Signal u = uniform_signal(rng, T, 3, 1.0);
    Matrix x(T + 1, 6);
    x.row(0).setZero();
    Vector w_star = Vector::Zero(6);
    w_star(2) = 0.05;
    for (Eigen::Index k = 0; k < T; ++k)
        x.row(k + 1) = (fc.d.Ad * x.row(k).transpose() + fc.d.Bd * u.at(k) + w_star).transpose();
    const Signal y(Matrix((fc.d.Cd * x.topRows(T).transpose()).transpose()));
    const Residuals r = estimate_residuals(fc.part, u, y, Signal(Matrix(x.leftCols(4))));
    const Vector mean = r.w.atoms().colwise().mean();
    EXPECT_NEAR(mean(2), 0.05, 1e-10);
    for (Eigen::Index c : {0, 1, 3})
        EXPECT_NEAR(mean(c), 0.0, 1e-10);
}

TEST(Residuals, ProcessNoiseStatistics)
{
    const FullyCoupled fc = fully_coupled();
    std::mt19937_64 rng(3);
    const Signal u = uniform_signal(rng, 1000, 3, 1.0);
    const Simulation s = simulate(fc.d, Vector::Zero(6), u, {0.1, 0.0}, 17);
    const Residuals r = estimate_residuals(fc.part, u, s.outputs, Signal(Matrix(s.states.samples().leftCols(4))));
    for (Eigen::Index c = 0; c < 4; ++c) {
        const auto col = r.w.atoms().col(c).array();
        const double sd = std::sqrt((col - col.mean()).square().sum() / (r.w.size() - 1));
        EXPECT_GE(sd, 0.08);
        EXPECT_LE(sd, 0.12);
    }
}

TEST(Residuals, MismatchedChannelsThrow)
{
    const FullyCoupled fc = fully_coupled();
    EXPECT_THROW(estimate_residuals(fc.part, Signal(10, 3), Signal(10, 4), Signal(11, 3)), DimensionMismatch);
    EXPECT_THROW(estimate_residuals(fc.part, Signal(5, 3), Signal(5, 4), Signal(11, 4)), DimensionMismatch);
}

TEST(W1, KnownValues)
{
    const EmpiricalDist a(column({0.0}));
    const EmpiricalDist b(column({1.0}));
    EXPECT_DOUBLE_EQ(w1_distance(a, a), 0.0);
    EXPECT_DOUBLE_EQ(w1_distance(a, b), 1.0);
    EXPECT_DOUBLE_EQ(w1_distance(EmpiricalDist(column({0.0, 2.0})), EmpiricalDist(column({3.0, 1.0}))), 1.0);
    EXPECT_THROW(w1_distance(a, EmpiricalDist(Matrix::Zero(1, 2))), DimensionMismatch);
}

TEST(W1, UnequalCountsMatchReplicatedAtoms)
{
    // Replicating each atom k times leaves the distribution unchanged, so the quantile integral must
    // agree with sorted matching on the replicated samples.
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const EmpiricalDist p = random_dist(rng, 3, 2);
        const EmpiricalDist q = random_dist(rng, 4, 2);
        Matrix p12(12, 2), q12(12, 2);
        for (Eigen::Index i = 0; i < 12; ++i) {
            p12.row(i) = p.atoms().row(i / 4);
            q12.row(i) = q.atoms().row(i / 3);
        }
        EXPECT_NEAR(w1_distance(p, q), w1_distance(EmpiricalDist(p12), EmpiricalDist(q12)), 1e-12);
    }
}

TEST(W1, MetricAxiomsOnRandomTriples)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> count(1, 12);
    for (int trial = 0; trial < 100; ++trial) {
        const EmpiricalDist a = random_dist(rng, count(rng), 3);
        const EmpiricalDist b = random_dist(rng, count(rng), 3);
        const EmpiricalDist c = random_dist(rng, count(rng), 3);
        EXPECT_NEAR(w1_distance(a, b), w1_distance(b, a), 1e-9);
        EXPECT_NEAR(w1_distance(a, a), 0.0, 1e-9);
        EXPECT_LE(w1_distance(a, c), w1_distance(a, b) + w1_distance(b, c) + 1e-9);
    }
}

TEST(Ball, ZeroRadiusReturnsCenter)
{
    std::mt19937_64 rng(6);
    const AmbiguitySpec spec{random_dist(rng, 10, 2), 0.0};
    EXPECT_EQ(sample_dist_in_ball(spec, 3).atoms(), spec.center.atoms());
}

TEST(Ball, MembersStayInsideRadius)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const AmbiguitySpec spec{random_dist(rng, 1 + trial % 17, 1 + trial % 4), 0.5 * (trial % 5)};
        const EmpiricalDist s = sample_dist_in_ball(spec, static_cast<std::uint64_t>(trial));
        EXPECT_LE(w1_distance(s, spec.center), spec.radius + 1e-12);
    }
    const AmbiguitySpec spec{random_dist(rng, 5, 2), 0.5};
    EXPECT_EQ(sample_dist_in_ball(spec, 9).atoms(), sample_dist_in_ball(spec, 9).atoms());
    EXPECT_THROW(sample_dist_in_ball({spec.center, -1.0}, 1), Error);
}

TEST(Scenarios, TrivialCase)
{
    const MsdParams nominal;
    const AmbiguitySpec zero_w{EmpiricalDist::point(Vector::Zero(4)), 0.0};
    const AmbiguitySpec zero_v{EmpiricalDist::point(Vector::Zero(3)), 0.0};
    const auto sc = draw_scenarios(ThetaBox::degenerate(nominal), zero_w, zero_v, 1, 20, 11);
    ASSERT_EQ(sc.size(), 1u);
    EXPECT_EQ(sc[0].theta.k3, 100.0);
    EXPECT_EQ(sc[0].theta.c3, 5.0);
    EXPECT_EQ(sc[0].w_path.length(), 20);
    EXPECT_EQ(sc[0].w_path.dim(), 4);
    EXPECT_EQ(sc[0].v_path.dim(), 3);
    EXPECT_EQ(sc[0].w_path.samples().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(sc[0].v_path.samples().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Scenarios, RangesAndDeterminism)
{
    std::mt19937_64 rng(8);
    const AmbiguitySpec w{random_dist(rng, 50, 4), 0.05};
    const AmbiguitySpec v{random_dist(rng, 50, 3), 0.005};
    const auto a = draw_scenarios(ThetaBox{}, w, v, 5, 20, 99);
    const auto b = draw_scenarios(ThetaBox{}, w, v, 5, 20, 99);
    ASSERT_EQ(a.size(), 5u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_GE(a[i].theta.k3, 80.0);
        EXPECT_LE(a[i].theta.k3, 120.0);
        EXPECT_GE(a[i].theta.c3, 3.0);
        EXPECT_LE(a[i].theta.c3, 7.0);
        EXPECT_EQ(a[i].theta.k3, b[i].theta.k3);
        EXPECT_EQ(a[i].w_path.samples(), b[i].w_path.samples());
        EXPECT_EQ(a[i].v_path.samples(), b[i].v_path.samples());
    }
    // Scenario i depends only on seed + i.
    const auto shifted = draw_scenarios(ThetaBox{}, w, v, 4, 20, 100);
    EXPECT_EQ(shifted[0].w_path.samples(), a[1].w_path.samples());
    EXPECT_THROW(draw_scenarios(ThetaBox{}, w, v, 0, 20, 1), Error);
}

TEST(UpdateDist, SlidingWindow)
{
    const EmpiricalDist d(column({1.0, 2.0, 3.0}));
    EXPECT_EQ(update_dist(d, Matrix(0, 1), 3).atoms(), d.atoms());
    EXPECT_EQ(update_dist(d, column({4.0}), 3).atoms(), column({2.0, 3.0, 4.0}));
    EXPECT_THROW(update_dist(d, Matrix::Zero(1, 2), 3), DimensionMismatch);
}

TEST(UpdateDist, WindowStatistics)
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0.0, 0.1);
    Matrix draws(1000, 1);
    for (Eigen::Index i = 0; i < 1000; ++i)
        draws(i, 0) = nd(rng);
    const EmpiricalDist d = update_dist(EmpiricalDist(column({5.0})), draws, 1000);
    ASSERT_EQ(d.size(), 1000);
    const auto col = d.atoms().col(0).array();
    const double sd = std::sqrt((col - col.mean()).square().sum() / 999.0);
    EXPECT_GE(sd, 0.08);
    EXPECT_LE(sd, 0.12);
}

TEST(DistCsv, RoundTrip)
{
    std::mt19937_64 rng(10);
    const EmpiricalDist d = random_dist(rng, 6, 3);
    std::stringstream ss;
    write_dist_csv(ss, d);
    EXPECT_EQ(read_dist_csv(ss).atoms(), d.atoms());
}
