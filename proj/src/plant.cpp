#include "mdr/plant.hpp"

#include "mdr/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <string>

namespace mdr {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    return lo + (hi - lo) * u01(rng);
}

constexpr std::uint64_t kRetrySalt = 0x9E3779B97F4A7C15ULL;

} // namespace

void MsdParams::validate() const
{
    if (!(m1 > 0.0) || !(m2 > 0.0) || !(m3 > 0.0))
        throw NonPositiveMass("MsdParams: masses must be positive");
    for (double v : {k1, k2, k3, c1, c2, c3})
        if (!(v >= 0.0))
            throw Error("MsdParams: stiffness and damping must be non-negative");
}

void ThetaBox::validate() const
{
    if (!(k3.lo <= k3.hi) || !(c3.lo <= c3.hi))
        throw Error("ThetaBox: lower bound exceeds upper bound");
}

DiscreteLTI HybridPartition::reassemble(double Ts) const
{
    const Eigen::Index n = n_k + n_u;
    const Eigen::Index p = p_k + p_u;
    const Eigen::Index m = inputs();
    DiscreteLTI d;
    d.Ts = Ts;
    d.Ad.resize(n, n);
    d.Ad << A_k, A_ku, A_uk, A_u;
    d.Bd.resize(n, m);
    d.Bd << B_k, B_u;
    d.Cd = Matrix::Zero(p, n);
    d.Cd.topLeftCorner(p_k, n_k) = C_k;
    d.Cd.bottomLeftCorner(p_u, n_k) = C_uk;
    d.Cd.bottomRightCorner(p_u, n_u) = C_u;
    d.Dd.resize(p, m);
    d.Dd << D_k, D_u;
    return d;
}

ContinuousLTI build_msd(const MsdParams& p)
{
    p.validate();
    ContinuousLTI c;
    c.A = Matrix::Zero(6, 6);
    c.A.topRightCorner(3, 3).setIdentity();

    // Velocity rows from the force balance on each mass.
    c.A(3, 0) = -(p.k1 + p.k2) / p.m1;
    c.A(3, 1) = p.k2 / p.m1;
    c.A(3, 3) = -(p.c1 + p.c2) / p.m1;
    c.A(3, 4) = p.c2 / p.m1;

    c.A(4, 0) = p.k2 / p.m2;
    c.A(4, 1) = -(p.k2 + p.k3) / p.m2;
    c.A(4, 2) = p.k3 / p.m2;
    c.A(4, 3) = p.c2 / p.m2;
    c.A(4, 4) = -(p.c2 + p.c3) / p.m2;
    c.A(4, 5) = p.c3 / p.m2;

    c.A(5, 1) = p.k3 / p.m3;
    c.A(5, 2) = -p.k3 / p.m3;
    c.A(5, 4) = p.c3 / p.m3;
    c.A(5, 5) = -p.c3 / p.m3;

    c.B = Matrix::Zero(6, 3);
    c.B(3, 0) = 1.0 / p.m1;
    c.B(4, 1) = 1.0 / p.m2;
    c.B(5, 2) = 1.0 / p.m3;

    c.C = Matrix::Zero(3, 6);
    c.C.leftCols(3).setIdentity();
    c.D = Matrix::Zero(3, 3);
    return c;
}

DiscreteLTI discretize_zoh(const ContinuousLTI& c, double Ts)
{
    if (!(Ts > 0.0))
        throw Error("discretize_zoh: sample time must be positive");
    const Eigen::Index n = c.states();
    const Eigen::Index m = c.inputs();
    Matrix aug = Matrix::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = c.A * Ts;
    aug.topRightCorner(n, m) = c.B * Ts;
    const Matrix e = aug.exp();
    return {e.topLeftCorner(n, n), e.topRightCorner(n, m), c.C, c.D, Ts};
}

DiscreteLTI permute_states(const DiscreteLTI& d, const std::vector<Eigen::Index>& perm)
{
    const auto n = d.states();
    if (static_cast<Eigen::Index>(perm.size()) != n)
        throw DimensionMismatch("permute_states: permutation length mismatch");
    DiscreteLTI out = d;
    for (Eigen::Index i = 0; i < n; ++i) {
        out.Bd.row(i) = d.Bd.row(perm[static_cast<std::size_t>(i)]);
        out.Cd.col(i) = d.Cd.col(perm[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j)
            out.Ad(i, j) = d.Ad(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return out;
}

std::vector<Eigen::Index> msd_hybrid_order()
{
    return {0, 1, 3, 4, 2, 5};
}

HybridPartition partition_hybrid(const DiscreteLTI& d, Eigen::Index n_k, Eigen::Index p_k)
{
    const Eigen::Index n = d.states();
    const Eigen::Index p = d.outputs();
    if (n_k <= 0 || n_k >= n)
        throw BadSplit("partition_hybrid: need 0 < n_k < n (n_k=" + std::to_string(n_k) + ", n=" +
                       std::to_string(n) + ")");
    if (p_k < 0 || p_k > p)
        throw BadSplit("partition_hybrid: need 0 <= p_k <= p");
    const Eigen::Index n_u = n - n_k;
    const Eigen::Index p_u = p - p_k;
    const Matrix upper_right = d.Cd.topRightCorner(p_k, n_u);
    if (upper_right.size() > 0 && upper_right.cwiseAbs().maxCoeff() > 1e-12 * (1.0 + d.Cd.cwiseAbs().maxCoeff()))
        throw BadSplit("partition_hybrid: known outputs must not depend on unknown states");

    HybridPartition h;
    h.n_k = n_k;
    h.n_u = n_u;
    h.p_k = p_k;
    h.p_u = p_u;
    h.A_k = d.Ad.topLeftCorner(n_k, n_k);
    h.A_ku = d.Ad.topRightCorner(n_k, n_u);
    h.A_uk = d.Ad.bottomLeftCorner(n_u, n_k);
    h.A_u = d.Ad.bottomRightCorner(n_u, n_u);
    h.B_k = d.Bd.topRows(n_k);
    h.B_u = d.Bd.bottomRows(n_u);
    h.C_k = d.Cd.topLeftCorner(p_k, n_k);
    h.C_uk = d.Cd.bottomLeftCorner(p_u, n_k);
    h.C_u = d.Cd.bottomRightCorner(p_u, n_u);
    h.D_k = d.Dd.topRows(p_k);
    h.D_u = d.Dd.bottomRows(p_u);
    return h;
}

HybridPartition msd_partition(const MsdParams& p, double Ts)
{
    const DiscreteLTI d = permute_states(discretize_zoh(build_msd(p), Ts), msd_hybrid_order());
    return partition_hybrid(d, 4, 2);
}

Matrix output_coupling(const HybridPartition& part)
{
    if (part.p_u == 0)
        return Matrix::Zero(part.n_k, 0);
    const Matrix pinv = Eigen::CompleteOrthogonalDecomposition<Matrix>(part.C_u).pseudoInverse();
    return part.A_ku * pinv;
}

PlantSimulator::PlantSimulator(DiscreteLTI model, Vector x0, NoiseSpec noise, std::uint64_t seed)
    : model_(std::move(model)), x_(std::move(x0)), noise_(noise), rng_(seed)
{
    if (x_.size() != model_.states())
        throw DimensionMismatch("PlantSimulator: initial state dimension mismatch");
    if (!(noise_.sigma_w >= 0.0) || !(noise_.sigma_v >= 0.0))
        throw Error("NoiseSpec: standard deviations must be non-negative");
}

Vector PlantSimulator::measure(const Vector& u)
{
    if (u.size() != model_.inputs())
        throw DimensionMismatch("PlantSimulator::measure: input dimension mismatch");
    Vector y = model_.Cd * x_ + model_.Dd * u;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) += noise_.sigma_v * normal_(rng_);
    return y;
}

Vector PlantSimulator::advance(const Vector& u, double noise_scale)
{
    if (u.size() != model_.inputs())
        throw DimensionMismatch("PlantSimulator::advance: input dimension mismatch");
    Vector w(model_.states());
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w(i) = noise_scale * noise_.sigma_w * normal_(rng_);
    x_ = model_.Ad * x_ + model_.Bd * u + w;
    return w;
}

Simulation simulate(const DiscreteLTI& d, const Vector& x0, const Signal& u_seq, const NoiseSpec& noise,
                    std::uint64_t seed)
{
    if (u_seq.dim() != d.inputs())
        throw DimensionMismatch("simulate: input dimension " + std::to_string(u_seq.dim()) + " != " +
                                std::to_string(d.inputs()));
    const Eigen::Index T = u_seq.length();
    PlantSimulator sim(d, x0, noise, seed);
    Simulation out{Signal(T + 1, d.states()), Signal(T, d.outputs()), Signal(T, d.states()),
                   Signal(T, d.outputs())};
    out.states.set(0, x0);
    for (Eigen::Index k = 0; k < T; ++k) {
        const Vector u = u_seq.at(k);
        const Vector clean = d.Cd * sim.state() + d.Dd * u;
        const Vector y = sim.measure(u);
        out.outputs.set(k, y);
        out.measurement_noise.set(k, y - clean);
        out.process_noise.set(k, sim.advance(u));
        out.states.set(k + 1, sim.state());
    }
    return out;
}

MsdParams sample_theta(const ThetaBox& box, std::mt19937_64& rng, const MsdParams& nominal)
{
    box.validate();
    MsdParams p = nominal;
    p.k3 = uniform(rng, box.k3.lo, box.k3.hi);
    p.c3 = uniform(rng, box.c3.lo, box.c3.hi);
    return p;
}

MsdParams sample_theta(const ThetaBox& box, std::uint64_t seed, const MsdParams& nominal)
{
    std::mt19937_64 rng(seed);
    return sample_theta(box, rng, nominal);
}

CollectedData collect_data(const DiscreteLTI& d, const HybridPartition& part, Eigen::Index T, double amplitude,
                           const NoiseSpec& noise, std::uint64_t seed, Eigen::Index pe_order)
{
    if (part.n_k + part.n_u != d.states() || part.p_k + part.p_u != d.outputs())
        throw DimensionMismatch("collect_data: partition does not match the model");
    if (pe_order > T)
        throw DepthExceedsData("collect_data: PE order exceeds the data length");

    Signal u;
    bool excited = false;
    std::uint64_t input_seed = seed;
    for (int attempt = 0; attempt < 2 && !excited; ++attempt) {
        std::mt19937_64 rng(input_seed);
        Matrix samples(T, d.inputs());
        for (Eigen::Index k = 0; k < T; ++k)
            for (Eigen::Index c = 0; c < d.inputs(); ++c)
                samples(k, c) = uniform(rng, -amplitude, amplitude);
        u = Signal(std::move(samples));
        excited = persistently_exciting(u, pe_order);
        input_seed = seed ^ kRetrySalt;
    }
    if (!excited)
        throw ExcitationFailed("collect_data: input is not persistently exciting of order " +
                               std::to_string(pe_order) + " (amplitude " + std::to_string(amplitude) + ")");

    const Simulation sim = simulate(d, Vector::Zero(d.states()), u, noise, seed + 1);
    CollectedData out;
    out.u = u;
    out.y = sim.outputs;
    out.y_u = Signal(Matrix(sim.outputs.samples().rightCols(part.p_u)));
    out.x_known = Signal(Matrix(sim.states.samples().topRows(T).leftCols(part.n_k)));
    out.x_known_next = Signal(Matrix(sim.states.samples().bottomRows(T).leftCols(part.n_k)));
    return out;
}

} // namespace mdr
