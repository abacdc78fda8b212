#pragma once

#include "mdr/trajkit.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace mdr {

/// Parameters of a three-mass chain: wall -k1,c1- m1 -k2,c2- m2 -k3,c3- m3.
struct MsdParams {
    double m1 = 1.0, m2 = 1.0, m3 = 1.0;
    double k1 = 100.0, k2 = 100.0, k3 = 100.0;
    double c1 = 5.0, c2 = 5.0, c3 = 5.0;

    void validate() const;
};

struct ContinuousLTI {
    Matrix A, B, C, D;

    Eigen::Index states() const { return A.rows(); }
    Eigen::Index inputs() const { return B.cols(); }
    Eigen::Index outputs() const { return C.rows(); }
};

struct DiscreteLTI {
    Matrix Ad, Bd, Cd, Dd;
    double Ts = 0.0;

    Eigen::Index states() const { return Ad.rows(); }
    Eigen::Index inputs() const { return Bd.cols(); }
    Eigen::Index outputs() const { return Cd.rows(); }
};

/// Known/unknown block split of a discrete model:
///   x_k+ = A_k x_k + A_ku x_u + B_k u,   x_u+ = A_uk x_k + A_u x_u + B_u u
///   y_k  = C_k x_k + D_k u,              y_u  = C_uk x_k + C_u x_u + D_u u
struct HybridPartition {
    Eigen::Index n_k = 0, n_u = 0, p_k = 0, p_u = 0;
    Matrix A_k, A_ku, A_uk, A_u;
    Matrix B_k, B_u;
    Matrix C_k, C_uk, C_u;
    Matrix D_k, D_u;

    Eigen::Index inputs() const { return B_k.cols(); }
    /// Rebuilds the full (A, B, C, D) from the blocks.
    DiscreteLTI reassemble(double Ts) const;
};

struct NoiseSpec {
    double sigma_w = 0.0;
    double sigma_v = 0.0;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Uncertainty box for the third spring/damper.
struct ThetaBox {
    Interval k3{80.0, 120.0};
    Interval c3{3.0, 7.0};

    void validate() const;
    static ThetaBox degenerate(const MsdParams& p) { return {{p.k3, p.k3}, {p.c3, p.c3}}; }
};

/// States ordered (x1, x2, x3, v1, v2, v3); one force input per mass; outputs are the positions.
ContinuousLTI build_msd(const MsdParams& p);

/// Exact zero-order-hold discretization through the augmented matrix exponential.
DiscreteLTI discretize_zoh(const ContinuousLTI& c, double Ts);

/// Reorders states: new state i is old state perm[i].
DiscreteLTI permute_states(const DiscreteLTI& d, const std::vector<Eigen::Index>& perm);

/// Permutation placing mass 1-2 positions/velocities first and mass 3 last: (x1, x2, v1, v2, x3, v3).
std::vector<Eigen::Index> msd_hybrid_order();

HybridPartition partition_hybrid(const DiscreteLTI& d, Eigen::Index n_k, Eigen::Index p_k);

/// MSD model discretized and partitioned with masses 1-2 known and mass 3 unknown.
HybridPartition msd_partition(const MsdParams& p, double Ts);

/// Coupling matrix A_y with A_ku x_u ~= A_y (y_u - C_uk x_k); A_y = A_ku pinv(C_u).
Matrix output_coupling(const HybridPartition& part);

/// Drives the discrete plant one step at a time with Gaussian process/measurement noise.
class PlantSimulator {
public:
    PlantSimulator(DiscreteLTI model, Vector x0, NoiseSpec noise, std::uint64_t seed);

    const DiscreteLTI& model() const { return model_; }
    const Vector& state() const { return x_; }

    /// Measurement y_k = C x_k + D u_k + v_k for the current state.
    Vector measure(const Vector& u);
    /// x_{k+1} = A x_k + B u_k + w_k, with w_k ~ N(0, (scale sigma_w)^2 I). Returns the injected w_k.
    Vector advance(const Vector& u, double noise_scale = 1.0);

private:
    DiscreteLTI model_;
    Vector x_;
    NoiseSpec noise_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

struct Simulation {
    Signal states;   ///< x_0 .. x_T (T+1 samples)
    Signal outputs;  ///< y_0 .. y_{T-1}
    Signal process_noise;
    Signal measurement_noise;
};

Simulation simulate(const DiscreteLTI& d, const Vector& x0, const Signal& u_seq, const NoiseSpec& noise,
                    std::uint64_t seed);

/// Draws k3 and c3 uniformly from the box; every other field is taken from `nominal`.
MsdParams sample_theta(const ThetaBox& box, std::uint64_t seed, const MsdParams& nominal = {});
MsdParams sample_theta(const ThetaBox& box, std::mt19937_64& rng, const MsdParams& nominal = {});

struct CollectedData {
    Signal u;        ///< applied excitation u_d
    Signal y;        ///< all measured outputs
    Signal y_u;      ///< unknown-subsystem output slice y_u^d
    Signal x_known;  ///< known-block states x_0 .. x_{T-1}
    Signal x_known_next; ///< known-block states x_1 .. x_T
};

/// Offline experiment: i.i.d. Uniform(-a, a) inputs, checked for persistency of excitation at `pe_order`.
/// `d` must already be in hybrid state order so the first `part.n_k` states are the known block.
/// Retries once with a derived seed, then throws ExcitationFailed.
CollectedData collect_data(const DiscreteLTI& d, const HybridPartition& part, Eigen::Index T, double amplitude,
                           const NoiseSpec& noise, std::uint64_t seed, Eigen::Index pe_order);

} // namespace mdr
