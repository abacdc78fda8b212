#pragma once

#include "mdr/plant.hpp"
#include "mdr/trajkit.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mdr {

/// Uniformly weighted atoms; row s of `atoms` is atom s.
class EmpiricalDist {
public:
    EmpiricalDist() = default;
    explicit EmpiricalDist(Matrix atoms);

    /// A single atom at `v`.
    static EmpiricalDist point(const Vector& v);

    Eigen::Index size() const { return atoms_.rows(); }
    Eigen::Index dim() const { return atoms_.cols(); }
    const Matrix& atoms() const { return atoms_; }
    Vector atom(Eigen::Index s) const { return atoms_.row(s).transpose(); }

private:
    Matrix atoms_;
};

/// Wasserstein ball of order 1 around `center`.
struct AmbiguitySpec {
    EmpiricalDist center;
    double radius = 0.0;

    void validate() const;
};

/// One sampled realization for the scenario program.
struct Scenario {
    MsdParams theta;
    Signal w_path; ///< N x n_k process-noise path on the known block
    Signal v_path; ///< N x p measurement-noise path on all outputs
    EmpiricalDist w_dist; ///< the ball member the w path was drawn from
    EmpiricalDist v_dist;
};

struct Residuals {
    EmpiricalDist w; ///< known-block process residuals
    EmpiricalDist v; ///< measurement residuals, all outputs
};

/// Residual analysis of logged data. `x_known` holds K+1 known-block states; transitions k = 0..K-1
/// use u_k and y_k, so u and y need at least K samples.
///
///   w_k = x_{k+1} - (A_k x_k + A_y (y_u,k - C_uk x_k - D_u u_k) + B_k u_k)
///   v_k = y_k - (C x_k_full + D u_k), with the unknown state reconstructed by least squares from
///         x_{k+1} - A_k x_k - B_k u_k = A_ku x_u.
Residuals estimate_residuals(const HybridPartition& part, const Signal& u, const Signal& y, const Signal& x_known);

/// Sum over channels of the one-dimensional W1 distance between the marginals.
double w1_distance(const EmpiricalDist& p, const EmpiricalDist& q);

/// Perturbed copy of spec.center: every atom moves by a random vector, rescaled so the mean absolute shift
/// summed over channels equals the radius. The shift itself is a coupling, so the W1 distance is at most
/// the radius.
EmpiricalDist sample_dist_in_ball(const AmbiguitySpec& spec, std::uint64_t seed);

/// Scenario i uses its own generator seeded with seed + i.
std::vector<Scenario> draw_scenarios(const ThetaBox& box, const AmbiguitySpec& spec_w, const AmbiguitySpec& spec_v,
                                     int M, Eigen::Index N, std::uint64_t seed, const MsdParams& nominal = {});

/// Appends rows of `new_samples` and keeps the most recent `window` atoms.
EmpiricalDist update_dist(const EmpiricalDist& d, const Matrix& new_samples, Eigen::Index window);

// CSV: header `atom,ch0,ch1,...`, one atom per row.
void write_dist_csv(std::ostream& os, const EmpiricalDist& d);
void write_dist_csv(const std::string& path, const EmpiricalDist& d);
EmpiricalDist read_dist_csv(std::istream& is);

} // namespace mdr
