#pragma once

#include "mdr/trajkit.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mdr {

/// value(z) = z'Pz + q'z + r0 with P symmetric positive semidefinite.
///
/// Optional factored form: when F is non-empty the caller guarantees F'F = P and 2F'f = q, so
/// value(z) = ||F z + f||^2 + r0 - f'f. The solver then works with F directly, which avoids
/// cancellation between z'Pz and q'z + r0 when the cost is small compared to its parts.
struct QuadCost {
    Matrix P;
    Vector q;
    double r0 = 0.0;
    Matrix F;
    Vector f;
};

double eval_cost(const QuadCost& c, const Vector& z);
Vector cost_gradient(const QuadCost& c, const Vector& z);

/// Epigraph scenario program
///
///   minimize t  over (z, t)
///   subject to  J_i(z) <= t        for every cost i
///               E z = f
///               G z <= h
///               lo <= z <= hi      (entries may be +-infinity)
struct ConvexProblem {
    Eigen::Index n_z = 0;
    std::vector<QuadCost> costs;
    Matrix E;
    Vector f;
    Matrix G;
    Vector h;
    Vector lo;
    Vector hi;

    /// Empty constraint blocks and infinite bounds for an n-dimensional decision.
    explicit ConvexProblem(Eigen::Index n = 0);

    void add_equalities(const Matrix& rows, const Vector& rhs);
    void add_inequalities(const Matrix& rows, const Vector& rhs);

    /// Throws DimensionMismatch on inconsistent blocks or when no cost is present.
    void validate() const;
};

enum class SolveStatus { Optimal, Infeasible, MaxIterations };

std::string to_string(SolveStatus s);

/// Lagrange multipliers in the problem's own terms.
struct Multipliers {
    Vector costs;      ///< one per epigraph constraint; they sum to one at optimality
    Vector equalities;
    Vector inequalities;
    Vector lower;
    Vector upper;
};

struct SolveResult {
    Vector z;
    double t = 0.0;
    SolveStatus status = SolveStatus::MaxIterations;
    double kkt_primal = 0.0;
    double kkt_dual = 0.0;
    double kkt_gap = 0.0;
    int iterations = 0;
    Multipliers multipliers;
};

struct SolveOptions {
    double tol = 1e-6;
    int max_iterations = 200;
};

/// Primal-dual interior-point solve. Each epigraph constraint is lowered to a second-order cone
/// through its factor (F, f) when given, otherwise a square-root factor of P; boxes and G rows become non-negative orthant constraints.
SolveResult solve(const ConvexProblem& p, const SolveOptions& opts = {});

struct KktResiduals {
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;

    double max() const;
};

/// Recomputes scaled KKT residuals of (z, t, multipliers) from the problem data alone.
///
/// primal: constraint violations, each divided by 1 + the magnitude of the terms involved.
/// dual:   stationarity of the Lagrangian in z and t, plus sign violations of the multipliers.
/// gap:    largest complementarity product, divided by 1 + |t|.
KktResiduals kkt_residuals(const ConvexProblem& p, const SolveResult& r);

/// Plain-text dump: dimensions, then every matrix row-major, for cross-checking with other solvers.
void dump_problem(std::ostream& os, const ConvexProblem& p);

} // namespace mdr
