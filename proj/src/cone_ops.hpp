#pragma once

// Single-block second-order cone primitives used by the interior-point solver.
// A cone vector is v = (v0, v1) with v0 >= ||v1||.

#include "mdr/trajkit.hpp"

namespace mdr::detail {

/// Nesterov-Todd scaling W = eta [w0, w1'; w1, I + w1 w1'/(1 + w0)].
struct SocScaling {
    double eta = 1.0;
    Vector wbar;
};

/// v0^2 - ||v1||^2, evaluated as a product to limit cancellation.
double soc_det(const Eigen::Ref<const Vector>& v);

/// Scaling with W z = W^{-1} s. Returns false unless both s and z are strictly interior.
bool soc_nt_scaling(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& z, SocScaling& out);

/// out = W u, or W^{-1} u when `inverse`.
Vector soc_apply(const SocScaling& w, const Eigen::Ref<const Vector>& u, bool inverse);

/// Largest alpha with x + alpha y still in the cone (infinity when unbounded). x must be interior.
double soc_max_step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y);

/// Jordan product u o v = (u'v, u0 v1 + v0 u1).
Vector soc_jordan(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v);

/// Solves lambda o x = v for x.
Vector soc_jordan_solve(const Eigen::Ref<const Vector>& lambda, const Eigen::Ref<const Vector>& v);

/// F with F'F = P for symmetric positive semidefinite P. Cholesky first, eigen-decomposition fallback
/// that drops the null space, so F may have fewer rows than P.
Matrix psd_square_root(const Matrix& P);

} // namespace mdr::detail
