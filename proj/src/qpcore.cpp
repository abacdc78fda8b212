#include "mdr/qpcore.hpp"

#include "mdr/errors.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace mdr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double entry_or_zero(const Vector& v, Eigen::Index i)
{
    return i < v.size() ? v(i) : 0.0;
}

// Largest |row_i .* z| together with |rhs_i|; used to scale row residuals.
double row_scale(const Matrix& rows, Eigen::Index i, const Vector& z, double rhs)
{
    double s = std::abs(rhs);
    for (Eigen::Index j = 0; j < rows.cols(); ++j)
        s = std::max(s, std::abs(rows(i, j) * z(j)));
    return 1.0 + s;
}

void write_matrix(std::ostream& os, const char* name, const Matrix& m)
{
    os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            os << (j ? " " : "") << detail::format_double(m(i, j));
        os << '\n';
    }
}

} // namespace

double eval_cost(const QuadCost& c, const Vector& z)
{
    if (c.P.rows() != z.size() || c.P.cols() != z.size() || c.q.size() != z.size())
        throw DimensionMismatch("eval_cost: dimension mismatch");
    if (c.F.rows() > 0)
        return (c.F * z + c.f).squaredNorm() + c.r0 - c.f.squaredNorm();
    return z.dot(c.P * z) + c.q.dot(z) + c.r0;
}

Vector cost_gradient(const QuadCost& c, const Vector& z)
{
    if (c.P.rows() != z.size() || c.q.size() != z.size())
        throw DimensionMismatch("cost_gradient: dimension mismatch");
    if (c.F.rows() > 0)
        return 2.0 * c.F.transpose() * (c.F * z + c.f);
    return (c.P + c.P.transpose()) * z + c.q;
}

ConvexProblem::ConvexProblem(Eigen::Index n)
    : n_z(n), E(0, n), f(0), G(0, n), h(0), lo(Vector::Constant(n, -kInf)), hi(Vector::Constant(n, kInf))
{
}

void ConvexProblem::add_equalities(const Matrix& rows, const Vector& rhs)
{
    if (rows.cols() != n_z || rows.rows() != rhs.size())
        throw DimensionMismatch("add_equalities: dimension mismatch");
    Matrix e(E.rows() + rows.rows(), n_z);
    e << E, rows;
    Vector fv(f.size() + rhs.size());
    fv << f, rhs;
    E = std::move(e);
    f = std::move(fv);
}

void ConvexProblem::add_inequalities(const Matrix& rows, const Vector& rhs)
{
    if (rows.cols() != n_z || rows.rows() != rhs.size())
        throw DimensionMismatch("add_inequalities: dimension mismatch");
    Matrix g(G.rows() + rows.rows(), n_z);
    g << G, rows;
    Vector hv(h.size() + rhs.size());
    hv << h, rhs;
    G = std::move(g);
    h = std::move(hv);
}

void ConvexProblem::validate() const
{
    if (costs.empty())
        throw DimensionMismatch("ConvexProblem: at least one epigraph cost is required");
    for (const auto& c : costs)
        if (c.P.rows() != n_z || c.P.cols() != n_z || c.q.size() != n_z)
            throw DimensionMismatch("ConvexProblem: cost dimension mismatch");
    for (const auto& c : costs)
        if (c.F.rows() > 0 && (c.F.cols() != n_z || c.f.size() != c.F.rows()))
            throw DimensionMismatch("ConvexProblem: cost factor dimension mismatch");
    if (E.cols() != n_z || E.rows() != f.size())
        throw DimensionMismatch("ConvexProblem: equality block dimension mismatch");
    if (G.cols() != n_z || G.rows() != h.size())
        throw DimensionMismatch("ConvexProblem: inequality block dimension mismatch");
    if (lo.size() != n_z || hi.size() != n_z)
        throw DimensionMismatch("ConvexProblem: bound dimension mismatch");
}

std::string to_string(SolveStatus s)
{
    switch (s) {
    case SolveStatus::Optimal:
        return "optimal";
    case SolveStatus::Infeasible:
        return "infeasible";
    case SolveStatus::MaxIterations:
        return "max_iterations";
    }
    return "unknown";
}

double KktResiduals::max() const
{
    return std::max({primal, dual, gap});
}

KktResiduals kkt_residuals(const ConvexProblem& p, const SolveResult& r)
{
    p.validate();
    const Vector& z = r.z;
    if (z.size() != p.n_z)
        throw DimensionMismatch("kkt_residuals: solution dimension mismatch");
    const Multipliers& mult = r.multipliers;
    const double t = r.t;
    const double t_scale = 1.0 + std::abs(t);

    KktResiduals out;

    // Primal feasibility.
    for (Eigen::Index i = 0; i < p.E.rows(); ++i) {
        const double res = std::abs(p.E.row(i).dot(z) - p.f(i));
        out.primal = std::max(out.primal, res / row_scale(p.E, i, z, p.f(i)));
    }
    for (Eigen::Index i = 0; i < p.G.rows(); ++i) {
        const double res = std::max(0.0, p.G.row(i).dot(z) - p.h(i));
        out.primal = std::max(out.primal, res / row_scale(p.G, i, z, p.h(i)));
    }
    for (Eigen::Index j = 0; j < p.n_z; ++j) {
        if (std::isfinite(p.hi(j)))
            out.primal = std::max(out.primal, std::max(0.0, z(j) - p.hi(j)) / (1.0 + std::abs(p.hi(j))));
        if (std::isfinite(p.lo(j)))
            out.primal = std::max(out.primal, std::max(0.0, p.lo(j) - z(j)) / (1.0 + std::abs(p.lo(j))));
    }
    std::vector<double> values(p.costs.size());
    for (std::size_t i = 0; i < p.costs.size(); ++i) {
        values[i] = eval_cost(p.costs[i], z);
        out.primal = std::max(out.primal, std::max(0.0, values[i] - t) / t_scale);
    }

    // Stationarity in z and t, and multiplier signs.
    Vector grad = Vector::Zero(p.n_z);
    double scale = 0.0;
    double mu_sum = 0.0;
    double sign_violation = 0.0;
    for (std::size_t i = 0; i < p.costs.size(); ++i) {
        const double mu = entry_or_zero(mult.costs, static_cast<Eigen::Index>(i));
        mu_sum += mu;
        sign_violation = std::max(sign_violation, -mu);
        const Vector term = mu * cost_gradient(p.costs[i], z);
        grad += term;
        // Relative to the parts of 2Pz + q, so cancellation inside one gradient is not mistaken for error.
        const double pz = 2.0 * std::abs(mu) * (p.costs[i].P * z).cwiseAbs().maxCoeff();
        const double q = p.costs[i].q.size() > 0 ? std::abs(mu) * p.costs[i].q.cwiseAbs().maxCoeff() : 0.0;
        scale = std::max({scale, pz, q});
    }
    if (p.E.rows() > 0 && mult.equalities.size() == p.E.rows()) {
        const Vector term = p.E.transpose() * mult.equalities;
        grad += term;
        scale = std::max(scale, term.cwiseAbs().maxCoeff());
    }
    if (p.G.rows() > 0 && mult.inequalities.size() == p.G.rows()) {
        const Vector term = p.G.transpose() * mult.inequalities;
        grad += term;
        scale = std::max(scale, term.cwiseAbs().maxCoeff());
        sign_violation = std::max(sign_violation, -mult.inequalities.minCoeff());
    }
    for (Eigen::Index j = 0; j < p.n_z; ++j) {
        const double up = entry_or_zero(mult.upper, j);
        const double low = entry_or_zero(mult.lower, j);
        grad(j) += up - low;
        scale = std::max({scale, std::abs(up), std::abs(low)});
        sign_violation = std::max({sign_violation, -up, -low});
        // A multiplier on an absent bound is a stationarity error in its own right.
        if (!std::isfinite(p.hi(j)))
            sign_violation = std::max(sign_violation, std::abs(up));
        if (!std::isfinite(p.lo(j)))
            sign_violation = std::max(sign_violation, std::abs(low));
    }
    const double grad_norm = p.n_z > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;
    out.dual = std::max({grad_norm / (1.0 + scale), std::abs(1.0 - mu_sum), sign_violation});

    // Complementarity.
    double comp = 0.0;
    for (std::size_t i = 0; i < p.costs.size(); ++i)
        comp = std::max(comp, std::abs(entry_or_zero(mult.costs, static_cast<Eigen::Index>(i)) * (t - values[i])));
    if (mult.inequalities.size() == p.G.rows())
        for (Eigen::Index i = 0; i < p.G.rows(); ++i)
            comp = std::max(comp, std::abs(mult.inequalities(i) * (p.h(i) - p.G.row(i).dot(z))));
    for (Eigen::Index j = 0; j < p.n_z; ++j) {
        if (std::isfinite(p.hi(j)))
            comp = std::max(comp, std::abs(entry_or_zero(mult.upper, j) * (p.hi(j) - z(j))));
        if (std::isfinite(p.lo(j)))
            comp = std::max(comp, std::abs(entry_or_zero(mult.lower, j) * (z(j) - p.lo(j))));
    }
    out.gap = comp / t_scale;
    return out;
}

void dump_problem(std::ostream& os, const ConvexProblem& p)
{
    os << "n_z " << p.n_z << '\n';
    os << "costs " << p.costs.size() << '\n';
    for (const auto& c : p.costs) {
        write_matrix(os, "P", c.P);
        write_matrix(os, "q", c.q.transpose());
        os << "r0 " << detail::format_double(c.r0) << '\n';
    }
    write_matrix(os, "E", p.E);
    write_matrix(os, "f", p.f.transpose());
    write_matrix(os, "G", p.G);
    write_matrix(os, "h", p.h.transpose());
    write_matrix(os, "lo", p.lo.transpose());
    write_matrix(os, "hi", p.hi.transpose());
}

} // namespace mdr
