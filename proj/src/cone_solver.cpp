#include "cone_ops.hpp"
#include "mdr/errors.hpp"
#include "mdr/qpcore.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

// Primal-dual path-following method on the lowered problem
//
//   minimize c'x  s.t.  A x = b,  G x + s = h,  s in K
//
// with x = (z, t), c = e_t and K = orthant x SOC_1 x ... x SOC_M. Cost i becomes the cone
//   ((t - q'z - r + 1)/2, (t - q'z - r - 1)/2, F z),  F'F = P,
// whose membership is exactly z'Pz + q'z + r <= t.

namespace mdr {

namespace {

using Index = Eigen::Index;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Cone (t - q'z - r + 1)/2 >= ||((t - q'z - r - 1)/2, F z_S + f)||.
struct SocBlock {
    std::vector<Index> support;
    Matrix F;
    Matrix FtF;
    Vector q;
    double r = 0.0;
    Vector f;
    Index offset = 0;
    Index dim() const { return F.rows() + 2; }
};

struct Lowered {
    Index n = 0;
    std::vector<Index> up_idx, lo_idx, fixed_idx;
    Matrix G_lin;
    Index orth = 0;
    Index total = 0;
    std::vector<SocBlock> socs;
    Vector h;
    Matrix A; // over x = (z, t)
    Vector b;
    Matrix Q1; // reduced equality multipliers -> original rows (p.E rows, then fixed variables)
    Index n_eq_orig = 0;

    Index nx() const { return n + 1; }
    Index n_lin() const { return G_lin.rows(); }
    double degree() const { return static_cast<double>(orth + static_cast<Index>(socs.size())); }
};

Vector gather(const Vector& v, const std::vector<Index>& idx)
{
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        out(static_cast<Index>(i)) = v(idx[i]);
    return out;
}

bool lower_problem(const ConvexProblem& p, Lowered& L)
{
    const Index n = p.n_z;
    L.n = n;
    std::vector<double> h_up, h_lo;
    for (Index j = 0; j < n; ++j) {
        const double lo = p.lo(j), hi = p.hi(j);
        if (std::isnan(lo) || std::isnan(hi) || lo > hi)
            return false;
        if (std::isfinite(lo) && std::isfinite(hi) && hi - lo <= 1e-12 * (1.0 + std::abs(lo) + std::abs(hi))) {
            L.fixed_idx.push_back(j);
            continue;
        }
        if (std::isfinite(hi)) {
            L.up_idx.push_back(j);
            h_up.push_back(hi);
        }
        if (std::isfinite(lo)) {
            L.lo_idx.push_back(j);
            h_lo.push_back(-lo);
        }
    }

    // Equalities, with pinned variables appended, reduced to independent rows.
    L.n_eq_orig = p.E.rows();
    const Index r_all = p.E.rows() + static_cast<Index>(L.fixed_idx.size());
    L.A = Matrix::Zero(0, n + 1);
    L.b = Vector(0);
    L.Q1 = Matrix::Zero(r_all, 0);
    if (r_all > 0) {
        Matrix E_all = Matrix::Zero(r_all, n);
        Vector f_all(r_all);
        E_all.topRows(p.E.rows()) = p.E;
        f_all.head(p.E.rows()) = p.f;
        for (std::size_t k = 0; k < L.fixed_idx.size(); ++k) {
            const Index row = p.E.rows() + static_cast<Index>(k);
            const Index j = L.fixed_idx[k];
            E_all(row, j) = 1.0;
            f_all(row) = 0.5 * (p.lo(j) + p.hi(j));
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(E_all);
        qr.setThreshold(1e-10);
        const Index rank = qr.rank();
        const Matrix Q = qr.householderQ();
        L.Q1 = Q.leftCols(rank);
        L.A = Matrix::Zero(rank, n + 1);
        L.A.leftCols(n) = L.Q1.transpose() * E_all;
        L.b = L.Q1.transpose() * f_all;
        const Vector outside = f_all - L.Q1 * L.b;
        if (outside.cwiseAbs().maxCoeff() > 1e-9 * (1.0 + f_all.cwiseAbs().maxCoeff()))
            return false;
    }

    L.G_lin = p.G;
    L.orth = static_cast<Index>(L.up_idx.size() + L.lo_idx.size()) + p.G.rows();

    Index offset = L.orth;
    for (const auto& c : p.costs) {
        SocBlock blk;
        if (c.F.rows() > 0) {
            for (Index j = 0; j < n; ++j)
                if ((c.F.col(j).array() != 0.0).any())
                    blk.support.push_back(j);
            blk.F.resize(c.F.rows(), static_cast<Index>(blk.support.size()));
            for (std::size_t a = 0; a < blk.support.size(); ++a)
                blk.F.col(static_cast<Index>(a)) = c.F.col(blk.support[a]);
            blk.f = c.f;
            blk.q = Vector::Zero(n);
            blk.r = c.r0 - c.f.squaredNorm();
        } else {
            for (Index j = 0; j < n; ++j)
                if ((c.P.row(j).array() != 0.0).any() || (c.P.col(j).array() != 0.0).any())
                    blk.support.push_back(j);
            Matrix Ps(static_cast<Index>(blk.support.size()), static_cast<Index>(blk.support.size()));
            for (std::size_t a = 0; a < blk.support.size(); ++a)
                for (std::size_t b = 0; b < blk.support.size(); ++b)
                    Ps(static_cast<Index>(a), static_cast<Index>(b)) = c.P(blk.support[a], blk.support[b]);
            blk.F = detail::psd_square_root(Ps);
            blk.f = Vector::Zero(blk.F.rows());
            blk.q = c.q;
            blk.r = c.r0;
        }
        blk.FtF = blk.F.transpose() * blk.F;
        blk.offset = offset;
        offset += blk.dim();
        L.socs.push_back(std::move(blk));
    }
    L.total = offset;

    L.h = Vector::Zero(L.total);
    Index r = 0;
    for (double v : h_up)
        L.h(r++) = v;
    for (double v : h_lo)
        L.h(r++) = v;
    L.h.segment(r, p.h.size()) = p.h;
    for (std::size_t i = 0; i < L.socs.size(); ++i) {
        const SocBlock& blk = L.socs[i];
        L.h(blk.offset) = 0.5 * (1.0 - blk.r);
        L.h(blk.offset + 1) = 0.5 * (-1.0 - blk.r);
        L.h.segment(blk.offset + 2, blk.f.size()) = blk.f;
    }
    return true;
}

Vector apply_G(const Lowered& L, const Vector& x)
{
    Vector out(L.total);
    Index r = 0;
    for (Index j : L.up_idx)
        out(r++) = x(j);
    for (Index j : L.lo_idx)
        out(r++) = -x(j);
    out.segment(r, L.n_lin()) = L.G_lin * x.head(L.n);
    const double t = x(L.n);
    for (const auto& s : L.socs) {
        const double a = 0.5 * (s.q.dot(x.head(L.n)) - t);
        out(s.offset) = a;
        out(s.offset + 1) = a;
        out.segment(s.offset + 2, s.F.rows()) = -(s.F * gather(x, s.support));
    }
    return out;
}

Vector apply_Gt(const Lowered& L, const Vector& v)
{
    Vector out = Vector::Zero(L.nx());
    Index r = 0;
    for (Index j : L.up_idx)
        out(j) += v(r++);
    for (Index j : L.lo_idx)
        out(j) -= v(r++);
    out.head(L.n) += L.G_lin.transpose() * v.segment(r, L.n_lin());
    for (const auto& s : L.socs) {
        const double a = 0.5 * (v(s.offset) + v(s.offset + 1));
        out.head(L.n) += a * s.q;
        out(L.n) -= a;
        const Vector back = s.F.transpose() * v.segment(s.offset + 2, s.F.rows());
        for (std::size_t k = 0; k < s.support.size(); ++k)
            out(s.support[k]) -= back(static_cast<Index>(k));
    }
    return out;
}

struct Scaling {
    Vector d; // orthant part of W
    std::vector<detail::SocScaling> soc;
};

Scaling identity_scaling(const Lowered& L)
{
    Scaling W;
    W.d = Vector::Ones(L.orth);
    for (const auto& s : L.socs) {
        detail::SocScaling w;
        w.eta = 1.0;
        w.wbar = Vector::Zero(s.dim());
        w.wbar(0) = 1.0;
        W.soc.push_back(std::move(w));
    }
    return W;
}

bool compute_scaling(const Lowered& L, const Vector& s, const Vector& z, Scaling& W, Vector& lambda)
{
    if ((s.head(L.orth).array() <= 0.0).any() || (z.head(L.orth).array() <= 0.0).any())
        return false;
    W.d = (s.head(L.orth).array() / z.head(L.orth).array()).sqrt();
    W.soc.resize(L.socs.size());
    lambda.resize(L.total);
    lambda.head(L.orth) = (s.head(L.orth).array() * z.head(L.orth).array()).sqrt();
    for (std::size_t i = 0; i < L.socs.size(); ++i) {
        const Index off = L.socs[i].offset, m = L.socs[i].dim();
        if (!detail::soc_nt_scaling(s.segment(off, m), z.segment(off, m), W.soc[i]))
            return false;
        lambda.segment(off, m) = detail::soc_apply(W.soc[i], z.segment(off, m), false);
    }
    return lambda.allFinite();
}

Vector scale(const Lowered& L, const Scaling& W, const Vector& v, bool inverse)
{
    Vector out(v.size());
    out.head(L.orth) = inverse ? Vector(v.head(L.orth).cwiseQuotient(W.d)) : Vector(v.head(L.orth).cwiseProduct(W.d));
    for (std::size_t i = 0; i < L.socs.size(); ++i) {
        const Index off = L.socs[i].offset, m = L.socs[i].dim();
        out.segment(off, m) = detail::soc_apply(W.soc[i], v.segment(off, m), inverse);
    }
    return out;
}

Vector jordan(const Lowered& L, const Vector& u, const Vector& v)
{
    Vector out(u.size());
    out.head(L.orth) = u.head(L.orth).cwiseProduct(v.head(L.orth));
    for (const auto& s : L.socs)
        out.segment(s.offset, s.dim()) = detail::soc_jordan(u.segment(s.offset, s.dim()), v.segment(s.offset, s.dim()));
    return out;
}

Vector jordan_solve(const Lowered& L, const Vector& lambda, const Vector& v)
{
    Vector out(v.size());
    out.head(L.orth) = v.head(L.orth).cwiseQuotient(lambda.head(L.orth));
    for (const auto& s : L.socs)
        out.segment(s.offset, s.dim()) =
            detail::soc_jordan_solve(lambda.segment(s.offset, s.dim()), v.segment(s.offset, s.dim()));
    return out;
}

Vector identity_element(const Lowered& L)
{
    Vector e = Vector::Zero(L.total);
    e.head(L.orth).setOnes();
    for (const auto& s : L.socs)
        e(s.offset) = 1.0;
    return e;
}

double max_step(const Lowered& L, const Vector& v, const Vector& dv)
{
    double amax = kInf;
    for (Index j = 0; j < L.orth; ++j)
        if (dv(j) < 0.0)
            amax = std::min(amax, -v(j) / dv(j));
    for (const auto& s : L.socs)
        amax = std::min(amax, detail::soc_max_step(v.segment(s.offset, s.dim()), dv.segment(s.offset, s.dim())));
    return amax;
}

// Smallest "eigenvalue" over blocks: v_j for the orthant, v0 - ||v1|| for each cone.
double min_eigen(const Lowered& L, const Vector& v)
{
    double m = kInf;
    if (L.orth > 0)
        m = v.head(L.orth).minCoeff();
    for (const auto& s : L.socs)
        m = std::min(m, v(s.offset) - v.segment(s.offset + 1, s.dim() - 1).norm());
    return m;
}

// Solves [0 A' G'; A 0 0; G 0 -W^2] (ux, uy, uz) = (bx, by, bz) through the reduced matrix
// G'W^{-2}G (+ A'A) and a Schur complement on the equalities, followed by iterative refinement.
class KktSolver {
public:
    bool factor(const Lowered& L, const Scaling& W)
    {
        const Index nx = L.nx();
        Matrix K = Matrix::Zero(nx, nx);
        Index r = 0;
        for (Index j : L.up_idx) {
            K(j, j) += 1.0 / (W.d(r) * W.d(r));
            ++r;
        }
        for (Index j : L.lo_idx) {
            K(j, j) += 1.0 / (W.d(r) * W.d(r));
            ++r;
        }
        if (L.n_lin() > 0) {
            const Vector inv_d2 = W.d.segment(r, L.n_lin()).array().square().inverse();
            K.topLeftCorner(L.n, L.n).noalias() += L.G_lin.transpose() * inv_d2.asDiagonal() * L.G_lin;
        }
        for (std::size_t i = 0; i < L.socs.size(); ++i) {
            const SocBlock& s = L.socs[i];
            const auto& w = W.soc[i];
            const double inv_eta2 = 1.0 / (w.eta * w.eta);
            // G_i' J wbar
            const double a01 = 0.5 * (w.wbar(0) - w.wbar(1));
            Vector a = Vector::Zero(nx);
            a.head(L.n) = a01 * s.q;
            a(L.n) = -a01;
            const Vector back = s.F.transpose() * w.wbar.tail(s.F.rows());
            for (std::size_t k = 0; k < s.support.size(); ++k)
                a(s.support[k]) += back(static_cast<Index>(k));
            K.noalias() += (2.0 * inv_eta2) * a * a.transpose();
            for (std::size_t u = 0; u < s.support.size(); ++u)
                for (std::size_t v = 0; v < s.support.size(); ++v)
                    K(s.support[u], s.support[v]) += inv_eta2 * s.FtF(static_cast<Index>(u), static_cast<Index>(v));
        }
        if (L.A.rows() > 0)
            K.noalias() += L.A.transpose() * L.A;

        const double diag = std::max(1.0, K.diagonal().cwiseAbs().maxCoeff());
        double reg = 1e-13 * diag;
        for (int attempt = 0; attempt < 6; ++attempt) {
            Matrix M = K;
            M.diagonal().array() += reg;
            chol_.compute(M);
            if (chol_.info() == Eigen::Success && chol_.matrixLLT().diagonal().allFinite())
                break;
            reg *= 100.0;
            if (attempt == 5)
                return false;
        }
        if (L.A.rows() > 0) {
            MinvAt_ = chol_.solve(L.A.transpose());
            Matrix S = L.A * MinvAt_;
            S.diagonal().array() += 1e-14 * std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
            schur_.compute(S);
            if (schur_.info() != Eigen::Success)
                return false;
        }
        return true;
    }

    void solve(const Lowered& L, const Scaling& W, const Vector& bx, const Vector& by, const Vector& bz, Vector& ux,
               Vector& uy, Vector& uz) const
    {
        reduced(L, W, bx, by, bz, ux, uy, uz);
        const double bnorm = 1.0 + std::max({bx.cwiseAbs().maxCoeff(), by.size() ? by.cwiseAbs().maxCoeff() : 0.0,
                                             bz.size() ? bz.cwiseAbs().maxCoeff() : 0.0});
        for (int it = 0; it < 3; ++it) {
            const Vector rx = bx - (L.A.transpose() * uy + apply_Gt(L, uz));
            const Vector ry = by - L.A * ux;
            const Vector rz = bz - (apply_G(L, ux) - scale(L, W, scale(L, W, uz, false), false));
            const double res = std::max({rx.cwiseAbs().maxCoeff(), ry.size() ? ry.cwiseAbs().maxCoeff() : 0.0,
                                         rz.size() ? rz.cwiseAbs().maxCoeff() : 0.0});
            if (res <= 1e-14 * bnorm)
                break;
            Vector cx, cy, cz;
            reduced(L, W, rx, ry, rz, cx, cy, cz);
            ux += cx;
            uy += cy;
            uz += cz;
        }
    }

private:
    void reduced(const Lowered& L, const Scaling& W, const Vector& bx, const Vector& by, const Vector& bz, Vector& ux,
                 Vector& uy, Vector& uz) const
    {
        Vector rhs = bx + apply_Gt(L, scale(L, W, scale(L, W, bz, true), true));
        if (L.A.rows() > 0) {
            rhs += L.A.transpose() * by;
            uy = schur_.solve(MinvAt_.transpose() * rhs - by);
            ux = chol_.solve(rhs - L.A.transpose() * uy);
        } else {
            uy = Vector(0);
            ux = chol_.solve(rhs);
        }
        uz = scale(L, W, scale(L, W, apply_G(L, ux) - bz, true), true);
    }

    Eigen::LLT<Matrix> chol_;
    Eigen::LLT<Matrix> schur_;
    Matrix MinvAt_;
};

struct Iterate {
    Vector x, y, s, z;
};

SolveResult to_result(const ConvexProblem& p, const Lowered& L, const Iterate& it)
{
    SolveResult r;
    r.z = it.x.head(L.n);
    r.t = it.x(L.n);
    Multipliers& m = r.multipliers;
    m.costs.resize(static_cast<Index>(L.socs.size()));
    for (std::size_t i = 0; i < L.socs.size(); ++i)
        m.costs(static_cast<Index>(i)) = 0.5 * (it.z(L.socs[i].offset) + it.z(L.socs[i].offset + 1));
    m.upper = Vector::Zero(L.n);
    m.lower = Vector::Zero(L.n);
    Index row = 0;
    for (Index j : L.up_idx)
        m.upper(j) = it.z(row++);
    for (Index j : L.lo_idx)
        m.lower(j) = it.z(row++);
    m.inequalities = it.z.segment(row, L.n_lin());
    const Vector nu = L.Q1 * it.y;
    m.equalities = nu.head(L.n_eq_orig);
    for (std::size_t k = 0; k < L.fixed_idx.size(); ++k) {
        const double v = nu(L.n_eq_orig + static_cast<Index>(k));
        const Index j = L.fixed_idx[k];
        if (v >= 0.0)
            m.upper(j) = v;
        else
            m.lower(j) = -v;
    }
    (void)p;
    return r;
}

void stamp(SolveResult& r, const KktResiduals& k)
{
    r.kkt_primal = k.primal;
    r.kkt_dual = k.dual;
    r.kkt_gap = k.gap;
}

double max_cost(const ConvexProblem& p, const Vector& z)
{
    double t = -kInf;
    for (const auto& c : p.costs)
        t = std::max(t, eval_cost(c, z));
    return t;
}

// Least-squares multipliers for the constraints active at r.z, with the cost weights summing to one.
// Near the optimum the cone duals carry more rounding error than z itself.
SolveResult refine_multipliers(const ConvexProblem& p, const SolveResult& r)
{
    const Index n = p.n_z;
    const Vector& z = r.z;
    auto near = [](double slack, double scale) { return slack <= 1e-6 * (1.0 + std::abs(scale)); };

    std::vector<Vector> cols;
    std::vector<Index> cost_idx, g_idx, up_idx, lo_idx;
    for (std::size_t i = 0; i < p.costs.size(); ++i)
        if (near(r.t - eval_cost(p.costs[i], z), r.t)) {
            cost_idx.push_back(static_cast<Index>(i));
            cols.push_back(cost_gradient(p.costs[i], z));
        }
    if (cost_idx.empty())
        return r;
    for (Index i = 0; i < p.E.rows(); ++i)
        cols.push_back(p.E.row(i).transpose());
    for (Index i = 0; i < p.G.rows(); ++i)
        if (near(p.h(i) - p.G.row(i).dot(z), p.h(i))) {
            g_idx.push_back(i);
            cols.push_back(p.G.row(i).transpose());
        }
    for (Index j = 0; j < n; ++j) {
        if (std::isfinite(p.hi(j)) && near(p.hi(j) - z(j), p.hi(j))) {
            up_idx.push_back(j);
            cols.push_back(Vector::Unit(n, j));
        }
        if (std::isfinite(p.lo(j)) && near(z(j) - p.lo(j), p.lo(j))) {
            lo_idx.push_back(j);
            cols.push_back(-Vector::Unit(n, j));
        }
    }
    double weight = 1.0;
    for (const Vector& c : cols)
        weight = std::max(weight, c.norm());
    Matrix K = Matrix::Zero(n + 1, static_cast<Index>(cols.size()));
    for (std::size_t a = 0; a < cols.size(); ++a)
        K.col(static_cast<Index>(a)).head(n) = cols[a];
    for (std::size_t a = 0; a < cost_idx.size(); ++a)
        K(n, static_cast<Index>(a)) = weight;
    Vector rhs = Vector::Zero(n + 1);
    rhs(n) = weight;
    const Vector sol = K.completeOrthogonalDecomposition().solve(rhs);

    SolveResult out = r;
    Multipliers& m = out.multipliers;
    m.costs = Vector::Zero(static_cast<Index>(p.costs.size()));
    m.equalities = Vector::Zero(p.E.rows());
    m.inequalities = Vector::Zero(p.G.rows());
    m.upper = Vector::Zero(n);
    m.lower = Vector::Zero(n);
    Index a = 0;
    for (Index i : cost_idx)
        m.costs(i) = std::max(0.0, sol(a++));
    for (Index i = 0; i < p.E.rows(); ++i)
        m.equalities(i) = sol(a++);
    for (Index i : g_idx)
        m.inequalities(i) = std::max(0.0, sol(a++));
    for (Index j : up_idx)
        m.upper(j) = std::max(0.0, sol(a++));
    for (Index j : lo_idx)
        m.lower(j) = std::max(0.0, sol(a++));
    return out;
}

SolveResult run_ipm(const ConvexProblem& p, const Lowered& L, const SolveOptions& opts)
{
    const Index nx = L.nx();
    Vector c = Vector::Zero(nx);
    c(L.n) = 1.0;
    const Vector e = identity_element(L);

    KktSolver kkt;
    Iterate it;
    {
        const Scaling W0 = identity_scaling(L);
        SolveResult fail;
        fail.z = Vector::Zero(L.n);
        fail.t = max_cost(p, fail.z);
        fail.status = SolveStatus::MaxIterations;
        if (!kkt.factor(L, W0))
            return fail;
        Vector uz;
        kkt.solve(L, W0, -c, L.b, L.h, it.x, it.y, uz);
        it.s = -uz;
        it.z = uz;
        const double ts = -min_eigen(L, it.s);
        const double tz = -min_eigen(L, it.z);
        if (ts >= -1e-8 * std::max(1.0, it.s.norm()))
            it.s += (1.0 + ts) * e;
        if (tz >= -1e-8 * std::max(1.0, it.z.norm()))
            it.z += (1.0 + tz) * e;
    }

    SolveResult best;
    double best_score = kInf;
    int stalls = 0;
    int extra = 0;
    // Optimal result, with t replaced by the attained maximum when that keeps the residuals in tolerance.
    auto finish = [&](SolveResult r) {
        r.status = SolveStatus::Optimal;
        SolveResult polished = r;
        polished.t = max_cost(p, polished.z);
        const KktResiduals kp = kkt_residuals(p, polished);
        if (kp.max() <= opts.tol) {
            stamp(polished, kp);
            return polished;
        }
        return r;
    };
    Scaling W;
    Vector lambda;
    for (int iter = 0; iter <= opts.max_iterations; ++iter) {
        SolveResult cand = to_result(p, L, it);
        cand.iterations = iter;
        KktResiduals k = kkt_residuals(p, cand);
        if (k.max() > opts.tol && k.primal <= opts.tol && k.gap <= opts.tol) {
            SolveResult refined = refine_multipliers(p, cand);
            const KktResiduals kr = kkt_residuals(p, refined);
            if (kr.max() < k.max()) {
                cand = std::move(refined);
                k = kr;
            }
        }
        stamp(cand, k);
        if (k.max() < best_score) {
            best_score = k.max();
            best = cand;
        }
        // Certified at tol, but keep going for a few steps towards tol / 10 so that other residual
        // conventions also see a margin.
        if (k.max() <= opts.tol && (k.max() <= 0.1 * opts.tol || ++extra > 4))
            return finish(best);
        if (iter == opts.max_iterations)
            break;

        const Vector rx = c + L.A.transpose() * it.y + apply_Gt(L, it.z);
        const Vector ry = L.A * it.x - L.b;
        const Vector rz = apply_G(L, it.x) + it.s - L.h;
        const double gap = it.s.dot(it.z);
        const double mu = gap / L.degree();

        if (!compute_scaling(L, it.s, it.z, W, lambda))
            break;
        if (!kkt.factor(L, W))
            break;

        auto newton = [&](const Vector& d, Vector& dx, Vector& dy, Vector& dz, Vector& ds) {
            const Vector bz = -rz - scale(L, W, d, false);
            kkt.solve(L, W, -rx, -ry, bz, dx, dy, dz);
            ds = scale(L, W, d - scale(L, W, dz, false), false);
        };

        Vector dx, dy, dz, ds;
        newton(-lambda, dx, dy, dz, ds);
        const double a_aff = std::min(1.0, std::min(max_step(L, it.s, ds), max_step(L, it.z, dz)));
        const double gap_aff = (it.s + a_aff * ds).dot(it.z + a_aff * dz);
        const double ratio = std::clamp(gap_aff / gap, 0.0, 1.0);
        const double sigma = ratio * ratio * ratio;

        const Vector rhs = -jordan(L, lambda, lambda) -
                           jordan(L, scale(L, W, ds, true), scale(L, W, dz, false)) + (sigma * mu) * e;
        newton(jordan_solve(L, lambda, rhs), dx, dy, dz, ds);

        const double a_max = std::min(max_step(L, it.s, ds), max_step(L, it.z, dz));
        const double alpha = std::min(1.0, 0.99 * a_max);
        if (!(alpha > 1e-10) || !dx.allFinite() || !dz.allFinite()) {
            if (++stalls >= 3)
                break;
            continue;
        }
        stalls = 0;
        it.x += alpha * dx;
        it.y += alpha * dy;
        it.s += alpha * ds;
        it.z += alpha * dz;
    }
    if (best_score <= opts.tol)
        return finish(best);
    best.status = SolveStatus::MaxIterations;
    return best;
}

// Feasibility of the linear constraints alone: minimise the largest normalised violation.
// The program is feasible iff that optimum is <= 0.
bool linear_rows_infeasible(const ConvexProblem& p, const SolveOptions& opts)
{
    const Index n = p.n_z;
    ConvexProblem f(n);
    auto add_row = [&](const Vector& row, double rhs) {
        const double s = 1.0 + std::max(row.cwiseAbs().maxCoeff(), std::abs(rhs));
        QuadCost c;
        c.P = Matrix::Zero(n, n);
        c.q = row / s;
        c.r0 = -rhs / s;
        f.costs.push_back(std::move(c));
    };
    for (Index i = 0; i < p.E.rows(); ++i) {
        add_row(p.E.row(i).transpose(), p.f(i));
        add_row(-p.E.row(i).transpose(), -p.f(i));
    }
    for (Index i = 0; i < p.G.rows(); ++i)
        add_row(p.G.row(i).transpose(), p.h(i));
    for (Index j = 0; j < n; ++j) {
        Vector ej = Vector::Zero(n);
        ej(j) = 1.0;
        if (std::isfinite(p.hi(j)))
            add_row(ej, p.hi(j));
        if (std::isfinite(p.lo(j)))
            add_row(-ej, -p.lo(j));
    }
    if (f.costs.empty())
        return false;
    Lowered L;
    if (!lower_problem(f, L))
        return true;
    const SolveResult r = run_ipm(f, L, opts);
    return r.status == SolveStatus::Optimal && r.t > 10.0 * opts.tol;
}

} // namespace

SolveResult solve(const ConvexProblem& p, const SolveOptions& opts)
{
    p.validate();
    Lowered L;
    if (!lower_problem(p, L)) {
        SolveResult r;
        r.z = Vector::Zero(p.n_z);
        r.t = max_cost(p, r.z);
        r.status = SolveStatus::Infeasible;
        stamp(r, kkt_residuals(p, r));
        return r;
    }
    SolveResult r = run_ipm(p, L, opts);
    if (r.status != SolveStatus::Optimal && linear_rows_infeasible(p, opts))
        r.status = SolveStatus::Infeasible;
    return r;
}

} // namespace mdr
