#include "cone_ops.hpp"

#include "mdr/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <vector>

namespace mdr::detail {

double soc_det(const Eigen::Ref<const Vector>& v)
{
    const double n1 = v.tail(v.size() - 1).norm();
    return (v(0) - n1) * (v(0) + n1);
}

bool soc_nt_scaling(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& z, SocScaling& out)
{
    const double sdet = soc_det(s);
    const double zdet = soc_det(z);
    if (!(sdet > 0.0) || !(zdet > 0.0) || !(s(0) > 0.0) || !(z(0) > 0.0))
        return false;
    const Vector sn = s / std::sqrt(sdet);
    const Vector zn = z / std::sqrt(zdet);
    const double gamma = std::sqrt(0.5 * (1.0 + sn.dot(zn)));
    out.wbar.resize(s.size());
    out.wbar(0) = (sn(0) + zn(0)) / (2.0 * gamma);
    out.wbar.tail(s.size() - 1) = (sn.tail(s.size() - 1) - zn.tail(s.size() - 1)) / (2.0 * gamma);
    out.eta = std::pow(sdet / zdet, 0.25);
    return std::isfinite(out.eta) && out.wbar.allFinite();
}

Vector soc_apply(const SocScaling& w, const Eigen::Ref<const Vector>& u, bool inverse)
{
    const Eigen::Index m = u.size();
    const double w0 = w.wbar(0);
    const auto w1 = w.wbar.tail(m - 1);
    const double u0 = u(0);
    const auto u1 = u.tail(m - 1);
    const double w1u1 = w1.dot(u1);
    Vector out(m);
    if (!inverse) {
        out(0) = w.eta * (w0 * u0 + w1u1);
        out.tail(m - 1) = w.eta * (u1 + (u0 + w1u1 / (1.0 + w0)) * w1);
    } else {
        out(0) = (w0 * u0 - w1u1) / w.eta;
        out.tail(m - 1) = (u1 + (-u0 + w1u1 / (1.0 + w0)) * w1) / w.eta;
    }
    return out;
}

double soc_max_step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y)
{
    const Eigen::Index m = x.size();
    const double det = soc_det(x);
    if (!(det > 0.0))
        return 0.0;
    const double nx = std::sqrt(det);
    const Vector xb = x / nx;
    const double xjy = xb(0) * y(0) - xb.tail(m - 1).dot(y.tail(m - 1));
    const double rho0 = xjy / nx;
    const Vector rho1 = (y.tail(m - 1) - ((xjy + y(0)) / (xb(0) + 1.0)) * xb.tail(m - 1)) / nx;
    const double r = rho1.norm() - rho0;
    return r > 0.0 ? 1.0 / r : std::numeric_limits<double>::infinity();
}

Vector soc_jordan(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v)
{
    const Eigen::Index m = u.size();
    Vector out(m);
    out(0) = u.dot(v);
    out.tail(m - 1) = u(0) * v.tail(m - 1) + v(0) * u.tail(m - 1);
    return out;
}

Vector soc_jordan_solve(const Eigen::Ref<const Vector>& lambda, const Eigen::Ref<const Vector>& v)
{
    const Eigen::Index m = lambda.size();
    const double det = soc_det(lambda);
    Vector out(m);
    out(0) = (lambda(0) * v(0) - lambda.tail(m - 1).dot(v.tail(m - 1))) / det;
    out.tail(m - 1) = (v.tail(m - 1) - out(0) * lambda.tail(m - 1)) / lambda(0);
    return out;
}

Matrix psd_square_root(const Matrix& P)
{
    const Matrix sym = 0.5 * (P + P.transpose());
    if (sym.size() == 0)
        return Matrix(0, sym.cols());
    const double scale = sym.cwiseAbs().maxCoeff();
    if (scale == 0.0)
        return Matrix(0, sym.cols());

    Eigen::LLT<Matrix> llt(sym);
    if (llt.info() == Eigen::Success) {
        Matrix F = llt.matrixU();
        if ((F.transpose() * F - sym).cwiseAbs().maxCoeff() <= 1e-12 * scale && F.allFinite())
            return F;
    }

    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Vector& ev = eig.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    if (ev.minCoeff() < -1e-8 * top)
        throw Error("cost matrix is not positive semidefinite (eigenvalue " + std::to_string(ev.minCoeff()) + ")");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > 1e-13 * top)
            keep.push_back(i);
    Matrix F(static_cast<Eigen::Index>(keep.size()), sym.cols());
    for (std::size_t r = 0; r < keep.size(); ++r)
        F.row(static_cast<Eigen::Index>(r)) =
            std::sqrt(ev(keep[r])) * eig.eigenvectors().col(keep[r]).transpose();
    return F;
}

} // namespace mdr::detail
