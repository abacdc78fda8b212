#include "mdr/ambiguity.hpp"

#include "mdr/errors.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace mdr {

namespace {

// Integral of |F^-1(t) - G^-1(t)| over t in [0, 1] for two sorted uniform samples.
double w1_sorted(const std::vector<double>& a, const std::vector<double>& b)
{
    const std::size_t n = a.size(), m = b.size();
    if (n == m) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += std::abs(a[i] - b[i]);
        return s / static_cast<double>(n);
    }
    // Walk the merged quantile breakpoints i/n and j/m.
    double total = 0.0, t = 0.0;
    std::size_t i = 0, j = 0;
    while (i < n && j < m) {
        const double next_a = static_cast<double>(i + 1) / static_cast<double>(n);
        const double next_b = static_cast<double>(j + 1) / static_cast<double>(m);
        const double next = std::min(next_a, next_b);
        total += (next - t) * std::abs(a[i] - b[j]);
        t = next;
        if (next_a <= next)
            ++i;
        if (next_b <= next)
            ++j;
    }
    return total;
}

} // namespace

EmpiricalDist::EmpiricalDist(Matrix atoms) : atoms_(std::move(atoms))
{
    if (atoms_.rows() < 1)
        throw DimensionMismatch("EmpiricalDist: at least one atom is required");
}

EmpiricalDist EmpiricalDist::point(const Vector& v)
{
    return EmpiricalDist(Matrix(v.transpose()));
}

void AmbiguitySpec::validate() const
{
    if (!(radius >= 0.0))
        throw Error("AmbiguitySpec: radius must be non-negative");
    if (center.size() < 1)
        throw DimensionMismatch("AmbiguitySpec: empty center distribution");
}

Residuals estimate_residuals(const HybridPartition& part, const Signal& u, const Signal& y, const Signal& x_known)
{
    const Eigen::Index K = x_known.length() - 1;
    if (K < 1)
        throw DimensionMismatch("estimate_residuals: need at least two known-state samples");
    if (u.length() < K || y.length() < K)
        throw DimensionMismatch("estimate_residuals: input/output shorter than the state record");
    if (x_known.dim() != part.n_k || u.dim() != part.inputs() || y.dim() != part.p_k + part.p_u)
        throw DimensionMismatch("estimate_residuals: channel counts do not match the partition");

    const Matrix Ay = output_coupling(part);
    const Matrix ku_pinv = Eigen::CompleteOrthogonalDecomposition<Matrix>(part.A_ku).pseudoInverse();
    Matrix w(K, part.n_k), v(K, part.p_k + part.p_u);
    for (Eigen::Index k = 0; k < K; ++k) {
        const Vector x = x_known.at(k);
        const Vector xn = x_known.at(k + 1);
        const Vector uk = u.at(k);
        const Vector yk = y.at(k);
        const Vector yu = yk.tail(part.p_u);
        const Vector drift = part.A_k * x + part.B_k * uk;
        w.row(k) = (xn - drift - Ay * (yu - part.C_uk * x - part.D_u * uk)).transpose();
        const Vector xu = ku_pinv * (xn - drift);
        v.row(k).head(part.p_k) = (yk.head(part.p_k) - part.C_k * x - part.D_k * uk).transpose();
        v.row(k).tail(part.p_u) = (yu - part.C_uk * x - part.C_u * xu - part.D_u * uk).transpose();
    }
    return {EmpiricalDist(std::move(w)), EmpiricalDist(std::move(v))};
}

double w1_distance(const EmpiricalDist& p, const EmpiricalDist& q)
{
    if (p.dim() != q.dim())
        throw DimensionMismatch("w1_distance: dimension mismatch");
    double total = 0.0;
    for (Eigen::Index c = 0; c < p.dim(); ++c) {
        std::vector<double> a(p.atoms().col(c).data(), p.atoms().col(c).data() + p.size());
        std::vector<double> b(q.atoms().col(c).data(), q.atoms().col(c).data() + q.size());
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        total += w1_sorted(a, b);
    }
    return total;
}

EmpiricalDist sample_dist_in_ball(const AmbiguitySpec& spec, std::uint64_t seed)
{
    spec.validate();
    const Matrix& c = spec.center.atoms();
    if (spec.radius == 0.0)
        return spec.center;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix shift(c.rows(), c.cols());
    for (Eigen::Index s = 0; s < c.rows(); ++s)
        for (Eigen::Index d = 0; d < c.cols(); ++d)
            shift(s, d) = nd(rng);
    const double budget = shift.cwiseAbs().sum() / static_cast<double>(c.rows());
    if (!(budget > 0.0))
        return spec.center;
    shift *= spec.radius / budget;
    return EmpiricalDist(c + shift);
}

std::vector<Scenario> draw_scenarios(const ThetaBox& box, const AmbiguitySpec& spec_w, const AmbiguitySpec& spec_v,
                                     int M, Eigen::Index N, std::uint64_t seed, const MsdParams& nominal)
{
    if (M < 1 || N < 1)
        throw Error("draw_scenarios: need M >= 1 and N >= 1");
    std::vector<Scenario> out;
    out.reserve(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) {
        std::mt19937_64 rng(seed + static_cast<std::uint64_t>(i));
        Scenario sc;
        sc.theta = sample_theta(box, rng, nominal);
        const EmpiricalDist pw = sample_dist_in_ball(spec_w, rng());
        const EmpiricalDist pv = sample_dist_in_ball(spec_v, rng());
        auto path = [&](const EmpiricalDist& d) {
            std::uniform_int_distribution<Eigen::Index> pick(0, d.size() - 1);
            Matrix m(N, d.dim());
            for (Eigen::Index k = 0; k < N; ++k)
                m.row(k) = d.atoms().row(pick(rng));
            return Signal(std::move(m));
        };
        sc.w_path = path(pw);
        sc.v_path = path(pv);
        sc.w_dist = pw;
        sc.v_dist = pv;
        out.push_back(std::move(sc));
    }
    return out;
}

EmpiricalDist update_dist(const EmpiricalDist& d, const Matrix& new_samples, Eigen::Index window)
{
    if (new_samples.rows() > 0 && new_samples.cols() != d.dim())
        throw DimensionMismatch("update_dist: sample dimension mismatch");
    if (window < 1)
        throw Error("update_dist: window must be positive");
    Matrix all(d.size() + new_samples.rows(), d.dim());
    all << d.atoms(), new_samples;
    const Eigen::Index keep = std::min(window, all.rows());
    return EmpiricalDist(all.bottomRows(keep));
}

void write_dist_csv(std::ostream& os, const EmpiricalDist& d)
{
    os << "atom";
    for (Eigen::Index c = 0; c < d.dim(); ++c)
        os << ",ch" << c;
    os << '\n';
    for (Eigen::Index s = 0; s < d.size(); ++s) {
        os << s;
        for (Eigen::Index c = 0; c < d.dim(); ++c)
            os << ',' << detail::format_double(d.atoms()(s, c));
        os << '\n';
    }
}

void write_dist_csv(const std::string& path, const EmpiricalDist& d)
{
    std::ofstream os(path);
    if (!os)
        throw Error("cannot open " + path + " for writing");
    write_dist_csv(os, d);
}

EmpiricalDist read_dist_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw Error("distribution CSV: missing header");
    const auto header = detail::split(line, ',');
    if (header.empty() || header[0] != "atom")
        throw Error("distribution CSV: header must start with 'atom'");
    const auto dim = static_cast<Eigen::Index>(header.size() - 1);
    std::vector<double> values;
    Eigen::Index rows = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r")
            continue;
        const auto fields = detail::split(line, ',');
        if (static_cast<Eigen::Index>(fields.size()) != dim + 1)
            throw DimensionMismatch("distribution CSV: row " + std::to_string(rows) + " has wrong field count");
        for (Eigen::Index c = 0; c < dim; ++c) {
            double v = 0.0;
            if (!detail::parse_double(fields[static_cast<std::size_t>(c + 1)], v))
                throw Error("distribution CSV: bad number in row " + std::to_string(rows));
            values.push_back(v);
        }
        ++rows;
    }
    Matrix m(rows, dim);
    for (Eigen::Index s = 0; s < rows; ++s)
        for (Eigen::Index c = 0; c < dim; ++c)
            m(s, c) = values[static_cast<std::size_t>(s * dim + c)];
    return EmpiricalDist(std::move(m));
}

} // namespace mdr
