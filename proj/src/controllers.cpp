#include "mdr/controllers.hpp"

#include "mdr/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace mdr {

namespace {

using Eigen::Index;

bool positive_definite(const Matrix& M, Index n)
{
    if (M.rows() != n || M.cols() != n)
        return false;
    if (!M.isApprox(M.transpose(), 1e-12) && (M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        return false;
    Eigen::LLT<Matrix> llt(M);
    return llt.info() == Eigen::Success;
}

// Upper factor W with e'Me = ||W e||^2.
Matrix weight_factor(const Matrix& M)
{
    Eigen::LLT<Matrix> llt(M);
    return llt.matrixU();
}

// Residual blocks of one least-squares cost ||A zeta + b||^2 in local coordinates.
class LsqRows {
public:
    explicit LsqRows(Index n) : n_(n) {}

    void add(Matrix a, Vector b)
    {
        rows_ += a.rows();
        A_.push_back(std::move(a));
        b_.push_back(std::move(b));
    }

    // z'Pz + q'z + r0 in global coordinates; local column l maps to map[l].
    QuadCost to_cost(const std::vector<Index>& map, Index n_global, double extra) const
    {
        Matrix A(rows_, n_);
        Vector b(rows_);
        Index r = 0;
        for (std::size_t i = 0; i < A_.size(); ++i) {
            A.middleRows(r, A_[i].rows()) = A_[i];
            b.segment(r, b_[i].size()) = b_[i];
            r += A_[i].rows();
        }
        Matrix P_loc = A.transpose() * A;
        P_loc = 0.5 * (P_loc + P_loc.transpose()).eval();
        const Vector q_loc = 2.0 * A.transpose() * b;
        QuadCost c;
        c.P = Matrix::Zero(n_global, n_global);
        c.q = Vector::Zero(n_global);
        for (Index i = 0; i < n_; ++i) {
            c.q(map[i]) = q_loc(i);
            for (Index j = 0; j < n_; ++j)
                c.P(map[i], map[j]) = P_loc(i, j);
        }
        c.r0 = b.squaredNorm() + extra;

        // Compressed factor R, Q1'b of A = Q1 R; the discarded part of b stays inside r0 - f'f.
        const Index k = std::min(rows_, n_);
        const Eigen::HouseholderQR<Matrix> qr(A);
        const Matrix R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
        const Vector qb = qr.householderQ().transpose() * b;
        c.F = Matrix::Zero(k, n_global);
        for (Index i = 0; i < n_; ++i)
            c.F.col(map[i]) = R.col(i);
        c.f = qb.head(k);
        return c;
    }

private:
    Index n_;
    Index rows_ = 0;
    std::vector<Matrix> A_;
    std::vector<Vector> b_;
};

// Affine stacked output prediction y = L zeta + c, with N blocks of p.
struct Prediction {
    Matrix L;
    Vector c;
};

// Selects u_j from the local decision whose first m*N entries are the inputs.
Matrix input_selector(Index m, Index j, Index n_local)
{
    Matrix S = Matrix::Zero(m, n_local);
    S.middleCols(j * m, m).setIdentity();
    return S;
}

void add_tracking_rows(LsqRows& rows, const Prediction& y, const Signal& r, const ControllerConfig& cfg, Index m,
                       Index p, Index n_local)
{
    const Matrix Wq = weight_factor(cfg.Q);
    const Matrix Wr = weight_factor(cfg.R);
    for (Index j = 0; j < cfg.N; ++j) {
        rows.add(Wq * y.L.middleRows(j * p, p), Wq * (y.c.segment(j * p, p) - r.at(j)));
        rows.add(Wr * input_selector(m, j, n_local), Vector::Zero(m));
    }
}

// Output bounds as G rows; rows the decision cannot influence are skipped.
void add_output_bounds(ConvexProblem& prob, const ControllerConfig& cfg, const Prediction& y, Index p,
                       const std::vector<Index>& map)
{
    if (cfg.y_bounds.empty())
        return;
    for (Index j = 0; j < cfg.N; ++j)
        for (Index ch = 0; ch < p; ++ch) {
            const Index row = j * p + ch;
            const Interval& b = cfg.y_bounds[static_cast<std::size_t>(ch)];
            if (y.L.row(row).cwiseAbs().maxCoeff() == 0.0)
                continue;
            Matrix g = Matrix::Zero(1, prob.n_z);
            for (Index l = 0; l < y.L.cols(); ++l)
                g(0, map[l]) = y.L(row, l);
            if (std::isfinite(b.hi))
                prob.add_inequalities(g, Vector::Constant(1, b.hi - y.c(row)));
            if (std::isfinite(b.lo))
                prob.add_inequalities(-g, Vector::Constant(1, y.c(row) - b.lo));
        }
}

Matrix to_global(const Matrix& L, const std::vector<Index>& map, Index n)
{
    Matrix out = Matrix::Zero(L.rows(), n);
    for (Index l = 0; l < L.cols(); ++l)
        out.col(map[l]) = L.col(l);
    return out;
}

void apply_input_bounds(ConvexProblem& prob, const ControllerConfig& cfg, Index m)
{
    if (cfg.u_bounds.empty())
        return;
    for (Index j = 0; j < cfg.N; ++j)
        for (Index i = 0; i < m; ++i) {
            prob.lo(j * m + i) = cfg.u_bounds[static_cast<std::size_t>(i)].lo;
            prob.hi(j * m + i) = cfg.u_bounds[static_cast<std::size_t>(i)].hi;
        }
}

Vector reference_at(const Signal& r, Index k)
{
    return r.at(std::min(k, r.length() - 1));
}

void check_reference(const Signal& r, Index N, Index p)
{
    if (r.length() < N || r.dim() != p)
        throw DimensionMismatch("reference must hold at least N samples of every output");
}

// Known-block rollout
//   x+ = (A_k - A_y C_uk) x + A_y y_u + (B_k - A_y D_u) u + w
// driven by an affine unknown-output prediction y_u = YuL zeta + Yuc.
struct KnownRollout {
    Prediction y;    ///< all outputs (known channels first), noise-free
    Matrix y_W;      ///< sensitivity of the stacked outputs to the stacked w path
    Matrix xN_L;     ///< C_k x_N = xN_L zeta + xN_c
    Vector xN_c;
};

KnownRollout roll_known(const MdrModel::Blocks& b, const Vector& x0, const Matrix& YuL, const Vector& Yuc,
                        const Matrix* w_path, const Vector* w_mean, Index m, Index N, Index n_local,
                        bool track_w)
{
    const Index n_k = b.A_k.rows();
    const Index p_k = b.C_k.rows();
    const Index p_u = b.C_uk.rows();
    const Index p = p_k + p_u;
    const Matrix Ak = b.A_k - b.A_y * b.C_uk;
    const Matrix Bk = b.B_k - b.A_y * b.D_u;

    KnownRollout out;
    out.y.L = Matrix::Zero(N * p, n_local);
    out.y.c = Vector::Zero(N * p);
    if (track_w)
        out.y_W = Matrix::Zero(N * p, N * n_k);
    Matrix X_L = Matrix::Zero(n_k, n_local);
    Vector X_c = x0;
    Matrix X_W = track_w ? Matrix::Zero(n_k, N * n_k) : Matrix();
    for (Index j = 0; j < N; ++j) {
        Matrix yk_L = b.C_k * X_L;
        yk_L.middleCols(j * m, m) += b.D_k;
        out.y.L.middleRows(j * p, p_k) = yk_L;
        out.y.c.segment(j * p, p_k) = b.C_k * X_c;
        out.y.L.middleRows(j * p + p_k, p_u) = YuL.middleRows(j * p_u, p_u);
        out.y.c.segment(j * p + p_k, p_u) = Yuc.segment(j * p_u, p_u);
        if (track_w)
            out.y_W.middleRows(j * p, p_k) = b.C_k * X_W;

        Matrix X_L_next = Ak * X_L + b.A_y * YuL.middleRows(j * p_u, p_u);
        X_L_next.middleCols(j * m, m) += Bk;
        Vector X_c_next = Ak * X_c + b.A_y * Yuc.segment(j * p_u, p_u);
        if (w_path)
            X_c_next += w_path->row(j).transpose();
        if (w_mean)
            X_c_next += *w_mean;
        X_L = std::move(X_L_next);
        X_c = std::move(X_c_next);
        if (track_w) {
            X_W = (Ak * X_W).eval();
            X_W.middleCols(j * n_k, n_k) += Matrix::Identity(n_k, n_k);
        }
    }
    out.xN_L = b.C_k * X_L;
    out.xN_c = b.C_k * X_c;
    return out;
}

Vector atom_mean(const EmpiricalDist& d)
{
    return d.atoms().colwise().mean().transpose();
}

Matrix atom_covariance(const EmpiricalDist& d)
{
    const Matrix centered = d.atoms().rowwise() - d.atoms().colwise().mean();
    return centered.transpose() * centered / static_cast<double>(d.size());
}

std::vector<Index> identity_map(Index n)
{
    std::vector<Index> map(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
        map[static_cast<std::size_t>(i)] = i;
    return map;
}

} // namespace

void ControllerConfig::validate(Eigen::Index m, Eigen::Index p) const
{
    if (T_ini < 1 || N < 1)
        throw ConfigError("controller: T_ini and N must be positive");
    if (!positive_definite(Q, p))
        throw ConfigError("controller: Q must be a symmetric positive definite " + std::to_string(p) + "x" +
                          std::to_string(p) + " matrix");
    if (!positive_definite(R, m))
        throw ConfigError("controller: R must be a symmetric positive definite " + std::to_string(m) + "x" +
                          std::to_string(m) + " matrix");
    if (!(lambda_g >= 0.0) || !(lambda_y >= 0.0))
        throw ConfigError("controller: regularization weights must be non-negative");
    if (!u_bounds.empty() && static_cast<Eigen::Index>(u_bounds.size()) != m)
        throw ConfigError("controller: u_bounds needs one interval per input");
    if (!y_bounds.empty() && static_cast<Eigen::Index>(y_bounds.size()) != p)
        throw ConfigError("controller: y_bounds needs one interval per output");
    for (const auto* bounds : {&u_bounds, &y_bounds})
        for (const Interval& b : *bounds)
            if (!(b.lo <= b.hi))
                throw ConfigError("controller: bound with lo > hi");
    if (M < 1)
        throw ConfigError("controller: M must be at least 1");
    if (!(terminal_radius >= 0.0))
        throw ConfigError("controller: terminal radius must be non-negative");
    if (!(k_I >= 0.0))
        throw ConfigError("controller: k_I must be non-negative");
}

DataBlocks build_data_blocks(const Signal& u_d, const Signal& y_d, Eigen::Index T_ini, Eigen::Index N)
{
    if (u_d.length() != y_d.length())
        throw DimensionMismatch("build_data_blocks: input and output records differ in length");
    const Eigen::Index L = T_ini + N;
    if (L > u_d.length())
        throw DepthExceedsData("build_data_blocks: depth " + std::to_string(L) + " exceeds " +
                               std::to_string(u_d.length()) + " samples");
    const PastFuture u = split_past_future(build_hankel(u_d, L), T_ini, N);
    const PastFuture y = split_past_future(build_hankel(y_d, L), T_ini, N);

    DataBlocks b;
    b.Up = u.past;
    b.Uf = u.future;
    b.Yp = y.past;
    b.Yf = y.future;
    b.g_dim = b.Up.cols();
    b.T_ini = T_ini;
    b.N = N;

    Matrix Hu(b.Up.rows() + b.Uf.rows(), b.g_dim);
    Hu << b.Up, b.Uf;
    const Eigen::Index rows = Hu.rows();
    if (rows > b.g_dim)
        throw ExcitationFailed("build_data_blocks: fewer Hankel columns than input rows");
    Eigen::BDCSVD<Matrix> svd(Hu, Eigen::ComputeThinU | Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(rows - 1) <= 1e-9 * s(0))
        throw ExcitationFailed("build_data_blocks: input Hankel matrix is rank deficient");
    const Matrix V = svd.matrixV();
    const Matrix pinv = V.leftCols(rows) * s.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
    b.Pi_ini = pinv.leftCols(b.Up.rows());
    b.Pi_f = pinv.rightCols(b.Uf.rows());
    b.Null = V.rightCols(b.g_dim - rows);
    return b;
}

IoBuffers::IoBuffers(Eigen::Index T_ini, Eigen::Index m, Eigen::Index p) : T_ini_(T_ini), m_(m), p_(p)
{
    if (T_ini < 1)
        throw Error("IoBuffers: T_ini must be positive");
}

void IoBuffers::push(const Vector& u, const Vector& y)
{
    if (u.size() != m_ || y.size() != p_)
        throw DimensionMismatch("IoBuffers: sample size does not match the channel counts");
    u_.push_back(u);
    y_.push_back(y);
    while (static_cast<Eigen::Index>(u_.size()) > T_ini_) {
        u_.pop_front();
        y_.pop_front();
    }
}

Vector IoBuffers::u_ini() const
{
    if (!warm())
        throw BuffersNotWarm("IoBuffers: fewer than T_ini samples");
    Vector out(T_ini_ * m_);
    for (Eigen::Index k = 0; k < T_ini_; ++k)
        out.segment(k * m_, m_) = u_[static_cast<std::size_t>(k)];
    return out;
}

Vector IoBuffers::y_ini() const
{
    return y_ini(0, p_);
}

Vector IoBuffers::y_ini(Eigen::Index first, Eigen::Index count) const
{
    if (!warm())
        throw BuffersNotWarm("IoBuffers: fewer than T_ini samples");
    if (first < 0 || count < 0 || first + count > p_)
        throw DimensionMismatch("IoBuffers: output slice out of range");
    Vector out(T_ini_ * count);
    for (Eigen::Index k = 0; k < T_ini_; ++k)
        out.segment(k * count, count) = y_[static_cast<std::size_t>(k)].segment(first, count);
    return out;
}

MdrModel MdrModel::msd(const MsdParams& nominal, const ThetaBox& box, double Ts)
{
    nominal.validate();
    box.validate();
    MdrModel m;
    m.nominal = msd_partition(nominal, Ts);
    m.A_y = output_coupling(m.nominal);
    m.theta_box = box;
    m.nominal_params = nominal;
    m.Ts = Ts;
    return m;
}

MdrModel::Blocks MdrModel::remap(const MsdParams& theta) const
{
    const HybridPartition p = msd_partition(theta, Ts);
    return {p.A_k, output_coupling(p), p.B_k, p.C_k, p.C_uk, p.D_k, p.D_u};
}

void TerminalSet::append_to(ConvexProblem& p, const Matrix& L, const Vector& c) const
{
    if (!active)
        return;
    if (L.rows() != center.size() || c.size() != center.size())
        throw DimensionMismatch("TerminalSet: channel count mismatch");
    if (radius == 0.0) {
        p.add_equalities(L, center - c);
        return;
    }
    for (Eigen::Index ch = 0; ch < L.rows(); ++ch) {
        p.add_inequalities(L.row(ch), Vector::Constant(1, center(ch) + radius - c(ch)));
        p.add_inequalities(-L.row(ch), Vector::Constant(1, c(ch) - center(ch) + radius));
    }
}

TerminalSet terminal_set(const ControllerConfig& cfg, const Vector& r_terminal)
{
    TerminalSet t;
    t.active = cfg.terminal_mode == TerminalMode::BoxAroundReference;
    t.center = r_terminal;
    t.radius = cfg.terminal_radius;
    return t;
}

PredictiveProgram build_deepc(const DataBlocks& blocks, const ControllerConfig& cfg, const IoBuffers& buf,
                              const Signal& r)
{
    const Index m = blocks.Uf.rows() / blocks.N;
    const Index p = blocks.Yf.rows() / blocks.N;
    if (cfg.N != blocks.N || cfg.T_ini != blocks.T_ini || buf.T_ini() != blocks.T_ini)
        throw DepthMismatch("build_deepc: horizon or T_ini differ from the data blocks");
    check_reference(r, cfg.N, p);
    const Index nu = m * cfg.N;
    const Index ne = blocks.null_dim();
    const Index n = nu + ne;

    Matrix Gz(blocks.g_dim, n);
    Gz << blocks.Pi_f, blocks.Null;
    const Vector g_c = blocks.Pi_ini * buf.u_ini();
    const Prediction y{blocks.Yf * Gz, blocks.Yf * g_c};

    LsqRows rows(n);
    add_tracking_rows(rows, y, r, cfg, m, p, n);
    rows.add(std::sqrt(cfg.lambda_g) * Gz, std::sqrt(cfg.lambda_g) * g_c);
    rows.add(std::sqrt(cfg.lambda_y) * (blocks.Yp * Gz), std::sqrt(cfg.lambda_y) * (blocks.Yp * g_c - buf.y_ini()));

    const std::vector<Index> map = identity_map(n);
    PredictiveProgram out{ConvexProblem(n), m, {}, {}};
    out.problem.costs.push_back(rows.to_cost(map, n, 0.0));
    apply_input_bounds(out.problem, cfg, m);
    add_output_bounds(out.problem, cfg, y, p, map);
    // The last predicted output sample stands in for the terminal output.
    terminal_set(cfg, reference_at(r, cfg.N)).append_to(out.problem, y.L.bottomRows(p), y.c.tail(p));
    out.y_map.push_back(y.L);
    out.y_offset.push_back(y.c);
    return out;
}

PredictiveProgram build_mdr(const MdrModel& model, const DataBlocks& blocks, const ControllerConfig& cfg,
                            const Vector& x_known, const IoBuffers& buf, const std::vector<Scenario>& scenarios,
                            const Signal& r)
{
    const HybridPartition& part = model.nominal;
    const Index m = part.inputs();
    const Index p_k = part.p_k, p_u = part.p_u, p = p_k + p_u;
    if (cfg.N != blocks.N || cfg.T_ini != blocks.T_ini || buf.T_ini() != blocks.T_ini)
        throw DepthMismatch("build_mdr: horizon or T_ini differ from the data blocks");
    if (blocks.Yf.rows() != cfg.N * p_u || blocks.Uf.rows() != cfg.N * m)
        throw DimensionMismatch("build_mdr: data blocks must hold the inputs and the unknown outputs");
    if (static_cast<int>(scenarios.size()) != cfg.M)
        throw ScenarioCountMismatch("build_mdr: expected " + std::to_string(cfg.M) + " scenarios, got " +
                                    std::to_string(scenarios.size()));
    if (x_known.size() != part.n_k)
        throw DimensionMismatch("build_mdr: known state has the wrong size");
    check_reference(r, cfg.N, p);

    const Index nu = m * cfg.N;
    const Index ne = blocks.null_dim();
    const Index n_local = nu + ne;
    const Index n = nu + cfg.M * ne;

    Matrix Gz(blocks.g_dim, n_local);
    Gz << blocks.Pi_f, blocks.Null;
    const Vector g_c = blocks.Pi_ini * buf.u_ini();
    const Vector y_ini_u = buf.y_ini(p_k, p_u);
    const Matrix YuL = blocks.Yf * Gz;
    const Vector Yuc = blocks.Yf * g_c;
    const Matrix sigma_L = blocks.Yp * Gz;
    const Vector sigma_c = blocks.Yp * g_c - y_ini_u;
    const bool moments = cfg.expectation == ExpectationMode::Moments;
    const Matrix Wq = weight_factor(cfg.Q);

    PredictiveProgram out{ConvexProblem(n), m, {}, {}};
    apply_input_bounds(out.problem, cfg, m);
    for (int i = 0; i < cfg.M; ++i) {
        const Scenario& sc = scenarios[static_cast<std::size_t>(i)];
        std::vector<Index> map(static_cast<std::size_t>(n_local));
        for (Index l = 0; l < n_local; ++l)
            map[static_cast<std::size_t>(l)] = l < nu ? l : nu + i * ne + (l - nu);

        const MdrModel::Blocks b = model.remap(sc.theta);
        KnownRollout roll;
        Prediction y;
        double extra = 0.0;
        if (moments) {
            const Vector mu_w = atom_mean(sc.w_dist);
            const Vector mu_v = atom_mean(sc.v_dist);
            roll = roll_known(b, x_known, YuL, Yuc, nullptr, &mu_w, m, cfg.N, n_local, true);
            y = roll.y;
            for (Index j = 0; j < cfg.N; ++j)
                y.c.segment(j * p, p) += mu_v;
            // E||Wq (noise part)||^2 for zero-mean w_j ~ Sigma_w and v_j ~ Sigma_v, all independent.
            const Matrix Sw = atom_covariance(sc.w_dist);
            const Matrix Sv = atom_covariance(sc.v_dist);
            const Index n_k = part.n_k;
            for (Index j = 0; j < cfg.N; ++j) {
                const Matrix Mj = Wq * roll.y_W.middleRows(j * p, p);
                for (Index l = 0; l < j; ++l) {
                    const Matrix Ml = Mj.middleCols(l * n_k, n_k);
                    extra += (Ml * Sw * Ml.transpose()).trace();
                }
                extra += (Wq * Sv * Wq.transpose()).trace();
            }
        } else {
            const Matrix& wp = sc.w_path.samples();
            if (wp.rows() < cfg.N || wp.cols() != part.n_k || sc.v_path.length() < cfg.N ||
                sc.v_path.dim() != p)
                throw DimensionMismatch("build_mdr: scenario noise paths have the wrong shape");
            roll = roll_known(b, x_known, YuL, Yuc, &wp, nullptr, m, cfg.N, n_local, false);
            y = roll.y;
            for (Index j = 0; j < cfg.N; ++j)
                y.c.segment(j * p, p) += sc.v_path.at(j);
        }

        LsqRows rows(n_local);
        add_tracking_rows(rows, y, r, cfg, m, p, n_local);
        rows.add(std::sqrt(cfg.lambda_g) * Gz, std::sqrt(cfg.lambda_g) * g_c);
        rows.add(std::sqrt(cfg.lambda_y) * sigma_L, std::sqrt(cfg.lambda_y) * sigma_c);
        out.problem.costs.push_back(rows.to_cost(map, n, extra));

        add_output_bounds(out.problem, cfg, y, p, map);
        Vector xN_c = roll.xN_c;
        terminal_set(cfg, reference_at(r, cfg.N).head(p_k))
            .append_to(out.problem, to_global(roll.xN_L, map, n), xN_c);
        out.y_map.push_back(to_global(y.L, map, n));
        out.y_offset.push_back(y.c);
    }
    return out;
}

PredictiveProgram build_mpc_oracle(const DiscreteLTI& truth, const ControllerConfig& cfg, const Vector& x,
                                   const Signal& r)
{
    const Index m = truth.inputs(), p = truth.outputs(), nx = truth.states();
    if (x.size() != nx)
        throw DimensionMismatch("build_mpc_oracle: state has the wrong size");
    check_reference(r, cfg.N, p);
    const Index n = m * cfg.N;

    Prediction y{Matrix::Zero(cfg.N * p, n), Vector::Zero(cfg.N * p)};
    Matrix X_L = Matrix::Zero(nx, n);
    Vector X_c = x;
    for (Index j = 0; j < cfg.N; ++j) {
        Matrix yL = truth.Cd * X_L;
        yL.middleCols(j * m, m) += truth.Dd;
        y.L.middleRows(j * p, p) = yL;
        y.c.segment(j * p, p) = truth.Cd * X_c;
        Matrix X_L_next = truth.Ad * X_L;
        X_L_next.middleCols(j * m, m) += truth.Bd;
        X_L = std::move(X_L_next);
        X_c = (truth.Ad * X_c).eval();
    }

    LsqRows rows(n);
    add_tracking_rows(rows, y, r, cfg, m, p, n);
    const std::vector<Index> map = identity_map(n);
    PredictiveProgram out{ConvexProblem(n), m, {}, {}};
    out.problem.costs.push_back(rows.to_cost(map, n, 0.0));
    apply_input_bounds(out.problem, cfg, m);
    add_output_bounds(out.problem, cfg, y, p, map);
    terminal_set(cfg, reference_at(r, cfg.N)).append_to(out.problem, truth.Cd * X_L, truth.Cd * X_c);
    out.y_map.push_back(y.L);
    out.y_offset.push_back(y.c);
    return out;
}

PredictiveProgram build_hybrid_oracle(const DiscreteLTI& truth, const HybridPartition& part,
                                      const ControllerConfig& cfg, const Vector& x, const Signal& r)
{
    const Index m = truth.inputs(), p = truth.outputs(), nx = truth.states();
    if (x.size() != nx || part.n_k + part.n_u != nx || part.p_k + part.p_u != p)
        throw DimensionMismatch("build_hybrid_oracle: state or partition sizes disagree");
    check_reference(r, cfg.N, p);
    const Index n = m * cfg.N;
    const Index p_u = part.p_u;

    // Unknown outputs from the true model.
    Matrix YuL = Matrix::Zero(cfg.N * p_u, n);
    Vector Yuc = Vector::Zero(cfg.N * p_u);
    Matrix X_L = Matrix::Zero(nx, n);
    Vector X_c = x;
    for (Index j = 0; j < cfg.N; ++j) {
        Matrix yL = truth.Cd.bottomRows(p_u) * X_L;
        yL.middleCols(j * m, m) += truth.Dd.bottomRows(p_u);
        YuL.middleRows(j * p_u, p_u) = yL;
        Yuc.segment(j * p_u, p_u) = truth.Cd.bottomRows(p_u) * X_c;
        Matrix X_L_next = truth.Ad * X_L;
        X_L_next.middleCols(j * m, m) += truth.Bd;
        X_L = std::move(X_L_next);
        X_c = (truth.Ad * X_c).eval();
    }

    const MdrModel::Blocks b{part.A_k, output_coupling(part), part.B_k, part.C_k, part.C_uk, part.D_k, part.D_u};
    const KnownRollout roll = roll_known(b, x.head(part.n_k), YuL, Yuc, nullptr, nullptr, m, cfg.N, n, false);

    LsqRows rows(n);
    add_tracking_rows(rows, roll.y, r, cfg, m, p, n);
    const std::vector<Index> map = identity_map(n);
    PredictiveProgram out{ConvexProblem(n), m, {}, {}};
    out.problem.costs.push_back(rows.to_cost(map, n, 0.0));
    apply_input_bounds(out.problem, cfg, m);
    add_output_bounds(out.problem, cfg, roll.y, p, map);
    terminal_set(cfg, reference_at(r, cfg.N).head(part.p_k)).append_to(out.problem, roll.xN_L, roll.xN_c);
    out.y_map.push_back(roll.y.L);
    out.y_offset.push_back(roll.y.c);
    return out;
}

Controller::Controller(ControllerConfig cfg, Eigen::Index m, Eigen::Index p)
    : cfg_(std::move(cfg)), m_(m), p_(p), buf_(cfg_.T_ini, m, p), last_u_(Vector::Zero(m)),
      error_sum_(Vector::Zero(p))
{
    cfg_.validate(m, p);
}

ControlStep Controller::receding_step(const StepInput& in)
{
    if (in.y.size() != p_)
        throw DimensionMismatch("receding_step: measurement has the wrong size");
    ControlStep out;
    Vector u = Vector::Zero(m_);
    if (!buf_.warm()) {
        out.warmup = true;
    } else {
        Signal r_eff = in.r;
        if (cfg_.integral_action) {
            error_sum_ += in.r.at(0) - in.y;
            Matrix s = in.r.samples();
            s.rowwise() += (cfg_.k_I * error_sum_).transpose();
            r_eff = Signal(std::move(s));
        }
        const PredictiveProgram prog = build(in, r_eff);
        const SolveResult res = solve(prog.problem, cfg_.solver);
        ++solves_;
        out.solver_status = res.status;
        out.iterations = res.iterations;
        out.t_star = res.t;
        if (res.status == SolveStatus::Optimal) {
            u = res.z.head(m_);
            std::size_t worst = 0;
            for (std::size_t i = 0; i < prog.problem.costs.size(); ++i) {
                out.per_scenario_costs.push_back(eval_cost(prog.problem.costs[i], res.z));
                if (out.per_scenario_costs[i] > out.per_scenario_costs[worst])
                    worst = i;
            }
            out.predicted_y = Signal::from_stacked(prog.y_map[worst] * res.z + prog.y_offset[worst], p_);
        } else {
            ++failures_;
            out.fallback = true;
            u = last_u_;
        }
        if (!cfg_.u_bounds.empty())
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Interval& b = cfg_.u_bounds[static_cast<std::size_t>(i)];
                u(i) = std::clamp(u(i), b.lo, b.hi);
            }
    }
    observe(in, u);
    buf_.push(u, in.y);
    last_u_ = u;
    out.u_applied = u;
    return out;
}

DeePCController::DeePCController(ControllerConfig cfg, DataBlocks blocks, Eigen::Index m, Eigen::Index p)
    : Controller(std::move(cfg), m, p), blocks_(std::move(blocks))
{
}

PredictiveProgram DeePCController::build(const StepInput& in, const Signal& r_eff)
{
    (void)in;
    return build_deepc(blocks_, cfg_, buf_, r_eff);
}

MdrController::MdrController(ControllerConfig cfg, MdrModel model, DataBlocks blocks, MdrOptions opts)
    : Controller(std::move(cfg), model.nominal.inputs(), model.nominal.p_k + model.nominal.p_u),
      model_(std::move(model)), blocks_(std::move(blocks)), opts_(std::move(opts))
{
    opts_.w.validate();
    opts_.v.validate();
    if (opts_.w.center.dim() != model_.nominal.n_k || opts_.v.center.dim() != p_)
        throw DimensionMismatch("MdrController: ambiguity centers have the wrong dimension");
}

PredictiveProgram MdrController::build(const StepInput& in, const Signal& r_eff)
{
    const auto scenarios = draw_scenarios(model_.theta_box, opts_.w, opts_.v, cfg_.M, cfg_.N, in.seed,
                                          model_.nominal_params);
    return build_mdr(model_, blocks_, cfg_, in.x_known, buf_, scenarios, r_eff);
}

void MdrController::observe(const StepInput& in, const Vector& u)
{
    if (opts_.adapt_window <= 0)
        return;
    if (have_prev_) {
        Matrix xs(2, model_.nominal.n_k);
        xs.row(0) = prev_x_.transpose();
        xs.row(1) = in.x_known.transpose();
        const Residuals res = estimate_residuals(model_.nominal, Signal(Matrix(prev_u_.transpose())),
                                                 Signal(Matrix(prev_y_.transpose())), Signal(std::move(xs)));
        opts_.w.center = update_dist(opts_.w.center, res.w.atoms(), opts_.adapt_window);
        opts_.v.center = update_dist(opts_.v.center, res.v.atoms(), opts_.adapt_window);
    }
    prev_x_ = in.x_known;
    prev_u_ = u;
    prev_y_ = in.y;
    have_prev_ = true;
}

OracleController::OracleController(ControllerConfig cfg, DiscreteLTI truth, HybridPartition part, OracleKind kind)
    : Controller(std::move(cfg), truth.inputs(), truth.outputs()), truth_(std::move(truth)), part_(std::move(part)),
      kind_(kind)
{
}

PredictiveProgram OracleController::build(const StepInput& in, const Signal& r_eff)
{
    if (kind_ == OracleKind::Exact)
        return build_mpc_oracle(truth_, cfg_, in.x_full, r_eff);
    return build_hybrid_oracle(truth_, part_, cfg_, in.x_full, r_eff);
}

} // namespace mdr
