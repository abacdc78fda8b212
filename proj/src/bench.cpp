#include "mdr/bench.hpp"

#include "mdr/errors.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

namespace mdr {

namespace {

// Known-block states x_0 .. x_T of the offline record.
Signal known_states(const CollectedData& d)
{
    const Matrix& a = d.x_known.samples();
    Matrix all(a.rows() + 1, a.cols());
    all << a, d.x_known_next.samples().bottomRows(1);
    return Signal(std::move(all));
}

std::unique_ptr<Controller> make_controller(const ExperimentConfig& cfg, const std::string& id,
                                            const OfflineData& off)
{
    const Eigen::Index m = off.plant.inputs(), p = off.plant.outputs();
    if (id == "deepc") {
        DataBlocks b = build_data_blocks(off.data.u, off.data.y, cfg.deepc.T_ini, cfg.deepc.N);
        return std::make_unique<DeePCController>(cfg.deepc, std::move(b), m, p);
    }
    if (id == "mdr") {
        DataBlocks b = build_data_blocks(off.data.u, off.data.y_u, cfg.mdr.T_ini, cfg.mdr.N);
        MdrModel model = MdrModel::msd(cfg.nominal, cfg.theta_box, cfg.Ts);
        // Ambiguity centers: residuals of the offline record against the nominal model.
        const Residuals res = estimate_residuals(model.nominal, off.data.u, off.data.y, known_states(off.data));
        MdrOptions opts;
        opts.w = {res.w, cfg.mdr_settings.eps_w};
        opts.v = {res.v, cfg.mdr_settings.eps_v};
        opts.adapt_window = cfg.mdr_settings.adapt_window;
        return std::make_unique<MdrController>(cfg.mdr, std::move(model), std::move(b), std::move(opts));
    }
    if (id == "oracle")
        return std::make_unique<OracleController>(cfg.oracle, off.plant, off.partition, cfg.oracle_kind);
    throw ConfigError("unknown controller '" + id + "' (expected deepc, mdr or oracle)");
}

const ControllerConfig& controller_config(const ExperimentConfig& cfg, const std::string& id)
{
    if (id == "deepc")
        return cfg.deepc;
    if (id == "mdr")
        return cfg.mdr;
    if (id == "oracle")
        return cfg.oracle;
    throw ConfigError("unknown controller '" + id + "' (expected deepc, mdr or oracle)");
}

} // namespace

ExperimentConfig ExperimentConfig::defaults()
{
    ExperimentConfig cfg;
    ControllerConfig c;
    c.T_ini = 4;
    c.N = 20;
    c.Q = Matrix::Identity(3, 3);
    c.R = 1e-6 * Matrix::Identity(3, 3);
    c.M = 5;
    cfg.deepc = c;
    cfg.mdr = c;
    cfg.oracle = c;
    cfg.cost_Q = Matrix::Identity(3, 3);
    cfg.cost_R = 1e-6 * Matrix::Identity(3, 3);
    for (std::uint64_t s = 1; s <= 10; ++s)
        cfg.seeds.push_back(s);
    return cfg;
}

void ExperimentConfig::validate() const
{
    nominal.validate();
    theta_box.validate();
    if (!(Ts > 0.0))
        throw ConfigError("config: Ts must be positive");
    if (!(noise.sigma_w >= 0.0) || !(noise.sigma_v >= 0.0))
        throw ConfigError("config: noise levels must be non-negative");
    if (T_data < 1 || T_run < 1)
        throw ConfigError("config: T_data and T_run must be positive");
    if (!(excitation_amplitude >= 0.0))
        throw ConfigError("config: excitation amplitude must be non-negative");
    if (disturbance.start < 0 || disturbance.start > disturbance.end || disturbance.end > T_run)
        throw ConfigError("config: disturbance interval must satisfy 0 <= start <= end <= T_run");
    if (!(disturbance.noise_inflation >= 0.0))
        throw ConfigError("config: noise inflation must be non-negative");
    if (disturbance.step_force.size() != 3)
        throw ConfigError("config: step_force needs one entry per mass");
    for (const auto* c : {&deepc, &mdr, &oracle})
        c->validate(3, 3);
    if (!(mdr_settings.eps_w >= 0.0) || !(mdr_settings.eps_v >= 0.0))
        throw ConfigError("config: ambiguity radii must be non-negative");
    if (mdr_settings.adapt_window < 0)
        throw ConfigError("config: adapt_window must be non-negative");
    if (cost_Q.rows() != 3 || cost_Q.cols() != 3 || cost_R.rows() != 3 || cost_R.cols() != 3)
        throw ConfigError("config: cost weights must be 3x3");
}

void RunRecord::validate() const
{
    const Eigen::Index n = u.length();
    if (y.length() != n || r.length() != n || stage_cost.size() != n)
        throw DimensionMismatch("RunRecord: series lengths differ");
    if (!disturbed.empty() && static_cast<Eigen::Index>(disturbed.size()) != n)
        throw DimensionMismatch("RunRecord: disturbance mask length differs");
    if (y.dim() != r.dim())
        throw DimensionMismatch("RunRecord: output and reference channel counts differ");
}

double total_cost(const RunRecord& rec, const Matrix& Q, const Matrix& R)
{
    rec.validate();
    double s = 0.0;
    for (Eigen::Index k = 0; k < rec.length(); ++k) {
        const Vector e = rec.y.at(k) - rec.r.at(k);
        const Vector u = rec.u.at(k);
        s += e.dot(Q * e) + u.dot(R * u);
    }
    return s;
}

double max_output_deviation(const RunRecord& rec)
{
    rec.validate();
    if (rec.length() == 0)
        return 0.0;
    return (rec.y.samples() - rec.r.samples()).cwiseAbs().maxCoeff();
}

Eigen::Index settling_time(const RunRecord& rec, double band_fraction)
{
    rec.validate();
    if (!(band_fraction > 0.0))
        throw Error("settling_time: band fraction must be positive");
    // Walk backwards to the last violation; settling starts right after it.
    for (Eigen::Index k = rec.length() - 1; k >= 0; --k) {
        const Vector e = (rec.y.at(k) - rec.r.at(k)).cwiseAbs();
        const Vector r = rec.r.at(k).cwiseAbs();
        for (Eigen::Index c = 0; c < e.size(); ++c)
            if (e(c) > band_fraction * std::max(r(c), 1e-6))
                return k + 1;
    }
    return 0;
}

double peak_to_peak(const RunRecord& rec, Eigen::Index from)
{
    rec.validate();
    if (from >= rec.length())
        return 0.0;
    from = std::max<Eigen::Index>(from, 0);
    const Matrix tail = rec.y.samples().bottomRows(rec.length() - from);
    return (tail.colwise().maxCoeff() - tail.colwise().minCoeff()).maxCoeff();
}

double improvement(double base, double candidate)
{
    if (!(base > 0.0))
        throw NonPositiveBase("improvement: base value must be positive");
    return 100.0 * (base - candidate) / base;
}

double improvement_rounded(double base, double candidate)
{
    return std::round(improvement(base, candidate) * 100.0) / 100.0;
}

MetricsReport compute_metrics(const RunRecord& rec, const ExperimentConfig& cfg)
{
    MetricsReport m;
    m.total_cost = total_cost(rec, cfg.cost_Q, cfg.cost_R);
    m.max_output_deviation = max_output_deviation(rec);
    m.settling_time_steps = settling_time(rec);
    m.peak_to_peak = peak_to_peak(rec, cfg.disturbance.start);
    return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    // splitmix64 finalizer over the pair.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Eigen::Index required_pe_order(const ExperimentConfig& cfg)
{
    const Eigen::Index L = std::max(cfg.mdr.T_ini + cfg.mdr.N, cfg.deepc.T_ini + cfg.deepc.N);
    return L + msd_partition(cfg.nominal, cfg.Ts).n_u;
}

OfflineData collect_offline(const ExperimentConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    OfflineData off;
    off.truth = sample_theta(cfg.theta_box, derive_seed(seed, 0), cfg.nominal);
    off.plant = permute_states(discretize_zoh(build_msd(off.truth), cfg.Ts), msd_hybrid_order());
    off.partition = msd_partition(off.truth, cfg.Ts);
    off.data = collect_data(off.plant, off.partition, cfg.T_data, cfg.excitation_amplitude, cfg.noise,
                            derive_seed(seed, 1), required_pe_order(cfg));
    return off;
}

RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& controller, std::uint64_t seed)
{
    (void)controller_config(cfg, controller);
    return run_experiment(cfg, controller, seed, collect_offline(cfg, seed));
}

RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& controller, std::uint64_t seed,
                         const OfflineData& off)
{
    cfg.validate();
    const ControllerConfig& ccfg = controller_config(cfg, controller);
    std::unique_ptr<Controller> ctrl = make_controller(cfg, controller, off);

    const Eigen::Index m = 3, p = 3, T = cfg.T_run;
    RunRecord rec;
    rec.controller = controller;
    rec.seed = seed;
    rec.config_digest = config_digest(cfg);
    rec.truth = off.truth;
    Matrix U(T, m), Y(T, p), R(T, p);
    rec.stage_cost.resize(T);
    rec.disturbed.resize(static_cast<std::size_t>(T));

    // Same plant noise stream for every controller.
    PlantSimulator sim(off.plant, Vector::Zero(off.plant.states()), cfg.noise, derive_seed(seed, 2));
    const std::uint64_t scenario_stream = derive_seed(seed, 3);
    const Vector r_k = Vector::Constant(p, cfg.reference_level);
    const Signal reference(Matrix::Constant(ccfg.N + 1, p, cfg.reference_level));
    for (Eigen::Index k = 0; k < T; ++k) {
        StepInput in;
        in.y = sim.measure(Vector::Zero(m));
        in.x_known = sim.state().head(off.partition.n_k);
        in.x_full = sim.state();
        in.r = reference;
        in.seed = derive_seed(scenario_stream, static_cast<std::uint64_t>(k));
        const ControlStep st = ctrl->receding_step(in);

        const bool dist = cfg.disturbance.active(k);
        Vector u_plant = st.u_applied;
        if (dist)
            u_plant += cfg.disturbance.step_force;
        sim.advance(u_plant, dist ? cfg.disturbance.noise_inflation : 1.0);

        U.row(k) = st.u_applied.transpose();
        Y.row(k) = in.y.transpose();
        R.row(k) = r_k.transpose();
        const Vector e = in.y - r_k;
        rec.stage_cost(k) = e.dot(cfg.cost_Q * e) + st.u_applied.dot(cfg.cost_R * st.u_applied);
        rec.disturbed[static_cast<std::size_t>(k)] = dist;
    }
    rec.u = Signal(std::move(U));
    rec.y = Signal(std::move(Y));
    rec.r = Signal(std::move(R));
    rec.solves = ctrl->solves();
    rec.solver_failures = ctrl->solver_failures();
    return rec;
}

void write_run_csv(std::ostream& os, const RunRecord& rec)
{
    rec.validate();
    os << "step";
    for (const char* name : {"u", "y", "r"}) {
        const Eigen::Index dim = name[0] == 'u' ? rec.u.dim() : rec.y.dim();
        for (Eigen::Index c = 0; c < dim; ++c)
            os << ',' << name << c;
    }
    os << ",stage_cost\n";
    for (Eigen::Index k = 0; k < rec.length(); ++k) {
        os << k;
        for (const Signal* s : {&rec.u, &rec.y, &rec.r})
            for (Eigen::Index c = 0; c < s->dim(); ++c)
                os << ',' << detail::format_double(s->samples()(k, c));
        os << ',' << detail::format_double(rec.stage_cost(k)) << '\n';
    }
}

void write_run_csv(const std::string& path, const RunRecord& rec)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("cannot open " + path + " for writing");
    write_run_csv(os, rec);
}

RunRecord read_run_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw Error("run CSV: missing header");
    const auto header = detail::split(line, ',');
    Eigen::Index nu = 0, ny = 0, nr = 0;
    for (const auto& h : header) {
        if (h.size() > 1 && h[0] == 'u')
            ++nu;
        else if (h.size() > 1 && h[0] == 'y')
            ++ny;
        else if (h.size() > 1 && h[0] == 'r')
            ++nr;
    }
    const std::size_t width = static_cast<std::size_t>(2 + nu + ny + nr);
    if (header.empty() || header[0] != "step" || header.back() != "stage_cost" || header.size() != width ||
        ny != nr)
        throw Error("run CSV: header must be step,u*,y*,r*,stage_cost");
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r")
            continue;
        const auto f = detail::split(line, ',');
        if (f.size() != width)
            throw DimensionMismatch("run CSV: row " + std::to_string(rows.size()) + " has wrong field count");
        std::vector<double> row(width - 1);
        for (std::size_t i = 1; i < width; ++i)
            if (!detail::parse_double(f[i], row[i - 1]))
                throw Error("run CSV: bad number in row " + std::to_string(rows.size()));
        rows.push_back(std::move(row));
    }
    const auto T = static_cast<Eigen::Index>(rows.size());
    Matrix U(T, nu), Y(T, ny), R(T, nr);
    RunRecord rec;
    rec.stage_cost.resize(T);
    for (Eigen::Index k = 0; k < T; ++k) {
        const auto& row = rows[static_cast<std::size_t>(k)];
        for (Eigen::Index c = 0; c < nu; ++c)
            U(k, c) = row[static_cast<std::size_t>(c)];
        for (Eigen::Index c = 0; c < ny; ++c)
            Y(k, c) = row[static_cast<std::size_t>(nu + c)];
        for (Eigen::Index c = 0; c < nr; ++c)
            R(k, c) = row[static_cast<std::size_t>(nu + ny + c)];
        rec.stage_cost(k) = row.back();
    }
    rec.u = Signal(std::move(U));
    rec.y = Signal(std::move(Y));
    rec.r = Signal(std::move(R));
    return rec;
}

RunRecord read_run_csv(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw Error("cannot open " + path);
    return read_run_csv(is);
}

} // namespace mdr
