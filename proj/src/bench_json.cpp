#include "mdr/bench.hpp"

#include "mdr/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mdr {

namespace {

using nlohmann::json;

// Object view that remembers which keys were read, so leftovers can be rejected.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            throw ConfigError("config: '" + path_ + "' must be an object");
    }

    bool has(const std::string& key)
    {
        used_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) const { return j_.at(key); }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void read(const std::string& key, T& out)
    {
        if (!has(key))
            return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: '" + where(key) + "' has the wrong type");
        }
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError("config: unknown key '" + where(it.key()) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

json matrix_to_json(const Matrix& m)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

// A flat list is a diagonal; a list of lists is the full matrix.
Matrix matrix_from_json(const json& j, const std::string& where)
{
    try {
        if (!j.is_array() || j.empty())
            throw ConfigError("config: '" + where + "' must be a non-empty array");
        const auto n = static_cast<Eigen::Index>(j.size());
        if (!j[0].is_array()) {
            Matrix m = Matrix::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                m(i, i) = j[static_cast<std::size_t>(i)].get<double>();
            return m;
        }
        const auto cols = static_cast<Eigen::Index>(j[0].size());
        Matrix m(n, cols);
        for (Eigen::Index i = 0; i < n; ++i) {
            const json& row = j[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
                throw ConfigError("config: '" + where + "' rows differ in length");
            for (Eigen::Index c = 0; c < cols; ++c)
                m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
        return m;
    } catch (const json::exception&) {
        throw ConfigError("config: '" + where + "' must hold numbers");
    }
}

json bound_to_json(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double bound_from_json(const json& j, double unbounded, const std::string& where)
{
    if (j.is_null())
        return unbounded;
    if (!j.is_number())
        throw ConfigError("config: '" + where + "' must be a number or null");
    return j.get<double>();
}

json intervals_to_json(const std::vector<Interval>& v)
{
    json a = json::array();
    for (const Interval& i : v)
        a.push_back({bound_to_json(i.lo), bound_to_json(i.hi)});
    return a;
}

std::vector<Interval> intervals_from_json(const json& j, const std::string& where)
{
    if (!j.is_array())
        throw ConfigError("config: '" + where + "' must be an array of [lo, hi] pairs");
    std::vector<Interval> out;
    for (const json& pair : j) {
        if (!pair.is_array() || pair.size() != 2)
            throw ConfigError("config: '" + where + "' entries must be [lo, hi]");
        out.push_back({bound_from_json(pair[0], -INFINITY, where), bound_from_json(pair[1], INFINITY, where)});
    }
    return out;
}

json interval_to_json(const Interval& i)
{
    return {i.lo, i.hi};
}

Interval interval_from_json(const json& j, const std::string& where)
{
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ConfigError("config: '" + where + "' must be [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

json controller_to_json(const ControllerConfig& c)
{
    json j;
    j["T_ini"] = c.T_ini;
    j["N"] = c.N;
    j["Q"] = matrix_to_json(c.Q);
    j["R"] = matrix_to_json(c.R);
    j["lambda_g"] = c.lambda_g;
    j["lambda_y"] = c.lambda_y;
    j["u_bounds"] = intervals_to_json(c.u_bounds);
    j["y_bounds"] = intervals_to_json(c.y_bounds);
    j["terminal"] = {{"mode", c.terminal_mode == TerminalMode::None ? "none" : "box"},
                     {"radius", c.terminal_radius}};
    j["M"] = c.M;
    j["expectation"] = c.expectation == ExpectationMode::SampledPath ? "sampled_path" : "moments";
    j["integral_action"] = c.integral_action;
    j["k_I"] = c.k_I;
    j["solver"] = {{"tol", c.solver.tol}, {"max_iterations", c.solver.max_iterations}};
    return j;
}

void controller_from_json(const json& j, ControllerConfig& c, const std::string& path)
{
    Section s(j, path);
    s.read("T_ini", c.T_ini);
    s.read("N", c.N);
    if (s.has("Q"))
        c.Q = matrix_from_json(s.at("Q"), s.where("Q"));
    if (s.has("R"))
        c.R = matrix_from_json(s.at("R"), s.where("R"));
    s.read("lambda_g", c.lambda_g);
    s.read("lambda_y", c.lambda_y);
    if (s.has("u_bounds"))
        c.u_bounds = intervals_from_json(s.at("u_bounds"), s.where("u_bounds"));
    if (s.has("y_bounds"))
        c.y_bounds = intervals_from_json(s.at("y_bounds"), s.where("y_bounds"));
    if (s.has("terminal")) {
        Section t(s.at("terminal"), s.where("terminal"));
        std::string mode = c.terminal_mode == TerminalMode::None ? "none" : "box";
        t.read("mode", mode);
        if (mode == "none")
            c.terminal_mode = TerminalMode::None;
        else if (mode == "box")
            c.terminal_mode = TerminalMode::BoxAroundReference;
        else
            throw ConfigError("config: '" + t.where("mode") + "' must be \"none\" or \"box\"");
        t.read("radius", c.terminal_radius);
        t.finish();
    }
    s.read("M", c.M);
    if (s.has("expectation")) {
        std::string e;
        s.read("expectation", e);
        if (e == "sampled_path")
            c.expectation = ExpectationMode::SampledPath;
        else if (e == "moments")
            c.expectation = ExpectationMode::Moments;
        else
            throw ConfigError("config: '" + s.where("expectation") + "' must be \"sampled_path\" or \"moments\"");
    }
    s.read("integral_action", c.integral_action);
    s.read("k_I", c.k_I);
    if (s.has("solver")) {
        Section sv(s.at("solver"), s.where("solver"));
        sv.read("tol", c.solver.tol);
        sv.read("max_iterations", c.solver.max_iterations);
        sv.finish();
    }
    s.finish();
}

json config_json(const ExperimentConfig& cfg, bool with_output)
{
    json j;
    j["schema_version"] = kConfigSchemaVersion;
    const MsdParams& p = cfg.nominal;
    j["plant"] = {{"m1", p.m1}, {"m2", p.m2}, {"m3", p.m3}, {"k1", p.k1}, {"k2", p.k2},
                  {"k3", p.k3}, {"c1", p.c1}, {"c2", p.c2}, {"c3", p.c3}, {"Ts", cfg.Ts}};
    j["theta_box"] = {{"k3", interval_to_json(cfg.theta_box.k3)}, {"c3", interval_to_json(cfg.theta_box.c3)}};
    j["noise"] = {{"sigma_w", cfg.noise.sigma_w}, {"sigma_v", cfg.noise.sigma_v}};
    j["data"] = {{"T", cfg.T_data}, {"amplitude", cfg.excitation_amplitude}};
    j["run"] = {{"T_run", cfg.T_run}, {"reference_level", cfg.reference_level}};
    std::vector<double> force(cfg.disturbance.step_force.data(),
                              cfg.disturbance.step_force.data() + cfg.disturbance.step_force.size());
    j["disturbance"] = {{"start", cfg.disturbance.start},
                        {"end", cfg.disturbance.end},
                        {"noise_inflation", cfg.disturbance.noise_inflation},
                        {"step_force", force}};
    j["cost"] = {{"Q", matrix_to_json(cfg.cost_Q)}, {"R", matrix_to_json(cfg.cost_R)}};
    j["controllers"] = {{"deepc", controller_to_json(cfg.deepc)},
                        {"mdr", controller_to_json(cfg.mdr)},
                        {"oracle", controller_to_json(cfg.oracle)}};
    j["ambiguity"] = {{"eps_w", cfg.mdr_settings.eps_w},
                      {"eps_v", cfg.mdr_settings.eps_v},
                      {"adapt_window", cfg.mdr_settings.adapt_window}};
    j["oracle_kind"] = cfg.oracle_kind == OracleKind::Exact ? "exact" : "hybrid";
    j["seeds"] = cfg.seeds;
    if (with_output)
        j["output_dir"] = cfg.output_dir;
    return j;
}

} // namespace

std::string metrics_to_json(const MetricsReport& m, const std::string& controller, std::uint64_t seed,
                            const std::string& digest)
{
    json j;
    j["controller"] = controller;
    j["seed"] = seed;
    j["config_digest"] = digest;
    j["total_cost"] = m.total_cost;
    j["max_output_deviation"] = m.max_output_deviation;
    j["settling_time_steps"] = m.settling_time_steps;
    j["peak_to_peak"] = m.peak_to_peak;
    return j.dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string& text)
{
    try {
        const json j = json::parse(text);
        MetricsReport m;
        m.total_cost = j.at("total_cost").get<double>();
        m.max_output_deviation = j.at("max_output_deviation").get<double>();
        m.settling_time_steps = j.at("settling_time_steps").get<Eigen::Index>();
        m.peak_to_peak = j.at("peak_to_peak").get<double>();
        return m;
    } catch (const json::exception& e) {
        throw Error(std::string("metrics JSON: ") + e.what());
    }
}

std::string comparison_to_json(const MetricsReport& base, const MetricsReport& candidate,
                               const std::string& base_label, const std::string& candidate_label)
{
    auto pct = [](double b, double c) -> json {
        if (!(b > 0.0))
            return b == c ? json(0.0) : json(nullptr);
        return improvement_rounded(b, c);
    };
    auto side = [](const MetricsReport& m) {
        return json{{"total_cost", m.total_cost},
                    {"max_output_deviation", m.max_output_deviation},
                    {"settling_time_steps", m.settling_time_steps},
                    {"peak_to_peak", m.peak_to_peak}};
    };
    json j;
    j["base"] = base_label;
    j["candidate"] = candidate_label;
    j[base_label == candidate_label ? "base_metrics" : base_label] = side(base);
    j[base_label == candidate_label ? "candidate_metrics" : candidate_label] = side(candidate);
    j["improvement_pct"] = {
        {"total_cost", pct(base.total_cost, candidate.total_cost)},
        {"max_output_deviation", pct(base.max_output_deviation, candidate.max_output_deviation)},
        {"settling_time_steps", pct(static_cast<double>(base.settling_time_steps),
                                    static_cast<double>(candidate.settling_time_steps))},
        {"peak_to_peak", pct(base.peak_to_peak, candidate.peak_to_peak)}};
    return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg = ExperimentConfig::defaults();
    Section top(j, "");
    if (!top.has("schema_version"))
        throw ConfigError("config: missing required key 'schema_version'");
    int version = 0;
    top.read("schema_version", version);
    if (version != kConfigSchemaVersion)
        throw ConfigError("config: schema_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
    if (top.has("plant")) {
        Section s(top.at("plant"), "plant");
        MsdParams& p = cfg.nominal;
        s.read("m1", p.m1);
        s.read("m2", p.m2);
        s.read("m3", p.m3);
        s.read("k1", p.k1);
        s.read("k2", p.k2);
        s.read("k3", p.k3);
        s.read("c1", p.c1);
        s.read("c2", p.c2);
        s.read("c3", p.c3);
        s.read("Ts", cfg.Ts);
        s.finish();
    }
    if (top.has("theta_box")) {
        Section s(top.at("theta_box"), "theta_box");
        if (s.has("k3"))
            cfg.theta_box.k3 = interval_from_json(s.at("k3"), "theta_box.k3");
        if (s.has("c3"))
            cfg.theta_box.c3 = interval_from_json(s.at("c3"), "theta_box.c3");
        s.finish();
    }
    if (top.has("noise")) {
        Section s(top.at("noise"), "noise");
        s.read("sigma_w", cfg.noise.sigma_w);
        s.read("sigma_v", cfg.noise.sigma_v);
        s.finish();
    }
    if (top.has("data")) {
        Section s(top.at("data"), "data");
        s.read("T", cfg.T_data);
        s.read("amplitude", cfg.excitation_amplitude);
        s.finish();
    }
    if (top.has("run")) {
        Section s(top.at("run"), "run");
        s.read("T_run", cfg.T_run);
        s.read("reference_level", cfg.reference_level);
        s.finish();
    }
    if (top.has("disturbance")) {
        Section s(top.at("disturbance"), "disturbance");
        s.read("start", cfg.disturbance.start);
        s.read("end", cfg.disturbance.end);
        s.read("noise_inflation", cfg.disturbance.noise_inflation);
        std::vector<double> force;
        if (s.has("step_force")) {
            s.read("step_force", force);
            cfg.disturbance.step_force = Eigen::Map<const Vector>(force.data(), static_cast<Eigen::Index>(force.size()));
        }
        s.finish();
    }
    if (top.has("cost")) {
        Section s(top.at("cost"), "cost");
        if (s.has("Q"))
            cfg.cost_Q = matrix_from_json(s.at("Q"), "cost.Q");
        if (s.has("R"))
            cfg.cost_R = matrix_from_json(s.at("R"), "cost.R");
        s.finish();
    }
    if (top.has("controllers")) {
        Section s(top.at("controllers"), "controllers");
        if (s.has("deepc"))
            controller_from_json(s.at("deepc"), cfg.deepc, "controllers.deepc");
        if (s.has("mdr"))
            controller_from_json(s.at("mdr"), cfg.mdr, "controllers.mdr");
        if (s.has("oracle"))
            controller_from_json(s.at("oracle"), cfg.oracle, "controllers.oracle");
        s.finish();
    }
    if (top.has("ambiguity")) {
        Section s(top.at("ambiguity"), "ambiguity");
        s.read("eps_w", cfg.mdr_settings.eps_w);
        s.read("eps_v", cfg.mdr_settings.eps_v);
        s.read("adapt_window", cfg.mdr_settings.adapt_window);
        s.finish();
    }
    if (top.has("oracle_kind")) {
        std::string kind;
        top.read("oracle_kind", kind);
        if (kind == "exact")
            cfg.oracle_kind = OracleKind::Exact;
        else if (kind == "hybrid")
            cfg.oracle_kind = OracleKind::Hybrid;
        else
            throw ConfigError("config: 'oracle_kind' must be \"exact\" or \"hybrid\"");
    }
    top.read("seeds", cfg.seeds);
    top.read("output_dir", cfg.output_dir);
    top.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg)
{
    return config_json(cfg, true).dump(2) + "\n";
}

std::string config_digest(const ExperimentConfig& cfg)
{
    const std::string text = config_json(cfg, false).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace mdr
