#pragma once

#include "mdr/ambiguity.hpp"
#include "mdr/controllers.hpp"
#include "mdr/plant.hpp"
#include "mdr/trajkit.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mdr {

/// Extra disturbance applied on steps [start, end] inclusive.
struct DisturbanceSpec {
    Eigen::Index start = 5;
    Eigen::Index end = 15;
    double noise_inflation = 10.0;
    Vector step_force = Vector::Unit(3, 2); ///< added to the plant input (one entry per mass)

    bool active(Eigen::Index k) const { return k >= start && k <= end; }
};

/// Settings of the scenario controller beyond the shared controller configuration.
struct MdrSettings {
    double eps_w = 0.01;
    double eps_v = 0.001;
    Eigen::Index adapt_window = 0;
};

struct ExperimentConfig {
    MsdParams nominal;
    ThetaBox theta_box;
    NoiseSpec noise{0.1, 0.01};
    double Ts = 0.1;
    Eigen::Index T_data = 150;
    double excitation_amplitude = 1.0;
    Eigen::Index T_run = 150;
    double reference_level = 1.0;
    DisturbanceSpec disturbance;
    ControllerConfig deepc;
    ControllerConfig mdr;
    ControllerConfig oracle;
    MdrSettings mdr_settings;
    OracleKind oracle_kind = OracleKind::Exact;
    Matrix cost_Q; ///< weights of the realized stage cost
    Matrix cost_R;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out"; ///< used by the command-line tool; not part of the digest

    /// Defaults for every field: T_ini = 4, N = 20, M = 5, ten seeds.
    static ExperimentConfig defaults();
    void validate() const;
};

struct RunRecord {
    std::string controller;
    std::uint64_t seed = 0;
    std::string config_digest;
    Signal u, y, r;
    Vector stage_cost;
    std::vector<bool> disturbed;
    int solves = 0;
    int solver_failures = 0;
    MsdParams truth;

    Eigen::Index length() const { return u.length(); }
    void validate() const;
};

struct MetricsReport {
    double total_cost = 0.0;
    double max_output_deviation = 0.0;
    Eigen::Index settling_time_steps = 0;
    double peak_to_peak = 0.0;
};

/// Sum over the run of ||y_k - r_k||_Q^2 + ||u_k||_R^2.
double total_cost(const RunRecord& rec, const Matrix& Q, const Matrix& R);
double max_output_deviation(const RunRecord& rec);
/// First step after which every later |y - r| is within band_fraction * max(|r|, 1e-6) on all channels;
/// the record length when that never happens.
Eigen::Index settling_time(const RunRecord& rec, double band_fraction = 0.05);
/// Largest per-channel output range from step `from` onward.
double peak_to_peak(const RunRecord& rec, Eigen::Index from);
/// Percentage reduction of `candidate` relative to `base`; throws NonPositiveBase when base <= 0.
double improvement(double base, double candidate);
/// Percentage rounded to two decimals, as reported.
double improvement_rounded(double base, double candidate);

MetricsReport compute_metrics(const RunRecord& rec, const ExperimentConfig& cfg);

/// Offline data for one seed. The plant parameters are drawn from the box per seed.
struct OfflineData {
    MsdParams truth;
    DiscreteLTI plant; ///< hybrid state order
    HybridPartition partition;
    CollectedData data;
};

/// Order at which the offline input is checked: the deepest Hankel of any controller plus n_u.
Eigen::Index required_pe_order(const ExperimentConfig& cfg);

OfflineData collect_offline(const ExperimentConfig& cfg, std::uint64_t seed);

/// Closed-loop run of "deepc", "mdr" or "oracle". Pure function of (cfg, controller, seed).
RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& controller, std::uint64_t seed);
RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& controller, std::uint64_t seed,
                         const OfflineData& offline);

/// Derived stream seeds so data, plant noise and scenarios never share a generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// CSV: `step,u0..u2,y0..y2,r0..r2,stage_cost`.
void write_run_csv(std::ostream& os, const RunRecord& rec);
void write_run_csv(const std::string& path, const RunRecord& rec);
RunRecord read_run_csv(std::istream& is);
RunRecord read_run_csv(const std::string& path);

// JSON with keys total_cost, max_output_deviation, settling_time_steps, peak_to_peak.
std::string metrics_to_json(const MetricsReport& m, const std::string& controller, std::uint64_t seed,
                            const std::string& digest);
MetricsReport metrics_from_json(const std::string& text);

/// Side-by-side metrics with improvement_pct of `candidate` over `base`.
std::string comparison_to_json(const MetricsReport& base, const MetricsReport& candidate,
                               const std::string& base_label, const std::string& candidate_label);

/// Strict configuration document: schema_version must match, unknown keys are rejected, omitted keys keep
/// their defaults. Throws ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a over the canonical JSON form, as 16 hex digits.
std::string config_digest(const ExperimentConfig& cfg);

inline constexpr int kConfigSchemaVersion = 1;

} // namespace mdr
