#include "mdr/bench.hpp"
#include "mdr/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

using namespace mdr;

namespace {

RunRecord tracking_record(Eigen::Index T, double level = 1.0)
{
    RunRecord rec;
    rec.controller = "test";
    rec.u = Signal(Matrix::Zero(T, 3));
    rec.y = Signal(Matrix::Constant(T, 3, level));
    rec.r = Signal(Matrix::Constant(T, 3, level));
    rec.stage_cost = Vector::Zero(T);
    return rec;
}

// Small closed-loop setup so full runs stay quick.
ExperimentConfig short_config()
{
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.T_run = 25;
    cfg.seeds = {3};
    return cfg;
}

} // namespace

TEST(Metrics, PerfectTrackingIsZero)
{
    const RunRecord rec = tracking_record(40);
    const ExperimentConfig cfg = ExperimentConfig::defaults();
    const MetricsReport m = compute_metrics(rec, cfg);
    EXPECT_EQ(m.total_cost, 0.0);
    EXPECT_EQ(m.max_output_deviation, 0.0);
    EXPECT_EQ(m.settling_time_steps, 0);
    EXPECT_EQ(m.peak_to_peak, 0.0);
}

TEST(Metrics, TotalCostSumsRealizedStages)
{
    RunRecord rec = tracking_record(2);
    Matrix y = rec.y.samples();
    y(0, 0) = 2.0; // error 1 at each step
    y(1, 2) = 0.0;
    rec.y = Signal(y);
    EXPECT_DOUBLE_EQ(total_cost(rec, Matrix::Identity(3, 3), Matrix::Zero(3, 3)), 2.0);

    Matrix u = Matrix::Zero(2, 3);
    u(1, 1) = 3.0;
    rec.u = Signal(u);
    const Matrix R = 0.5 * Matrix::Identity(3, 3);
    EXPECT_DOUBLE_EQ(total_cost(rec, Matrix::Identity(3, 3), R), 2.0 + 4.5);
    EXPECT_DOUBLE_EQ(total_cost(rec, 2.0 * Matrix::Identity(3, 3), R), 4.0 + 4.5);
}

TEST(Metrics, SpikeDeviation)
{
    RunRecord rec = tracking_record(30);
    Matrix y = rec.y.samples();
    y(17, 1) -= 0.3;
    rec.y = Signal(y);
    EXPECT_NEAR(max_output_deviation(rec), 0.3, 1e-15);
}

TEST(Metrics, SettlingTimeIsStepAfterLastViolation)
{
    RunRecord rec = tracking_record(50, 2.0);
    Matrix y = rec.y.samples();
    y(10, 0) = 2.0 + 0.11; // outside a 5% band of 2
    y(30, 2) = 2.0 - 0.099; // inside
    rec.y = Signal(y);
    EXPECT_EQ(settling_time(rec), 11);
    y(49, 1) = 2.5;
    rec.y = Signal(y);
    EXPECT_EQ(settling_time(rec), 50);
    EXPECT_EQ(settling_time(rec, 0.3), 0);
    EXPECT_THROW(settling_time(rec, 0.0), Error);

    // Zero reference uses the floor 1e-6 for the band.
    RunRecord zero = tracking_record(5, 0.0);
    Matrix yz = zero.y.samples();
    yz(2, 0) = 1e-7;
    zero.y = Signal(yz);
    EXPECT_EQ(settling_time(zero), 3);
}

TEST(Metrics, IdenticalTrajectoriesSettleTogether)
{
    RunRecord a = tracking_record(40);
    Matrix y = a.y.samples();
    for (Eigen::Index k = 0; k < 40; ++k)
        y.row(k).array() += std::exp(-0.2 * static_cast<double>(k));
    a.y = Signal(y);
    RunRecord b = a;
    b.controller = "other";
    EXPECT_EQ(settling_time(a), settling_time(b));
}

TEST(Metrics, PeakToPeakOfSampledSine)
{
    const double a = 0.7;
    const Eigen::Index T = 2000;
    const double omega = 2.0 * std::numbers::pi / 400.0;
    RunRecord rec = tracking_record(T);
    Matrix y = Matrix::Zero(T, 3);
    double hi = -1e300, lo = 1e300;
    for (Eigen::Index k = 0; k < T; ++k) {
        const double v = a * std::sin(omega * static_cast<double>(k) + 0.1);
        y(k, 1) = v;
        if (k >= 5) {
            hi = std::max(hi, v);
            lo = std::min(lo, v);
        }
    }
    rec.y = Signal(y);
    // Dense sampling: each extreme is within half a sample of the true peak.
    const double disc = a * (1.0 - std::cos(0.5 * omega));
    EXPECT_NEAR(peak_to_peak(rec, 5), 2.0 * a, 2.0 * disc + 1e-12);
    EXPECT_DOUBLE_EQ(peak_to_peak(rec, 5), hi - lo);
}

TEST(Metrics, PeakToPeakStartsAtDisturbanceOnset)
{
    RunRecord rec = tracking_record(20);
    Matrix y = rec.y.samples();
    y(2, 0) = 10.0; // before onset, ignored
    y(8, 2) = 1.4;
    rec.y = Signal(y);
    EXPECT_NEAR(peak_to_peak(rec, 5), 0.4, 1e-15);
    EXPECT_NEAR(peak_to_peak(rec, 0), 9.0, 1e-15);
    EXPECT_EQ(peak_to_peak(rec, 20), 0.0);
    ExperimentConfig cfg = ExperimentConfig::defaults();
    EXPECT_NEAR(compute_metrics(rec, cfg).peak_to_peak, 0.4, 1e-15);
}

TEST(Metrics, ImprovementValues)
{
    EXPECT_EQ(improvement_rounded(1152.6538, 475.5094), 58.75);
    EXPECT_EQ(improvement_rounded(7.7705, 5.1638), 33.55);
    EXPECT_EQ(improvement_rounded(3.2005, 2.3289), 27.23);
    EXPECT_NEAR(improvement(1152.6538, 475.5094), 100.0 * (1152.6538 - 475.5094) / 1152.6538, 1e-12);
    for (double a : {1e-9, 0.5, 3.0, 1e6})
        EXPECT_EQ(improvement(a, a), 0.0);
    EXPECT_EQ(improvement(2.0, 3.0), -50.0);
    EXPECT_THROW(improvement(0.0, 1.0), NonPositiveBase);
    EXPECT_THROW(improvement(-1.0, 1.0), NonPositiveBase);
}

TEST(RunCsv, RoundTripIsByteExact)
{
    RunRecord rec = tracking_record(6);
    Matrix u(6, 3);
    for (Eigen::Index i = 0; i < u.size(); ++i)
        u.data()[i] = std::sin(1.3 * static_cast<double>(i)) * 1e3 / 7.0;
    rec.u = Signal(u);
    Matrix y = rec.y.samples();
    y(4, 1) = 1.0 / 3.0;
    y(0, 0) = -2.5e-17;
    rec.y = Signal(y);
    rec.stage_cost = Vector::LinSpaced(6, 0.1, 0.7);

    std::ostringstream a;
    write_run_csv(a, rec);
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "step,u0,u1,u2,y0,y1,y2,r0,r1,r2,stage_cost");
    std::istringstream in(a.str());
    const RunRecord back = read_run_csv(in);
    EXPECT_EQ(back.u.samples(), rec.u.samples());
    EXPECT_EQ(back.y.samples(), rec.y.samples());
    EXPECT_EQ(back.r.samples(), rec.r.samples());
    EXPECT_EQ(back.stage_cost, rec.stage_cost);
    std::ostringstream b;
    write_run_csv(b, back);
    EXPECT_EQ(a.str(), b.str());
}

TEST(RunCsv, RejectsMalformedInput)
{
    std::istringstream empty("");
    EXPECT_THROW(read_run_csv(empty), Error);
    std::istringstream bad_header("step,u0,y0,stage\n0,1,2,3\n");
    EXPECT_THROW(read_run_csv(bad_header), Error);
    std::istringstream short_row("step,u0,y0,r0,stage_cost\n0,1,2\n");
    EXPECT_THROW(read_run_csv(short_row), DimensionMismatch);
    std::istringstream bad_num("step,u0,y0,r0,stage_cost\n0,1,x,3,4\n");
    EXPECT_THROW(read_run_csv(bad_num), Error);
}

TEST(MetricsJson, RoundTripAndComparison)
{
    MetricsReport m{1152.6538, 7.7705, 25, 3.2005};
    const std::string text = metrics_to_json(m, "deepc", 4, "0123456789abcdef");
    for (const char* key : {"total_cost", "max_output_deviation", "settling_time_steps", "peak_to_peak"})
        EXPECT_NE(text.find(key), std::string::npos) << key;
    const MetricsReport back = metrics_from_json(text);
    EXPECT_EQ(back.total_cost, m.total_cost);
    EXPECT_EQ(back.max_output_deviation, m.max_output_deviation);
    EXPECT_EQ(back.settling_time_steps, m.settling_time_steps);
    EXPECT_EQ(back.peak_to_peak, m.peak_to_peak);
    EXPECT_THROW(metrics_from_json("{\"total_cost\": 1}"), Error);
    EXPECT_THROW(metrics_from_json("not json"), Error);

    const MetricsReport c{475.5094, 5.1638, 25, 2.3289};
    const std::string cmp = comparison_to_json(m, c, "deepc", "mdr");
    EXPECT_NE(cmp.find("improvement_pct"), std::string::npos);
    EXPECT_NE(cmp.find("58.75"), std::string::npos);
    EXPECT_NE(cmp.find("33.55"), std::string::npos);
}

TEST(Config, DefaultsRoundTrip)
{
    const ExperimentConfig cfg = ExperimentConfig::defaults();
    EXPECT_NO_THROW(cfg.validate());
    const ExperimentConfig back = parse_config(config_to_json(cfg));
    EXPECT_EQ(config_to_json(back), config_to_json(cfg));
    EXPECT_EQ(config_digest(back), config_digest(cfg));
    EXPECT_EQ(config_digest(cfg).size(), 16u);
    EXPECT_EQ(back.seeds.size(), 10u);
    EXPECT_EQ(back.mdr.T_ini, 4);
    EXPECT_EQ(back.mdr.N, 20);
    EXPECT_EQ(back.mdr.M, 5);
    EXPECT_EQ(back.T_data, 150);
}

TEST(Config, MinimalDocumentKeepsDefaults)
{
    const ExperimentConfig cfg = parse_config("{\"schema_version\": 1}");
    EXPECT_EQ(config_digest(cfg), config_digest(ExperimentConfig::defaults()));
    const ExperimentConfig c2 =
        parse_config(R"({"schema_version": 1, "controllers": {"mdr": {"M": 7, "Q": [2, 2, 2]}}, "seeds": [5, 9]})");
    EXPECT_EQ(c2.mdr.M, 7);
    EXPECT_EQ(c2.mdr.Q, 2.0 * Matrix::Identity(3, 3));
    EXPECT_EQ(c2.deepc.M, 5);
    EXPECT_EQ(c2.seeds, (std::vector<std::uint64_t>{5, 9}));
    EXPECT_NE(config_digest(c2), config_digest(cfg));
}

TEST(Config, StrictParsing)
{
    EXPECT_THROW(parse_config("{}"), ConfigError);
    EXPECT_THROW(parse_config("{\"schema_version\": 2}"), ConfigError);
    EXPECT_THROW(parse_config("{\"schema_version\": 1, \"bogus\": 0}"), ConfigError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "controllers": {"mdr": {"Tini": 4}}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "noise": {"sigma_w": "high"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "controllers": {"deepc": {"N": 0}}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "oracle_kind": "magic"})"), ConfigError);
    EXPECT_THROW(parse_config("{\"schema_version\": 1,"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, DigestIgnoresOutputDirectory)
{
    ExperimentConfig a = ExperimentConfig::defaults();
    ExperimentConfig b = a;
    b.output_dir = "elsewhere";
    EXPECT_EQ(config_digest(a), config_digest(b));
    b.noise.sigma_w = 0.2;
    EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(Seeds, DerivedStreamsAreDistinct)
{
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 20; ++s)
        for (std::uint64_t k = 0; k < 6; ++k)
            seen.insert(derive_seed(s, k));
    EXPECT_EQ(seen.size(), 120u);
    EXPECT_EQ(derive_seed(7, 2), derive_seed(7, 2));
}

TEST(Offline, TruthInBoxAndDataLengths)
{
    const ExperimentConfig cfg = ExperimentConfig::defaults();
    const OfflineData off = collect_offline(cfg, 2);
    EXPECT_GE(off.truth.k3, 80.0);
    EXPECT_LE(off.truth.k3, 120.0);
    EXPECT_GE(off.truth.c3, 3.0);
    EXPECT_LE(off.truth.c3, 7.0);
    EXPECT_EQ(off.data.u.length(), 150);
    EXPECT_EQ(off.data.y_u.length(), 150);
    EXPECT_EQ(off.data.y_u.dim(), 1);
    ExperimentConfig dead = cfg;
    dead.excitation_amplitude = 0.0;
    EXPECT_THROW(collect_offline(dead, 2), ExcitationFailed);
}

TEST(Run, DeterministicRecordsWithDisturbanceMask)
{
    const ExperimentConfig cfg = short_config();
    for (const char* id : {"deepc", "mdr", "oracle"}) {
        const RunRecord a = run_experiment(cfg, id, 3);
        const RunRecord b = run_experiment(cfg, id, 3);
        std::ostringstream sa, sb;
        write_run_csv(sa, a);
        write_run_csv(sb, b);
        EXPECT_EQ(sa.str(), sb.str()) << id;
        EXPECT_EQ(a.length(), cfg.T_run);
        EXPECT_EQ(a.solver_failures, 0) << id;
        EXPECT_EQ(a.config_digest, config_digest(cfg));
        for (Eigen::Index k = 0; k < a.length(); ++k)
            EXPECT_EQ(a.disturbed[static_cast<std::size_t>(k)], k >= 5 && k <= 15) << k;
        // Stage costs agree with the metric recomputation.
        EXPECT_NEAR(a.stage_cost.sum(), total_cost(a, cfg.cost_Q, cfg.cost_R), 1e-9 * (1.0 + a.stage_cost.sum()));
    }
    EXPECT_THROW(run_experiment(cfg, "pid", 3), ConfigError);
}

TEST(Run, ControllersShareThePlantNoise)
{
    ExperimentConfig cfg = short_config();
    cfg.T_run = 16;
    const RunRecord d = run_experiment(cfg, "deepc", 3);
    const RunRecord m = run_experiment(cfg, "mdr", 3);
    // Both are in warm-up with zero input for the first T_ini steps, so the outputs coincide there.
    for (Eigen::Index k = 0; k < cfg.mdr.T_ini; ++k)
        EXPECT_EQ(d.y.at(k), m.y.at(k)) << k;
}
