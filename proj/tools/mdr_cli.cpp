#include "mdr/bench.hpp"
#include "mdr/errors.hpp"
#include "text_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace mdr;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kExcitation = 2, kSolver = 3 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::string out;
};

ExperimentConfig load(const Common& c)
{
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig::defaults() : load_config(c.config_path);
    if (!c.out.empty())
        cfg.output_dir = c.out;
    cfg.validate();
    return cfg;
}

std::vector<std::uint64_t> selected_seeds(const Common& c, const ExperimentConfig& cfg)
{
    std::vector<std::uint64_t> s = c.seeds;
    if (c.seed)
        s.push_back(*c.seed);
    if (s.empty())
        s = cfg.seeds;
    if (s.empty())
        s.push_back(1);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("cannot open " + path.string() + " for writing");
    os << text;
}

std::string read_text(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int cmd_collect(const Common& c)
{
    const ExperimentConfig cfg = load(c);
    const std::uint64_t seed = c.seed ? *c.seed : selected_seeds(c, cfg).front();
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);

    const Eigen::Index order = required_pe_order(cfg);
    nlohmann::ordered_json report;
    report["seed"] = seed;
    report["T"] = cfg.T_data;
    report["amplitude"] = cfg.excitation_amplitude;
    report["pe_order"] = order;
    try {
        const OfflineData off = collect_offline(cfg, seed);
        const HankelMatrix h = build_hankel(off.data.u, order);
        report["hankel_rows"] = h.data.rows();
        report["hankel_columns"] = h.data.cols();
        report["rank"] = numerical_rank(h.data);
        report["persistently_exciting"] = true;
        write_signal_csv((dir / "u_d.csv").string(), off.data.u);
        write_signal_csv((dir / "y_u_d.csv").string(), off.data.y_u);
        write_text(dir / "pe_report.json", report.dump(2) + "\n");
    } catch (const ExcitationFailed& e) {
        report["persistently_exciting"] = false;
        report["message"] = e.what();
        write_text(dir / "pe_report.json", report.dump(2) + "\n");
        std::cerr << "persistency of excitation check failed: " << e.what() << '\n';
        return kExcitation;
    }
    std::cout << "wrote u_d.csv, y_u_d.csv and pe_report.json to " << dir.string() << '\n';
    return kOk;
}

struct SeedResult {
    RunRecord rec;
    std::exception_ptr error;
};

int cmd_run(const Common& c, const std::string& controller)
{
    const ExperimentConfig cfg = load(c);
    const std::vector<std::uint64_t> seeds = selected_seeds(c, cfg);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);

    // Seeds are independent; each worker takes the next one.
    std::vector<SeedResult> results(seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) {
            try {
                results[i].rec = run_experiment(cfg, controller, seeds[i]);
            } catch (...) {
                results[i].error = std::current_exception();
            }
        }
    };
    const std::size_t n_threads =
        std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, seeds.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    int code = kOk;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (results[i].error)
            std::rethrow_exception(results[i].error);
        const RunRecord& rec = results[i].rec;
        const std::string tag = controller + "_" + std::to_string(seeds[i]);
        write_run_csv((dir / ("run_" + tag + ".csv")).string(), rec);
        const MetricsReport m = compute_metrics(rec, cfg);
        write_text(dir / ("metrics_" + tag + ".json"), metrics_to_json(m, controller, seeds[i], rec.config_digest));
        std::cout << tag << ": total_cost " << m.total_cost << ", solver failures " << rec.solver_failures << "/"
                  << rec.solves << '\n';
        if (rec.solves > 0 && 2 * rec.solver_failures > rec.solves) {
            std::cerr << tag << ": solver failed on more than half of the steps\n";
            code = kSolver;
        }
    }
    return code;
}

std::string metrics_label(const nlohmann::json& j, const fs::path& path)
{
    if (j.contains("controller") && j.contains("seed"))
        return j["controller"].get<std::string>() + "_" + std::to_string(j["seed"].get<std::uint64_t>());
    return path.stem().string();
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::string& out)
{
    const std::string a = read_text(a_path), b = read_text(b_path);
    const std::string text = comparison_to_json(metrics_from_json(a), metrics_from_json(b),
                                                metrics_label(nlohmann::json::parse(a), a_path),
                                                metrics_label(nlohmann::json::parse(b), b_path));
    if (out.empty())
        std::cout << text;
    else
        write_text(out, text);
    return kOk;
}

int cmd_report(const Common& c, const std::string& run_dir)
{
    const ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig::defaults() : load_config(c.config_path);
    if (!fs::is_directory(run_dir))
        throw ConfigError("report: " + run_dir + " is not a directory");

    // (controller, seed) -> file, which also fixes the column order.
    std::map<std::pair<std::string, std::uint64_t>, fs::path> runs;
    const std::regex name(R"(run_([A-Za-z]+)_([0-9]+)\.csv)");
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        std::smatch m;
        const std::string file = entry.path().filename().string();
        if (entry.is_regular_file() && std::regex_match(file, m, name))
            runs[{m[1].str(), std::stoull(m[2].str())}] = entry.path();
    }
    if (runs.empty())
        throw ConfigError("report: no run_<controller>_<seed>.csv files in " + run_dir);

    std::vector<std::string> suffixes;
    std::vector<RunRecord> recs;
    for (const auto& [key, path] : runs) {
        recs.push_back(read_run_csv(path.string()));
        suffixes.push_back(key.first + "_" + std::to_string(key.second));
        if (recs.back().length() != recs.front().length())
            throw ConfigError("report: runs have different lengths");
    }

    std::ostringstream os;
    os << "step,disturbed";
    for (std::size_t i = 0; i < recs.size(); ++i) {
        for (const auto& [prefix, s] : {std::pair{"u", &recs[i].u}, {"y", &recs[i].y}, {"r", &recs[i].r}})
            for (Eigen::Index ch = 0; ch < s->dim(); ++ch)
                os << ',' << prefix << ch << '_' << suffixes[i];
        os << ",stage_cost_" << suffixes[i];
    }
    os << '\n';
    for (Eigen::Index k = 0; k < recs.front().length(); ++k) {
        os << k << ',' << (cfg.disturbance.active(k) ? 1 : 0);
        for (const auto& rec : recs) {
            for (const Signal* s : {&rec.u, &rec.y, &rec.r})
                for (Eigen::Index ch = 0; ch < s->dim(); ++ch)
                    os << ',' << detail::format_double(s->samples()(k, ch));
            os << ',' << detail::format_double(rec.stage_cost(k));
        }
        os << '\n';
    }
    const fs::path out = c.out.empty() ? fs::path(run_dir) / "report.csv" : fs::path(c.out);
    write_text(out, os.str());
    std::cout << "wrote " << out.string() << " (" << recs.size() << " runs)\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Data-driven predictive control benchmark on a three-mass spring-damper chain"};
    app.require_subcommand(1);

    Common common;
    std::string controller = "mdr";
    std::string compare_a, compare_b, run_dir;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON configuration (built-in defaults when omitted)")
            ->check(CLI::ExistingFile);
    };

    CLI::App* collect = app.add_subcommand("collect", "offline data collection with the excitation check");
    add_config(collect);
    collect->add_option("--seed", common.seed, "seed (default: first configured seed)");
    collect->add_option("--out", common.out, "output directory");

    CLI::App* run = app.add_subcommand("run", "closed-loop runs, one CSV and one metrics file per seed");
    add_config(run);
    run->add_option("--controller", controller, "deepc, mdr or oracle")
        ->check(CLI::IsMember({"deepc", "mdr", "oracle"}));
    run->add_option("--seed", common.seed, "single seed");
    run->add_option("--seeds", common.seeds, "comma-separated seed list (default: configured seeds)")
        ->delimiter(',');
    run->add_option("--out", common.out, "output directory");

    CLI::App* compare = app.add_subcommand("compare", "side-by-side metrics with improvement percentages");
    compare->add_option("base", compare_a, "metrics JSON of the base run")->required();
    compare->add_option("candidate", compare_b, "metrics JSON of the candidate run")->required();
    compare->add_option("--out", common.out, "write the comparison here instead of stdout");

    CLI::App* report = app.add_subcommand("report", "merge run CSVs into one plot-ready CSV");
    report->add_option("run_dir", run_dir, "directory holding run_<controller>_<seed>.csv files")->required();
    add_config(report);
    report->add_option("--out", common.out, "output file (default: <run_dir>/report.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) {
            std::cerr << app.help();
            return kUsage;
        }
        return kOk;
    }

    try {
        if (*collect)
            return cmd_collect(common);
        if (*run)
            return cmd_run(common, controller);
        if (*compare)
            return cmd_compare(compare_a, compare_b, common.out);
        if (*report)
            return cmd_report(common, run_dir);
    } catch (const ExcitationFailed& e) {
        std::cerr << "persistency of excitation check failed: " << e.what() << '\n';
        return kExcitation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
