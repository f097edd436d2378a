// Command-line front end: runs, the scenario matrix, the ideal baseline,
// report comparison and the operator service.
#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "driftguard/errors.hpp"
#include "driftguard/scenario.hpp"
#include "driftguard/service.hpp"

namespace fs = std::filesystem;
using namespace driftguard;
using namespace driftguard::scenario;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

ScenarioSpec resolve_spec(const std::string& path) {
    if (!path.empty()) return load_spec(path);
    if (const char* env = std::getenv("DRIFTGUARD_CONFIG"); env && *env) return load_spec(env);
    return ScenarioSpec{};
}

std::vector<Approach> resolve_approaches(const std::string& name, const ScenarioSpec& spec) {
    if (name != "all") return {approach_from_name(name)};
    std::vector<Approach> out;
    for (auto a : kAllApproaches)
        if (!(a == Approach::lsa_feedback && spec.mode != lifelong::OperatorMode::automated)) out.push_back(a);
    return out;
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << body;
}

void write_run(const RunReport& r, const fs::path& dir, const std::string& stem) {
    export_report(r, "csv", (dir / (stem + ".csv")).string());
    export_report(r, "json", (dir / (stem + ".json")).string());
    write_text(dir / (stem + "_series.csv"), series_csv(r));
}

void print_summary(const std::string& label, const RunReport& r) {
    std::printf("%-44s %-15s pre_rsm=%.3f drift_rsm=%.3f drift_utility=%.3f verifications=%zu\n", label.c_str(),
                r.approach.c_str(), r.summary.pre_drift_rsm, r.summary.drift_rsm, r.summary.drift_utility,
                r.summary.verifications);
}

std::string file_stem(const ScenarioSpec& s) {
    std::string out = (s.preference == lifelong::PreferenceOrder::pl_then_ec ? "pl_ec_" : "ec_pl_");
    for (char c : s.appearance.label())
        if (std::isalpha(static_cast<unsigned char>(c))) out += c;
        else if (c == ',') out += '-';
    return out + "_" + lifelong::mode_name(s.mode) + "_s" + std::to_string(s.seed);
}

int cmd_run(const std::string& scenario_path, const std::string& approach, std::optional<std::uint64_t> seed,
            std::optional<int> cycles, const std::string& out) {
    auto spec = resolve_spec(scenario_path);
    if (seed) spec.seed = *seed;
    if (cycles) spec.cycles = *cycles;
    if (spec.mode == lifelong::OperatorMode::human)
        throw InvalidInput("human operator mode needs the service; use 'serve'");
    if (spec.drift_start > spec.cycles)
        std::fprintf(stderr, "note: drift starts at cycle %d, after the last cycle; drift metrics will be empty\n",
                     spec.drift_start);
    fs::create_directories(out);
    const auto prepared = prepare(spec);
    for (auto a : resolve_approaches(approach, spec)) {
        const auto r = run(prepared, a);
        write_run(r, out, approach_name(a));
        print_summary(spec.label(), r);
    }
    return 0;
}

int cmd_matrix(const std::string& out, std::uint64_t seed) {
    fs::create_directories(out);
    std::string summary = "preference,appearance,operator,approach,pre_drift_rsm,drift_rsm,drift_utility\n";
    for (const auto& spec : scenario_matrix(resolve_spec("").config, seed)) {
        const auto prepared = prepare(spec);
        for (auto a : resolve_approaches("all", spec)) {
            const auto r = run(prepared, a);
            write_run(r, out, file_stem(spec) + "_" + approach_name(a));
            print_summary(spec.label(), r);
            char line[256];
            std::snprintf(line, sizeof line, "%s,\"%s\",%s,%s,%.6f,%.6f,%.6f\n",
                          lifelong::order_name(spec.preference).c_str(), spec.appearance.label().c_str(),
                          lifelong::mode_name(spec.mode).c_str(), approach_name(a).c_str(), r.summary.pre_drift_rsm,
                          r.summary.drift_rsm, r.summary.drift_utility);
            summary += line;
        }
    }
    write_text(fs::path(out) / "matrix_summary.csv", summary);
    return 0;
}

int cmd_baseline(const std::string& scenario_path, const std::string& out) {
    const auto spec = resolve_spec(scenario_path);
    const auto p = prepare(spec);
    nlohmann::json j{{"spec", to_json(spec)},
                     {"model", gmm::to_json(p.ideal.model)},
                     {"ranking", p.ideal.ranking},
                     {"ranked_classes", p.ideal.ranked_classes},
                     {"r_star", p.ideal.r_star}};
    if (out.empty() || out == "-") std::cout << j.dump(1) << "\n";
    else write_text(out, j.dump(1) + "\n");
    return 0;
}

int cmd_compare(const std::string& dir) {
    std::vector<RunReport> reports;
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        try {
            reports.push_back(load_report(p.string()));
        } catch (const InvalidInput&) {
            // Not a run report (for instance a baseline dump); skip it.
        }
    }
    if (reports.empty()) throw InvalidInput("no run reports in " + dir);
    std::printf("%-44s %-15s %8s %8s %8s\n", "scenario", "approach", "pre_rsm", "drift_rsm", "drift_u");
    std::map<std::string, std::vector<double>> pooled;
    for (const auto& r : reports) {
        const auto spec = spec_from_json(r.spec);
        std::printf("%-44s %-15s %8.3f %8.3f %8.3f\n", spec.label().c_str(), r.approach.c_str(),
                    r.summary.pre_drift_rsm, r.summary.drift_rsm, r.summary.drift_utility);
        auto u = drift_utilities(r, spec.drift_start);
        pooled[r.approach].insert(pooled[r.approach].end(), u.begin(), u.end());
    }
    const auto& a = pooled["lsa_feedback"];
    const auto& b = pooled["lsa_nofeedback"];
    if (!a.empty() && !b.empty()) {
        const auto mw = metrics::mann_whitney(a, b);
        std::printf("Mann-Whitney lsa_feedback vs lsa_nofeedback (drift window, pooled): U=%.1f CL=%.3f z=%.3f p=%.3g\n",
                    mw.u, mw.cl, mw.z, mw.p_two_sided);
    }
    return 0;
}

int cmd_serve(const std::string& scenario_path, int port, const std::string& host, const std::string& approach,
              int timeout_ms) {
    auto spec = resolve_spec(scenario_path);
    service::ServiceOptions opts;
    opts.host = host;
    opts.port = port;
    opts.feedback_timeout = std::chrono::milliseconds(timeout_ms);
    service::OperatorService svc(opts);
    const int bound = svc.listen();
    std::signal(SIGINT, [](int) { g_interrupted = 1; });
    std::signal(SIGTERM, [](int) { g_interrupted = 1; });
    svc.start_run(spec, approach_from_name(approach));
    std::fprintf(stderr, "operator service on http://%s:%d (%s, %s)\n", host.c_str(), bound, spec.label().c_str(),
                 approach.c_str());
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
    svc.shutdown();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DriftGuard: lifelong self-adaptation under drift of adaptation spaces"};
    app.require_subcommand(1);

    std::string scenario_path, approach = "all", out = "out";
    std::uint64_t seed_value = 1;
    int cycles_value = 350;

    auto* run_cmd = app.add_subcommand("run", "Run one scenario for one or all approaches");
    run_cmd->add_option("--scenario", scenario_path, "Scenario JSON (default: $DRIFTGUARD_CONFIG or built-in)");
    run_cmd->add_option("--approach", approach, "baseline, predefined, ml2asr, lsa_feedback, lsa_nofeedback or all");
    auto* seed_opt = run_cmd->add_option("--seed", seed_value, "Override the scenario seed");
    auto* cycles_opt = run_cmd->add_option("--cycles", cycles_value, "Override the cycle count")->check(CLI::PositiveNumber);
    run_cmd->add_option("--out", out, "Output directory");

    std::string matrix_out = "out/matrix";
    std::uint64_t matrix_seed = 1;
    auto* matrix_cmd = app.add_subcommand("matrix", "Run the 24-scenario matrix");
    matrix_cmd->add_option("--out", matrix_out, "Output directory");
    matrix_cmd->add_option("--seed", matrix_seed, "Seed for every scenario");

    std::string baseline_scenario, baseline_out = "-";
    auto* baseline_cmd = app.add_subcommand("baseline", "Dump the ideal classifier and per-cycle best ranks");
    baseline_cmd->add_option("--scenario", baseline_scenario, "Scenario JSON");
    baseline_cmd->add_option("--out", baseline_out, "Output file ('-' for stdout)");

    std::string compare_dir;
    auto* report_cmd = app.add_subcommand("report", "Compare saved run reports");
    report_cmd->add_option("--compare", compare_dir, "Directory of JSON run reports")->required();

    std::string serve_scenario, serve_host = "127.0.0.1", serve_approach = "lsa_feedback";
    int serve_port = 8080, serve_timeout = 0;
    auto* serve_cmd = app.add_subcommand("serve", "Run a scenario behind the operator HTTP API");
    serve_cmd->add_option("--scenario", serve_scenario, "Scenario JSON");
    serve_cmd->add_option("--port", serve_port, "Port (0 picks a free one)");
    serve_cmd->add_option("--host", serve_host, "Bind address");
    serve_cmd->add_option("--approach", serve_approach, "Approach to run");
    serve_cmd->add_option("--feedback-timeout", serve_timeout, "Milliseconds to wait for feedback (0 = forever)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd)
            return cmd_run(scenario_path, approach, *seed_opt ? std::optional(seed_value) : std::nullopt,
                           *cycles_opt ? std::optional(cycles_value) : std::nullopt, out);
        if (*matrix_cmd) return cmd_matrix(matrix_out, matrix_seed);
        if (*baseline_cmd) return cmd_baseline(baseline_scenario, baseline_out);
        if (*report_cmd) return cmd_compare(compare_dir);
        if (*serve_cmd) return cmd_serve(serve_scenario, serve_port, serve_host, serve_approach, serve_timeout);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
