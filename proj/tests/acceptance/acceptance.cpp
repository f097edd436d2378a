// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <Eigen/LU>

#include "driftguard/gmm.hpp"
#include "driftguard/mapek.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/network.hpp"
#include "driftguard/scenario.hpp"

using namespace driftguard;
using Clock = std::chrono::steady_clock;

namespace {

int g_failed = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void verdict(bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failed;
}

void info(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void info(const char* fmt, ...) {
    std::printf("    ");
    va_list ap;
    va_start(ap, fmt);
    std::vprintf(fmt, ap);
    va_end(ap);
    std::printf("\n");
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

void adaptation_space() {
    const auto topo = sim::Topology::delta_iot();
    const auto t0 = Clock::now();
    const auto opts = sim::enumerate_options(topo);
    const double ms = seconds_since(t0) * 1e3;
    std::set<int> ids;
    std::set<std::vector<int>> splits;
    for (const auto& o : opts) {
        ids.insert(o.id);
        splits.insert(std::vector<int>(o.split.begin(), o.split.end()));
    }
    const bool ok = opts.size() == 1296 && ids.size() == 1296 && splits.size() == 1296 && ms < 1.0;
    verdict(ok, "adaptation space",
            fmt("%zu options, %zu distinct ids, %zu distinct split vectors, %.3f ms (need 1296, < 1 ms)", opts.size(),
                ids.size(), splits.size(), ms));
}

// Centers at least `sep` apart, drawn by rejection inside a square.
std::vector<gmm::Point> separated_centers(std::mt19937_64& rng, int k, double sep, double span) {
    std::uniform_real_distribution<double> u(0.0, span);
    std::vector<gmm::Point> c;
    while (static_cast<int>(c.size()) < k) {
        const gmm::Point p(u(rng), u(rng));
        bool ok = true;
        for (const auto& q : c) ok = ok && (p - q).norm() >= sep;
        if (ok) c.push_back(p);
    }
    return c;
}

void gmm_recovery() {
    const double sd = 1.0;
    int recovered = 0;
    double fit_seconds = 0.0;
    for (int run = 0; run < 20; ++run) {
        std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(run));
        const auto centers = separated_centers(rng, 2, 6.0 * sd, 12.0);
        std::uniform_real_distribution<double> wdist(0.3, 0.7);
        const double w0 = wdist(rng);
        std::bernoulli_distribution first(w0);
        std::normal_distribution<double> z;
        std::vector<gmm::Point> pts;
        int n0 = 0;
        for (int i = 0; i < 500; ++i) {
            const bool a = first(rng);
            n0 += a;
            const auto& c = centers[a ? 0 : 1];
            pts.emplace_back(c[0] + sd * z(rng), c[1] + sd * z(rng));
        }
        const double true_w0 = n0 / 500.0;
        const auto t0 = Clock::now();
        const auto m = gmm::fit_gmm(pts, 2, 77 + static_cast<std::uint64_t>(run));
        fit_seconds += seconds_since(t0);
        // Match components to the truth by the cheaper assignment.
        const auto& a = m.components[0];
        const auto& b = m.components[1];
        const double straight = (a.mean - centers[0]).norm() + (b.mean - centers[1]).norm();
        const double swapped = (a.mean - centers[1]).norm() + (b.mean - centers[0]).norm();
        const auto& c0 = straight <= swapped ? a : b;
        const auto& c1 = straight <= swapped ? b : a;
        const bool ok = (c0.mean - centers[0]).norm() <= 0.5 * sd && (c1.mean - centers[1]).norm() <= 0.5 * sd &&
                        std::abs(c0.weight - true_w0) <= 0.1 && std::abs(c1.weight - (1.0 - true_w0)) <= 0.1;
        recovered += ok;
    }
    verdict(recovered >= 19 && fit_seconds < 1.0, "GMM recovery",
            fmt("%d/20 datasets recovered (means within 0.5 sd, weights within 0.1), %.3f s fitting (need >= 19, < 1 s)",
                recovered, fit_seconds));
}

void count_selection() {
    const double sd = 1.0;
    int correct = 0;
    std::map<int, int> per_k;
    double secs = 0.0;
    for (int run = 0; run < 50; ++run) {
        const int k = 1 + run % 5;
        std::mt19937_64 rng(5000 + static_cast<std::uint64_t>(run));
        const auto centers = separated_centers(rng, k, 6.0 * sd, 30.0);
        std::normal_distribution<double> z;
        std::vector<gmm::Point> pts;
        for (int i = 0; i < 500; ++i) {
            const auto& c = centers[static_cast<std::size_t>(i % k)];
            pts.emplace_back(c[0] + sd * z(rng), c[1] + sd * z(rng));
        }
        const auto t0 = Clock::now();
        const int got = gmm::select_component_count(pts, 5, 31 + static_cast<std::uint64_t>(run));
        secs += seconds_since(t0);
        if (got == k) {
            ++correct;
            ++per_k[k];
        }
    }
    verdict(correct >= 45 && secs < 10.0, "component-count selection",
            fmt("%d/50 correct (k=1..5: %d,%d,%d,%d,%d of 10), %.2f s (need >= 90%%, < 10 s)", correct, per_k[1],
                per_k[2], per_k[3], per_k[4], per_k[5], secs));
}

void outlier_equivalence() {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    gmm::GmmModel model;
    for (int i = 0; i < 4; ++i) {
        gmm::GaussianComponent c;
        c.mean = gmm::Point(20.0 * u01(rng), 20.0 * u01(rng));
        Eigen::Matrix2d a;
        a << 0.5 + 2.0 * u01(rng), u01(rng) - 0.5, u01(rng) - 0.5, 0.5 + 2.0 * u01(rng);
        c.cov = a * a.transpose();
        c.weight = 0.25;
        c.class_id = i;
        model.components.push_back(c);
    }
    int agree = 0, outliers = 0;
    for (int i = 0; i < 10000; ++i) {
        const gmm::Point p(-10.0 + 40.0 * u01(rng), -10.0 + 40.0 * u01(rng));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : model.components) {
            const gmm::Point d = p - c.mean;
            best = std::min(best, std::sqrt(d.dot(c.cov.inverse() * d)));
        }
        const bool brute = best > 3.7169;
        const bool lib = gmm::is_out_of_class(model, p);
        agree += brute == lib;
        outliers += brute;
    }
    verdict(agree == 10000, "outlier equivalence",
            fmt("%d/10000 points agree with min-Mahalanobis > 3.7169 (%d outliers in the sample)", agree, outliers));
}

struct CountingVerifier : mapek::Verifier {
    const sim::NetworkModel* net = nullptr;
    const sim::PowerSettings* power = nullptr;
    const sim::RegimeView* view = nullptr;
    std::uint64_t digest = 0;
    std::multiset<std::pair<std::uint64_t, int>> keys;
    sim::QualityPoint verify(const sim::UncertaintySample& u, const sim::AdaptationOption& o) override {
        keys.insert({digest, o.id});
        return net->verify(u, *power, o, *view);
    }
};

void algorithm1_oracle(const scenario::Prepared& p) {
    mapek::KnowledgeBase kb;
    kb.install(p.ideal.model, {p.ideal.ranking});
    mapek::AnalysisConfig cfg;
    cfg.counter_threshold = mapek::kUnboundedCounter;
    CountingVerifier v;
    v.net = p.net.get();

    std::mt19937_64 pick(2024);
    int rank_ok = 0, once_ok = 0;
    const int n = 100;
    for (int k = 0; k < n; ++k) {
        const int cycle = 1 + static_cast<int>(pick() % static_cast<std::uint64_t>(p.spec.cycles));
        const auto i = static_cast<std::size_t>(cycle - 1);
        v.power = &p.power[i];
        v.view = &p.views[i];
        v.digest = mapek::uncertainty_digest(p.uncs[i]);
        v.keys.clear();

        // Brute force over the archived qualities of every option.
        int best = 0;
        for (const auto& q : p.archive.cycles[i].quality) {
            const auto c = gmm::classify(kb.classifier, q.as_point());
            if (c.membership <= mapek::kProbThreshold) continue;
            const int r = kb.preference.rank_of(c.class_id);
            if (r != 0 && (best == 0 || r < best)) best = r;
        }
        std::mt19937_64 rng(sim::derive_seed(p.spec.seed, static_cast<std::uint64_t>(cycle) + 7777, sim::kAnalysis));
        const auto res = mapek::analyse(kb, p.net->options(), p.uncs[i], cycle, rng, v, cfg);
        rank_ok += best != 0 && !res.fallback && res.rank == best;

        // A second pass in another order may verify options the first one never
        // reached, but never one it already verified; replaying the first order
        // must be served entirely by the cache.
        std::mt19937_64 other(sim::derive_seed(p.spec.seed, static_cast<std::uint64_t>(cycle) + 9999, sim::kAnalysis));
        mapek::analyse(kb, p.net->options(), p.uncs[i], cycle, other, v, cfg);
        std::mt19937_64 replay(sim::derive_seed(p.spec.seed, static_cast<std::uint64_t>(cycle) + 7777, sim::kAnalysis));
        const auto before = v.keys.size();
        const auto res2 = mapek::analyse(kb, p.net->options(), p.uncs[i], cycle, replay, v, cfg);
        bool once = v.keys.size() == before && res2.verifications == 0 && res2.option_id == res.option_id;
        for (const auto& key : v.keys) once = once && v.keys.count(key) == 1;
        once_ok += once;
    }
    verdict(rank_ok == n && once_ok == n, "Algorithm 1 oracle equivalence",
            fmt("rank equals brute-force best on %d/%d cycles, verify-once on %d/%d", rank_ok, n, once_ok, n));
}

void rsm_units() {
    metrics::RsmInput identity{{1, 2, 3, 1}, {1, 2, 3, 1}, 3};
    metrics::RsmInput worst{{4, 4, 4}, {1, 1, 1}, 4};
    metrics::RsmInput hand{{3, 2}, {1, 1}, 3};
    const double a = metrics::rsm(identity), b = metrics::rsm(worst), c = metrics::rsm(hand);
    verdict(a == 0.0 && b == 1.0 && c == 0.75, "RSM unit values",
            fmt("identity %.17g, maximal displacement %.17g, [3,2] vs [1,1] m=3 -> %.17g (need 0, 1, 0.75)", a, b, c));
}

void base_scenario() {
    std::vector<double> pre_rsm, lsa_rsm, pre_u, lsa_u;
    double worst_pre_drift = 0.0, slowest = 0.0;
    std::string worst_name;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto t0 = Clock::now();
        scenario::ScenarioSpec s;
        s.seed = seed;
        const auto p = scenario::prepare(s);
        std::map<scenario::Approach, scenario::RunReport> runs;
        for (auto a : scenario::kAllApproaches) runs.emplace(a, scenario::run(p, a));
        const double secs = seconds_since(t0);
        slowest = std::max(slowest, secs);
        const auto& pr = runs.at(scenario::Approach::predefined).summary;
        const auto& ls = runs.at(scenario::Approach::lsa_feedback).summary;
        pre_rsm.push_back(pr.drift_rsm);
        lsa_rsm.push_back(ls.drift_rsm);
        pre_u.push_back(pr.drift_utility);
        lsa_u.push_back(ls.drift_utility);
        for (const auto& [a, r] : runs)
            if (r.summary.pre_drift_rsm > worst_pre_drift) {
                worst_pre_drift = r.summary.pre_drift_rsm;
                worst_name = r.approach + " seed " + std::to_string(seed);
            }
        info("seed %llu: drift RSM predefined %.3f lsa_feedback %.3f | drift utility predefined %.3f lsa_feedback "
             "%.3f baseline %.3f | %.1f s",
             static_cast<unsigned long long>(seed), pr.drift_rsm, ls.drift_rsm, pr.drift_utility, ls.drift_utility,
             runs.at(scenario::Approach::baseline).summary.drift_utility, secs);
    }
    const double m_pre = mean(pre_rsm), m_lsa = mean(lsa_rsm), du = mean(lsa_u) - mean(pre_u);
    const bool ok = m_pre >= 0.30 && m_lsa <= 0.15 && du >= 0.10 && worst_pre_drift <= 0.05 && slowest <= 300.0;
    verdict(ok, "base-scenario directional reproduction",
            fmt("5-seed means: drift RSM predefined %.3f (>= 0.30), lsa_feedback %.3f (<= 0.15); utility gain %.3f "
                "(>= 0.10); worst pre-drift RSM %.3f [%s] (<= 0.05); slowest seed %.1f s (<= 300 s)",
                m_pre, m_lsa, du, worst_pre_drift, worst_name.c_str(), slowest));
}

// Labels that appear during the drift window but never during training, and
// that the ideal ranking puts ahead of every label seen in training.
bool has_preferred_novel_class(const scenario::Prepared& p) {
    std::set<int> trained, drift;
    for (int c = 1; c <= p.spec.cycles; ++c) {
        const auto& labels = p.archive.cycles[static_cast<std::size_t>(c - 1)].label;
        auto& into = c <= p.training_cycles ? trained : drift;
        if (c > p.training_cycles && c < p.spec.drift_start) continue;
        into.insert(labels.begin(), labels.end());
    }
    int best_trained = std::numeric_limits<int>::max();
    for (int l : trained) best_trained = std::min(best_trained, p.ideal.rank_of_label(l));
    for (int l : drift)
        if (!trained.count(l) && p.ideal.rank_of_label(l) < best_trained) return true;
    return false;
}

struct MatrixOutcome {
    std::vector<double> pooled_feedback, pooled_nofeedback;
    std::vector<double> base_feedback, base_nofeedback;
};

MatrixOutcome robustness_matrix() {
    MatrixOutcome out;
    const auto t0 = Clock::now();
    int novel = 0, novel_ok = 0, active = 0, near_ideal = 0, any_new = 0, any_new_ok = 0;
    // Inactive twins share everything but the operator flag, so their runs are keyed by label.
    std::map<std::string, scenario::RunReport> nofeedback;
    for (const auto& spec : scenario::scenario_matrix()) {
        if (spec.mode != lifelong::OperatorMode::inactive) continue;
        nofeedback.emplace(lifelong::order_name(spec.preference) + spec.appearance.label(),
                           scenario::run(scenario::prepare(spec), scenario::Approach::lsa_nofeedback));
    }
    for (const auto& spec : scenario::scenario_matrix()) {
        if (spec.mode != lifelong::OperatorMode::automated) continue;
        const auto p = scenario::prepare(spec);
        const auto pre = scenario::run(p, scenario::Approach::predefined);
        const auto base = scenario::run(p, scenario::Approach::baseline);
        const auto lsa = scenario::run(p, scenario::Approach::lsa_feedback);
        const auto& nof = nofeedback.at(lifelong::order_name(spec.preference) + spec.appearance.label());
        ++active;
        const bool close = std::abs(lsa.summary.drift_utility - base.summary.drift_utility) <= 0.05;
        near_ideal += close;
        const bool preferred_novel = has_preferred_novel_class(p);
        const bool not_worse = lsa.summary.drift_utility >= pre.summary.drift_utility;
        if (preferred_novel) {
            ++novel;
            novel_ok += not_worse;
        }
        ++any_new;
        any_new_ok += not_worse;
        info("%-34s utility predefined %.3f lsa_feedback %.3f baseline %.3f lsa_nofeedback %.3f | novel-preferred %s",
             (lifelong::order_name(spec.preference) + " " + spec.appearance.label()).c_str(),
             pre.summary.drift_utility, lsa.summary.drift_utility, base.summary.drift_utility,
             nof.summary.drift_utility, preferred_novel ? "yes" : "no");
        const auto a = scenario::drift_utilities(lsa, spec.drift_start);
        const auto b = scenario::drift_utilities(nof, spec.drift_start);
        out.pooled_feedback.insert(out.pooled_feedback.end(), a.begin(), a.end());
        out.pooled_nofeedback.insert(out.pooled_nofeedback.end(), b.begin(), b.end());
        if (spec.preference == lifelong::PreferenceOrder::pl_then_ec && spec.appearance.label() == "(B),R,G") {
            out.base_feedback = a;
            out.base_nofeedback = b;
        }
    }
    const double secs = seconds_since(t0);
    info("lsa_feedback >= predefined in %d/%d scenarios counting every new class", any_new_ok, any_new);
    verdict(novel_ok == novel && near_ideal >= 10 && secs <= 3600.0, "robustness matrix",
            fmt("lsa_feedback >= predefined in %d/%d scenarios with a preferred novel class; within 0.05 of the "
                "ideal baseline in %d/%d active scenarios (>= 10); %.1f s (<= 60 min)",
                novel_ok, novel, near_ideal, active, secs));
    return out;
}

void operator_effect(const MatrixOutcome& m) {
    const auto pooled = metrics::mann_whitney(m.pooled_feedback, m.pooled_nofeedback);
    const auto base = metrics::mann_whitney(m.base_feedback, m.base_nofeedback);
    info("base scenario alone: CL %.3f, z %.2f, p %.3g", base.cl, base.z, base.p_two_sided);
    verdict(pooled.cl >= 0.95, "operator-effect statistic",
            fmt("pooled drift-window utilities, %zu vs %zu samples: CL %.3f (>= 0.95), U %.0f, z %.2f, p %.3g",
                m.pooled_feedback.size(), m.pooled_nofeedback.size(), pooled.cl, pooled.u, pooled.z,
                pooled.p_two_sided));
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void determinism() {
    std::vector<scenario::ScenarioSpec> specs(2);
    specs[0].seed = 3;
    specs[1].preference = lifelong::PreferenceOrder::ec_then_pl;
    specs[1].appearance = sim::AppearanceOrder::parse("(R),G,B");
    specs[1].seed = 11;
    const auto dir = std::filesystem::temp_directory_path();
    int identical = 0, total = 0;
    for (const auto& s : specs)
        for (auto a : scenario::kAllApproaches) {
            const auto first = dir / "driftguard_det_a.csv";
            const auto second = dir / "driftguard_det_b.csv";
            scenario::export_report(scenario::run(scenario::prepare(s), a), "csv", first.string());
            scenario::export_report(scenario::run(scenario::prepare(s), a), "csv", second.string());
            const auto x = slurp(first.string()), y = slurp(second.string());
            identical += !x.empty() && x == y;
            ++total;
            std::filesystem::remove(first);
            std::filesystem::remove(second);
        }
    verdict(identical == total, "determinism",
            fmt("%d/%d (spec, seed, approach) pairs export byte-identical CSV on independent runs", identical, total));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    adaptation_space();
    gmm_recovery();
    count_selection();
    outlier_equivalence();
    algorithm1_oracle(scenario::prepare(scenario::ScenarioSpec{}));
    rsm_units();
    base_scenario();
    operator_effect(robustness_matrix());
    determinism();
    std::printf("%d criteria failed; total %.1f s\n", g_failed, seconds_since(t0));
    return g_failed == 0 ? 0 : 1;
}
