#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftguard/lifelong.hpp"
#include "driftguard/mapek.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/network.hpp"

namespace driftguard::scenario {

enum class Approach { baseline, predefined, ml2asr, lsa_feedback, lsa_nofeedback };
inline constexpr Approach kAllApproaches[] = {Approach::baseline, Approach::predefined, Approach::ml2asr,
                                              Approach::lsa_feedback, Approach::lsa_nofeedback};
std::string approach_name(Approach a);
Approach approach_from_name(const std::string& s);

struct ScenarioSpec {
    lifelong::PreferenceOrder preference = lifelong::PreferenceOrder::pl_then_ec;
    sim::AppearanceOrder appearance = sim::AppearanceOrder::parse("(B),R,G");
    lifelong::OperatorMode mode = lifelong::OperatorMode::automated;
    std::uint64_t seed = 1;
    int cycles = 350;
    int training_cycles = 0;  // 0: length of the first stable segment
    int drift_start = 250;    // first cycle of the drift window
    sim::SimConfig config = sim::SimConfig::defaults();

    std::string label() const;  // "<pl,ec> (B),R,G automated seed=1"
};

nlohmann::json to_json(const ScenarioSpec& s);
ScenarioSpec spec_from_json(const nlohmann::json& j);
ScenarioSpec load_spec(const std::string& path);

// The 2 x 6 x 2 evaluation matrix: preference order, appearance order, operator on/off.
std::vector<ScenarioSpec> scenario_matrix(const sim::SimConfig& config = sim::SimConfig::defaults(),
                                          std::uint64_t seed = 1);
const std::vector<std::string>& appearance_orders();

// Everything shared by all approaches of one (spec, seed): uncertainties,
// exhaustive archive, ideal baseline and the pre-deployment classifier.
struct Prepared {
    ScenarioSpec spec;
    std::shared_ptr<const sim::NetworkModel> net;
    sim::RegimeSchedule schedule;
    std::vector<sim::UncertaintySample> uncs;  // index cycle - 1
    std::vector<sim::PowerSettings> power;
    std::vector<sim::RegimeView> views;
    metrics::Archive archive;
    metrics::IdealBaseline ideal;
    int training_cycles = 0;
    gmm::GmmModel predefined;
    std::vector<gmm::ClassId> predefined_ranking;
};

Prepared prepare(const ScenarioSpec& spec);

struct CycleRecord {
    int cycle = 0;
    std::string approach;
    int option_id = -1;
    sim::QualityPoint quality;
    double utility = 0.0;
    int rank = 0;        // ideal rank of the selected option's class
    int ideal_rank = 0;  // best ideal rank available this cycle
    bool fallback = false;
    std::size_t verifications = 0;

    bool operator==(const CycleRecord&) const = default;
};

struct WindowStats {
    int window_id = 0;  // 1-based
    int first_cycle = 0;
    int last_cycle = 0;
    double rsm = 0.0;
    double mean_utility = 0.0;
    double mean_pl = 0.0;
    double mean_ec = 0.0;

    bool operator==(const WindowStats&) const = default;
};

struct EvolutionEvent {
    int cycle = 0;
    std::string kind;  // new_class_detected, feedback_applied, feedback_expired
    nlohmann::json detail;

    bool operator==(const EvolutionEvent&) const = default;
};

struct Summary {
    double pre_drift_rsm = 0.0;
    double drift_rsm = 0.0;
    double pre_drift_utility = 0.0;
    double drift_utility = 0.0;
    double mean_utility = 0.0;
    std::size_t verifications = 0;

    bool operator==(const Summary&) const = default;
};

struct RunReport {
    nlohmann::json spec;  // config echo
    std::string approach;
    int ranked_classes = 0;
    std::vector<CycleRecord> records;
    std::vector<WindowStats> windows;
    std::vector<EvolutionEvent> events;
    Summary summary;

    bool operator==(const RunReport&) const = default;
};

// Hooks for an attached operator service. Called on the run thread.
class RunObserver {
public:
    virtual ~RunObserver() = default;
    virtual void on_cycle(const CycleRecord&, const mapek::KnowledgeBase&, const lifelong::StateSnapshot*) {}
    virtual void on_request(const lifelong::FeedbackRequest&) {}
    virtual void on_refined(const lifelong::FeedbackRequest&) {}
    virtual void on_event(const EvolutionEvent&) {}
};

struct RunOptions {
    RunObserver* observer = nullptr;
    lifelong::FeedbackChannel* channel = nullptr;       // required in human mode
    std::chrono::milliseconds feedback_timeout{0};     // 0 waits forever
    const std::atomic<bool>* stop = nullptr;
};

RunReport run(const Prepared& prepared, Approach approach, const RunOptions& options = {});
RunReport run(const ScenarioSpec& spec, Approach approach, const RunOptions& options = {});

// Drift-window means of per-cycle values; the window runs from spec.drift_start.
std::vector<double> drift_utilities(const RunReport& r, int drift_start);

// Export. CSV holds the per-cycle records; JSON holds the whole report.
void export_report(const RunReport& report, const std::string& format, const std::string& path);
std::string records_csv(const RunReport& report);
std::string series_csv(const RunReport& report);
nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
RunReport load_report(const std::string& path);

inline constexpr int kSchemaVersion = 1;

}  // namespace driftguard::scenario
