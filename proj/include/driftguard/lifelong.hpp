#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "driftguard/gmm.hpp"
#include "driftguard/mapek.hpp"

// Lifelong layer on top of the MAPE-K loop: knowledge manager (state
// snapshots), task manager (new-class detection), task-based miner (model
// proposal and box refinement) and knowledge-based learner (evolve).
namespace driftguard::lifelong {

using gmm::ClassId;
using gmm::GmmModel;
using gmm::Point;

inline constexpr int kPeriod = 10;                     // cycles between detections
inline constexpr double kOutOfClassPercentThr = 20.0;  // percent
inline constexpr int kMaxComponents = 5;
inline constexpr double kRankTolerance = 0.5;

struct QualityTuple {
    int option_id = 0;
    sim::QualityPoint quality;
    ClassId class_id = 0;
    double membership = 0.0;

    bool operator==(const QualityTuple&) const = default;
};

struct StateSnapshot {
    int cycle = 0;
    std::vector<QualityTuple> tuples;
    std::shared_ptr<const GmmModel> classifier;
    std::shared_ptr<const mapek::PreferenceModel> preference;
};

class KnowledgeManager {
public:
    explicit KnowledgeManager(int retention = 1000) : retention_(retention) {}

    // Throws InvalidState when the cycle was already collected.
    const StateSnapshot& collect_state(const mapek::KnowledgeBase& kb, int cycle);
    // Snapshots of cycles (last - n, last], oldest first.
    std::vector<StateSnapshot> window(int last_cycle, int n = kPeriod) const;
    const std::deque<StateSnapshot>& snapshots() const { return store_; }

private:
    int retention_;
    std::deque<StateSnapshot> store_;
};

struct DetectionOutcome {
    double out_of_class_fraction = 0.0;  // percent
    bool detected = false;
    std::optional<GmmModel> new_model;
    std::optional<GmmModel> merged_model;
    std::vector<Point> points;    // every windowed quality pair, snapshot order
    std::vector<bool> outlier;    // against the model in force
    std::vector<ClassId> labels;  // task labels, recomputed when detected
};

// Fresh ids are first_new_id, first_new_id + 1, ...
DetectionOutcome detect_new_classes(const std::vector<StateSnapshot>& states, const GmmModel& model,
                                    std::uint64_t seed, ClassId first_new_id);

// Component count by BIC + Kneedle, then EM. Handles sets smaller than k_max.
GmmModel fit_new_classes(const std::vector<Point>& points, std::uint64_t seed, ClassId first_id);

struct Box {
    double x_min = 0.0, x_max = 0.0;  // packet loss %
    double y_min = 0.0, y_max = 0.0;  // energy mC

    bool contains(const Point& p) const {
        return p[0] >= x_min && p[0] <= x_max && p[1] >= y_min && p[1] <= y_max;
    }
    bool operator==(const Box&) const = default;
};

enum class RequestStatus { pending, answered, expired };

struct FeedbackRequest {
    std::uint64_t id = 0;
    int cycle = 0;
    GmmModel base;      // model in force at detection
    GmmModel proposal;  // merged; never changed by box feedback
    GmmModel refined;   // latest box refinement, equal to proposal initially
    std::vector<Point> window;
    std::vector<Point> out_of_class;
    std::vector<ClassId> new_class_ids;
    ClassId next_free_id = 0;
    std::uint64_t seed = 0;
    RequestStatus status = RequestStatus::pending;
};

struct OperatorFeedback {
    std::vector<Box> boxes;
    std::vector<ClassId> ranking;
};

enum class OperatorMode { automated, human, inactive };
std::string mode_name(OperatorMode m);
OperatorMode mode_from_name(const std::string& s);

enum class PreferenceOrder { pl_then_ec, ec_then_pl };
std::string order_name(PreferenceOrder o);  // "<pl,ec>" or "<ec,pl>"
PreferenceOrder order_from_name(const std::string& s);

// Class ids ordered by the preference order over component means. Classes
// whose first-axis means chain within `tolerance` of the group's leader are
// ordered by the second axis.
std::vector<ClassId> rank_classes(const GmmModel& model, PreferenceOrder order,
                                  double tolerance = kRankTolerance);

// Throws InvalidState unless the outcome detected something.
FeedbackRequest propose_model(const DetectionOutcome& outcome, const std::vector<StateSnapshot>& states,
                              std::uint64_t request_id, int cycle, const GmmModel& base,
                              std::uint64_t seed);

// Always starts from request.proposal, so repeating the same boxes is a no-op.
GmmModel apply_box_feedback(FeedbackRequest& request, const std::vector<Box>& boxes);

mapek::PreferenceModel apply_ranking(FeedbackRequest& request, const std::vector<ClassId>& ranking);

void evolve(mapek::KnowledgeBase& kb, const GmmModel& refined, const mapek::PreferenceModel& preference);

OperatorFeedback automated_operator(const FeedbackRequest& request, PreferenceOrder order);

// Owns the lifelong state of one run: snapshots, id allocation, and the single
// pending request.
class LifelongLoop {
public:
    LifelongLoop(OperatorMode mode, std::uint64_t seed, ClassId next_free_id);

    OperatorMode mode() const { return mode_; }
    KnowledgeManager& knowledge() { return knowledge_; }
    const std::optional<FeedbackRequest>& pending() const { return pending_; }
    FeedbackRequest& pending_request();

    // Collects the cycle; every kPeriod cycles runs detection and, outside
    // inactive mode, opens a request. Returns the outcome when detection ran.
    std::optional<DetectionOutcome> after_cycle(const mapek::KnowledgeBase& kb, int cycle);

    GmmModel box_feedback(std::uint64_t request_id, const std::vector<Box>& boxes);
    // Ranks, evolves kb and closes the request.
    mapek::PreferenceModel ranking_feedback(mapek::KnowledgeBase& kb, std::uint64_t request_id,
                                            const std::vector<ClassId>& ranking);

    // Gives up on the pending request; the models in force stay as they are.
    void expire_pending();

    ClassId next_free_id() const { return next_free_id_; }

private:
    FeedbackRequest& check_request(std::uint64_t request_id);

    OperatorMode mode_;
    std::uint64_t seed_;
    ClassId next_free_id_;
    std::uint64_t next_request_id_ = 1;
    KnowledgeManager knowledge_;
    std::optional<FeedbackRequest> pending_;
};

// Service -> run loop messages. The loop is the only consumer.
struct FeedbackReply {
    int status = 200;  // 200, 409 stale id, 422 invalid feedback
    nlohmann::json body;
};

struct FeedbackMessage {
    enum class Kind { box, ranking } kind = Kind::box;
    std::uint64_t request_id = 0;
    std::vector<Box> boxes;
    std::vector<ClassId> ranking;
    std::promise<FeedbackReply> reply;
};

class FeedbackChannel {
public:
    void send(FeedbackMessage msg);
    // Waits up to `timeout`; a zero timeout waits forever. Empty on timeout or close.
    std::optional<FeedbackMessage> receive(std::chrono::milliseconds timeout = std::chrono::milliseconds{0});
    void close();
    bool closed() const;

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<FeedbackMessage> queue_;
    bool closed_ = false;
};

nlohmann::json to_json(const Box& b);
Box box_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeedbackRequest& r);
nlohmann::json to_json(const StateSnapshot& s);

}  // namespace driftguard::lifelong
