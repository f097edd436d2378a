#include "driftguard/lifelong.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "driftguard/errors.hpp"

namespace driftguard::lifelong {

// ---------------------------------------------------------------------------
// Knowledge manager

const StateSnapshot& KnowledgeManager::collect_state(const mapek::KnowledgeBase& kb, int cycle) {
    if (!store_.empty() && cycle <= store_.back().cycle) {
        const bool dup = std::any_of(store_.begin(), store_.end(), [&](const auto& s) { return s.cycle == cycle; });
        if (dup) throw InvalidState("cycle " + std::to_string(cycle) + " already collected");
        throw InvalidState("cycles must be collected in order");
    }
    StateSnapshot s;
    s.cycle = cycle;
    for (const auto& [id, r] : kb.cycle_entries(cycle))
        s.tuples.push_back({id, r.verification, r.classification.class_id, r.classification.membership});
    // Models rarely change, so consecutive snapshots share one copy.
    if (!store_.empty() && *store_.back().classifier == kb.classifier)
        s.classifier = store_.back().classifier;
    else
        s.classifier = std::make_shared<const GmmModel>(kb.classifier);
    if (!store_.empty() && *store_.back().preference == kb.preference)
        s.preference = store_.back().preference;
    else
        s.preference = std::make_shared<const mapek::PreferenceModel>(kb.preference);
    store_.push_back(std::move(s));
    while (!store_.empty() && store_.front().cycle <= cycle - retention_) store_.pop_front();
    return store_.back();
}

std::vector<StateSnapshot> KnowledgeManager::window(int last_cycle, int n) const {
    std::vector<StateSnapshot> out;
    for (const auto& s : store_)
        if (s.cycle > last_cycle - n && s.cycle <= last_cycle) out.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// Detection

GmmModel fit_new_classes(const std::vector<Point>& points, std::uint64_t seed, ClassId first_id) {
    if (points.empty()) throw InvalidInput("fit_new_classes: no points");
    const int k_max = std::min<int>(kMaxComponents, static_cast<int>(points.size()));
    auto sel = gmm::select_component_count_detailed(points, k_max, seed);
    GmmModel m = std::move(sel.fits[static_cast<std::size_t>(sel.count - 1)]);
    for (std::size_t i = 0; i < m.size(); ++i) m.components[i].class_id = first_id + static_cast<ClassId>(i);
    return m;
}

DetectionOutcome detect_new_classes(const std::vector<StateSnapshot>& states, const GmmModel& model,
                                    std::uint64_t seed, ClassId first_new_id) {
    DetectionOutcome out;
    for (const auto& s : states)
        for (const auto& t : s.tuples) out.points.push_back(t.quality.as_point());
    if (out.points.empty()) throw InvalidInput("detect_new_classes: empty window");
    if (model.empty()) throw InvalidInput("detect_new_classes: empty model");

    std::vector<Point> outliers;
    for (const auto& p : out.points) {
        const bool o = gmm::is_out_of_class(model, p);
        out.outlier.push_back(o);
        if (o) outliers.push_back(p);
        out.labels.push_back(gmm::classify(model, p).class_id);
    }
    out.out_of_class_fraction = 100.0 * static_cast<double>(outliers.size()) / static_cast<double>(out.points.size());
    if (out.out_of_class_fraction < kOutOfClassPercentThr) return out;

    out.detected = true;
    out.new_model = fit_new_classes(outliers, seed, first_new_id);
    out.merged_model = gmm::merge(model, *out.new_model);
    for (std::size_t i = 0; i < out.points.size(); ++i)
        out.labels[i] = gmm::classify(*out.merged_model, out.points[i]).class_id;
    return out;
}

// ---------------------------------------------------------------------------
// Names

std::string mode_name(OperatorMode m) {
    switch (m) {
        case OperatorMode::automated: return "automated";
        case OperatorMode::human: return "human";
        case OperatorMode::inactive: return "inactive";
    }
    return "?";
}

OperatorMode mode_from_name(const std::string& s) {
    if (s == "automated" || s == "active") return OperatorMode::automated;
    if (s == "human") return OperatorMode::human;
    if (s == "inactive") return OperatorMode::inactive;
    throw InvalidInput("unknown operator mode '" + s + "'");
}

std::string order_name(PreferenceOrder o) { return o == PreferenceOrder::pl_then_ec ? "<pl,ec>" : "<ec,pl>"; }

PreferenceOrder order_from_name(const std::string& s) {
    if (s == "<pl,ec>" || s == "pl,ec" || s == "pl_ec") return PreferenceOrder::pl_then_ec;
    if (s == "<ec,pl>" || s == "ec,pl" || s == "ec_pl") return PreferenceOrder::ec_then_pl;
    throw InvalidInput("unknown preference order '" + s + "'");
}

// ---------------------------------------------------------------------------
// Ranking

std::vector<ClassId> rank_classes(const GmmModel& model, PreferenceOrder order, double tolerance) {
    const int a = order == PreferenceOrder::pl_then_ec ? 0 : 1;
    const int b = 1 - a;
    std::vector<std::size_t> idx(model.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto mean = [&](std::size_t i, int axis) { return model.components[i].mean[axis]; };
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return mean(x, a) < mean(y, a); });

    std::vector<ClassId> out;
    for (std::size_t start = 0; start < idx.size();) {
        std::size_t end = start + 1;
        while (end < idx.size() && mean(idx[end], a) - mean(idx[start], a) <= tolerance) ++end;
        std::stable_sort(idx.begin() + static_cast<std::ptrdiff_t>(start), idx.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](auto x, auto y) { return mean(x, b) < mean(y, b); });
        for (std::size_t i = start; i < end; ++i) out.push_back(model.components[idx[i]].class_id);
        start = end;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Miner and learner

FeedbackRequest propose_model(const DetectionOutcome& outcome, const std::vector<StateSnapshot>& states,
                              std::uint64_t request_id, int cycle, const GmmModel& base,
                              std::uint64_t seed) {
    if (!outcome.detected || !outcome.new_model || !outcome.merged_model)
        throw InvalidState("propose_model: nothing was detected");
    (void)states;
    FeedbackRequest r;
    r.id = request_id;
    r.cycle = cycle;
    r.base = base;
    r.proposal = *outcome.merged_model;
    r.refined = r.proposal;
    r.window = outcome.points;
    for (std::size_t i = 0; i < outcome.points.size(); ++i)
        if (outcome.outlier[i]) r.out_of_class.push_back(outcome.points[i]);
    r.new_class_ids = outcome.new_model->class_ids();
    r.next_free_id = r.new_class_ids.empty() ? 0 : r.new_class_ids.back() + 1;
    for (ClassId id : r.proposal.class_ids()) r.next_free_id = std::max(r.next_free_id, id + 1);
    r.seed = seed;
    return r;
}

namespace {

void check_box(const Box& b) {
    const bool finite = std::isfinite(b.x_min) && std::isfinite(b.x_max) && std::isfinite(b.y_min) &&
                        std::isfinite(b.y_max);
    if (!finite || !(b.x_min < b.x_max) || !(b.y_min < b.y_max))
        throw InvalidFeedback("box bounds must be finite with min < max");
    if (b.x_min < 0.0 || b.x_max > 100.0 || b.y_min < 0.0)
        throw InvalidFeedback("box must lie inside the quality domain");
}

}  // namespace

GmmModel apply_box_feedback(FeedbackRequest& request, const std::vector<Box>& boxes) {
    if (request.status != RequestStatus::pending) throw InvalidState("request is not pending");
    if (boxes.empty()) {
        request.refined = request.proposal;
        return request.refined;
    }
    for (const auto& b : boxes) {
        check_box(b);
        const bool any = std::any_of(request.out_of_class.begin(), request.out_of_class.end(),
                                     [&](const Point& p) { return b.contains(p); });
        if (!any) throw InvalidFeedback("box contains no new-class points");
    }

    // First containing box wins; whatever no box claims forms the remainder.
    std::vector<std::vector<Point>> parts(boxes.size() + 1);
    for (const auto& p : request.out_of_class) {
        std::size_t k = 0;
        while (k < boxes.size() && !boxes[k].contains(p)) ++k;
        parts[k].push_back(p);
    }

    GmmModel addition;
    ClassId next = request.next_free_id;
    std::size_t part_no = 0;
    for (const auto& part : parts) {
        ++part_no;
        if (part.empty()) continue;
        const GmmModel m = fit_new_classes(part, request.seed + 7919 * part_no, next);
        next += static_cast<ClassId>(m.size());
        addition.components.insert(addition.components.end(), m.components.begin(), m.components.end());
    }
    double total = 0.0;
    for (const auto& c : addition.components) total += static_cast<double>(c.support_count);
    for (auto& c : addition.components)
        c.weight = total > 0.0 ? static_cast<double>(c.support_count) / total : 1.0 / static_cast<double>(addition.size());

    request.refined = gmm::merge(request.base, addition);
    return request.refined;
}

mapek::PreferenceModel apply_ranking(FeedbackRequest& request, const std::vector<ClassId>& ranking) {
    if (request.status != RequestStatus::pending) throw InvalidState("request is not pending");
    auto expected = request.refined.class_ids();
    auto given = ranking;
    std::sort(expected.begin(), expected.end());
    std::sort(given.begin(), given.end());
    if (given != expected) throw InvalidFeedback("ranking must be a permutation of the refined model's classes");
    request.status = RequestStatus::answered;
    return mapek::PreferenceModel{ranking};
}

void evolve(mapek::KnowledgeBase& kb, const GmmModel& refined, const mapek::PreferenceModel& preference) {
    kb.install(refined, preference);
}

OperatorFeedback automated_operator(const FeedbackRequest& request, PreferenceOrder order) {
    OperatorFeedback f;
    f.ranking = rank_classes(request.refined, order);
    return f;
}

// ---------------------------------------------------------------------------
// Run-level loop

LifelongLoop::LifelongLoop(OperatorMode mode, std::uint64_t seed, ClassId next_free_id)
    : mode_(mode), seed_(seed), next_free_id_(next_free_id) {}

FeedbackRequest& LifelongLoop::pending_request() {
    if (!pending_) throw InvalidState("no pending request");
    return *pending_;
}

std::optional<DetectionOutcome> LifelongLoop::after_cycle(const mapek::KnowledgeBase& kb, int cycle) {
    knowledge_.collect_state(kb, cycle);
    if (cycle % kPeriod != 0) return std::nullopt;
    const auto states = knowledge_.window(cycle);
    std::size_t n = 0;
    for (const auto& s : states) n += s.tuples.size();
    if (n == 0) return std::nullopt;

    const std::uint64_t seed = sim::derive_seed(seed_, static_cast<std::uint64_t>(cycle), sim::kLifelong);
    auto outcome = detect_new_classes(states, kb.classifier, seed, next_free_id_);
    if (!outcome.detected || mode_ == OperatorMode::inactive) return outcome;
    if (pending_) throw InvalidState("a feedback request is already pending");
    pending_ = propose_model(outcome, states, next_request_id_++, cycle, kb.classifier, seed);
    next_free_id_ = std::max(next_free_id_, pending_->next_free_id);
    return outcome;
}

FeedbackRequest& LifelongLoop::check_request(std::uint64_t request_id) {
    if (!pending_ || pending_->id != request_id) throw InvalidState("stale or unknown request id");
    return *pending_;
}

GmmModel LifelongLoop::box_feedback(std::uint64_t request_id, const std::vector<Box>& boxes) {
    auto& r = check_request(request_id);
    const GmmModel m = apply_box_feedback(r, boxes);
    for (ClassId id : m.class_ids()) next_free_id_ = std::max(next_free_id_, id + 1);
    return m;
}

mapek::PreferenceModel LifelongLoop::ranking_feedback(mapek::KnowledgeBase& kb, std::uint64_t request_id,
                                                      const std::vector<ClassId>& ranking) {
    auto& r = check_request(request_id);
    auto pref = apply_ranking(r, ranking);
    evolve(kb, r.refined, pref);
    pending_.reset();
    return pref;
}

void LifelongLoop::expire_pending() {
    if (!pending_) throw InvalidState("no pending request");
    pending_.reset();
}

// ---------------------------------------------------------------------------
// Channel

void FeedbackChannel::send(FeedbackMessage msg) {
    {
        std::lock_guard lock(mu_);
        if (closed_) {
            msg.reply.set_value({503, {{"error", "run finished"}}});
            return;
        }
        queue_.push_back(std::move(msg));
    }
    cv_.notify_one();
}

std::optional<FeedbackMessage> FeedbackChannel::receive(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    auto ready = [&] { return closed_ || !queue_.empty(); };
    if (timeout.count() > 0) cv_.wait_for(lock, timeout, ready);
    else cv_.wait(lock, ready);
    if (queue_.empty()) return std::nullopt;
    FeedbackMessage m = std::move(queue_.front());
    queue_.pop_front();
    return m;
}

void FeedbackChannel::close() {
    std::deque<FeedbackMessage> left;
    {
        std::lock_guard lock(mu_);
        closed_ = true;
        left.swap(queue_);
    }
    for (auto& m : left) m.reply.set_value({503, {{"error", "run finished"}}});
    cv_.notify_all();
}

bool FeedbackChannel::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const Box& b) {
    return {{"x_min", b.x_min}, {"x_max", b.x_max}, {"y_min", b.y_min}, {"y_max", b.y_max}};
}

Box box_from_json(const nlohmann::json& j) {
    try {
        return {j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("y_min").get<double>(),
                j.at("y_max").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw InvalidFeedback(std::string("box: ") + e.what());
    }
}

namespace {

nlohmann::json points_json(const std::vector<Point>& pts) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : pts) a.push_back({p[0], p[1]});
    return a;
}

}  // namespace

nlohmann::json to_json(const FeedbackRequest& r) {
    static const char* status[] = {"pending", "answered", "expired"};
    return {{"id", r.id},
            {"cycle", r.cycle},
            {"status", status[static_cast<int>(r.status)]},
            {"proposal", gmm::to_json(r.proposal)},
            {"refined", gmm::to_json(r.refined)},
            {"window", points_json(r.window)},
            {"out_of_class", points_json(r.out_of_class)},
            {"new_class_ids", r.new_class_ids},
            {"base_class_ids", r.base.class_ids()}};
}

nlohmann::json to_json(const StateSnapshot& s) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& t : s.tuples)
        pts.push_back({{"option_id", t.option_id},
                       {"pl", t.quality.packet_loss},
                       {"ec", t.quality.energy},
                       {"class_id", t.class_id},
                       {"membership", t.membership}});
    return {{"cycle", s.cycle}, {"points", pts}};
}

}  // namespace driftguard::lifelong
