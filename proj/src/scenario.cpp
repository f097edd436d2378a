#include "driftguard/scenario.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <numeric>

#include "driftguard/errors.hpp"
#include "driftguard/ml2asr.hpp"

namespace driftguard::scenario {

std::string approach_name(Approach a) {
    switch (a) {
        case Approach::baseline: return "baseline";
        case Approach::predefined: return "predefined";
        case Approach::ml2asr: return "ml2asr";
        case Approach::lsa_feedback: return "lsa_feedback";
        case Approach::lsa_nofeedback: return "lsa_nofeedback";
    }
    return "?";
}

Approach approach_from_name(const std::string& s) {
    for (auto a : kAllApproaches)
        if (approach_name(a) == s) return a;
    throw InvalidInput("unknown approach '" + s + "'");
}

std::string ScenarioSpec::label() const {
    return lifelong::order_name(preference) + " " + appearance.label() + " " + lifelong::mode_name(mode) +
           " seed=" + std::to_string(seed);
}

nlohmann::json to_json(const ScenarioSpec& s) {
    return {{"preference", lifelong::order_name(s.preference)},
            {"appearance", s.appearance.label()},
            {"operator", lifelong::mode_name(s.mode)},
            {"seed", s.seed},
            {"cycles", s.cycles},
            {"training_cycles", s.training_cycles},
            {"drift_start", s.drift_start},
            {"config", sim::to_json(s.config)}};
}

ScenarioSpec spec_from_json(const nlohmann::json& j) {
    ScenarioSpec s;
    try {
        if (j.contains("preference")) s.preference = lifelong::order_from_name(j.at("preference").get<std::string>());
        if (j.contains("appearance")) s.appearance = sim::AppearanceOrder::parse(j.at("appearance").get<std::string>());
        if (j.contains("operator")) s.mode = lifelong::mode_from_name(j.at("operator").get<std::string>());
        s.seed = j.value("seed", s.seed);
        s.cycles = j.value("cycles", s.cycles);
        s.training_cycles = j.value("training_cycles", s.training_cycles);
        s.drift_start = j.value("drift_start", s.drift_start);
        if (j.contains("config")) s.config = sim::config_from_json(j.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("scenario: ") + e.what());
    }
    if (s.cycles < 1) throw InvalidInput("scenario: cycles must be >= 1");
    if (s.training_cycles < 0) throw InvalidInput("scenario: training_cycles must be >= 0");
    return s;
}

ScenarioSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scenario " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("scenario " + path + ": " + e.what());
    }
    return spec_from_json(j);
}

const std::vector<std::string>& appearance_orders() {
    static const std::vector<std::string> orders{"(B),R,G", "(B),G,R", "(R),B,G", "(R),G,B", "(B,R),G", "(B,G),R"};
    return orders;
}

std::vector<ScenarioSpec> scenario_matrix(const sim::SimConfig& config, std::uint64_t seed) {
    std::vector<ScenarioSpec> out;
    for (auto pref : {lifelong::PreferenceOrder::pl_then_ec, lifelong::PreferenceOrder::ec_then_pl})
        for (const auto& order : appearance_orders())
            for (auto mode : {lifelong::OperatorMode::automated, lifelong::OperatorMode::inactive}) {
                ScenarioSpec s;
                s.preference = pref;
                s.appearance = sim::AppearanceOrder::parse(order);
                s.mode = mode;
                s.seed = seed;
                s.config = config;
                out.push_back(s);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Preparation

Prepared prepare(const ScenarioSpec& spec) {
    if (spec.cycles < 1) throw InvalidInput("scenario: cycles must be >= 1");
    Prepared p;
    p.spec = spec;
    p.net = std::make_shared<const sim::NetworkModel>(spec.config, sim::derive_seed(spec.seed, 0, sim::kOptionLayout));
    p.schedule = sim::build_schedule(spec.config, spec.appearance, spec.cycles);
    const auto& opts = p.net->options();

    for (int c = 1; c <= spec.cycles; ++c) {
        const auto regime = sim::active_regime(p.schedule, c);
        std::mt19937_64 rng(sim::derive_seed(spec.seed, static_cast<std::uint64_t>(c), sim::kUncertainty));
        auto uncs = sim::sample_uncertainties(spec.config, regime, rng);
        auto power = sim::assign_power(spec.config, uncs);
        auto view = p.net->view(regime);
        metrics::ArchiveCycle ac;
        ac.cycle = c;
        ac.quality.reserve(opts.size());
        for (const auto& o : opts) ac.quality.push_back(p.net->verify(uncs, power, o, view));
        ac.label = view.label;
        p.archive.cycles.push_back(std::move(ac));
        p.uncs.push_back(std::move(uncs));
        p.power.push_back(std::move(power));
        p.views.push_back(std::move(view));
    }
    p.ideal = metrics::build_ideal_baseline(p.archive, spec.preference, opts.size());

    p.training_cycles = spec.training_cycles > 0 ? std::min(spec.training_cycles, spec.cycles)
                                                 : std::min(p.schedule.first_stable_length(), spec.cycles);
    std::vector<gmm::Point> pts;
    std::vector<gmm::ClassId> labels;
    for (int c = 0; c < p.training_cycles; ++c) {
        const auto& ac = p.archive.cycles[static_cast<std::size_t>(c)];
        for (std::size_t o = 0; o < ac.quality.size(); ++o) {
            if (ac.label[o] < 0) continue;
            pts.push_back(ac.quality[o].as_point());
            labels.push_back(ac.label[o]);
        }
    }
    p.predefined = gmm::fit_labeled(pts, labels);
    p.predefined_ranking = lifelong::rank_classes(p.predefined, spec.preference);
    return p;
}

// ---------------------------------------------------------------------------
// Run

namespace {

struct ArchiveVerifier : mapek::Verifier {
    const sim::NetworkModel* net = nullptr;
    const sim::PowerSettings* power = nullptr;
    const sim::RegimeView* view = nullptr;
    sim::QualityPoint verify(const sim::UncertaintySample& uncs, const sim::AdaptationOption& o) override {
        return net->verify(uncs, *power, o, *view);
    }
};

void check_selection(const mapek::KnowledgeBase& kb, const mapek::AnalysisResult& r, int cycle,
                     const mapek::AnalysisConfig& cfg) {
    if (r.option_id < 0) throw InvalidState("cycle " + std::to_string(cycle) + ": no option selected");
    if (r.fallback) return;
    const bool ranked = kb.preference.rank_of(r.class_id) != 0;
    const bool admitted = r.membership > cfg.prob_threshold || r.outliers > cfg.counter_threshold;
    if (!ranked || !admitted)
        throw InvalidState("cycle " + std::to_string(cycle) + ": selection violates the acceptance rule");
}

nlohmann::json components_brief(const gmm::GmmModel& m, const std::vector<gmm::ClassId>& ids) {
    nlohmann::json out = nlohmann::json::array();
    for (auto id : ids)
        if (const auto* c = m.find(id)) out.push_back({{"class_id", id}, {"mean", {c->mean[0], c->mean[1]}}});
    return out;
}

class Ml2asrState {
public:
    Ml2asrState(const Prepared& p) : p_(p) {
        const auto& opts = p.net->options();
        for (int c = 1; c <= p.training_cycles; ++c) {
            std::mt19937_64 rng(sim::derive_seed(p.spec.seed, static_cast<std::uint64_t>(c), sim::kRegressor));
            for (std::size_t k = 0; k < ml2asr::kSubsetSize; ++k) {
                const auto o = static_cast<std::size_t>(rng() % opts.size());
                add(c, opts[o], p.archive.cycles[static_cast<std::size_t>(c - 1)].quality[o]);
            }
        }
        retrain(p.training_cycles);
    }

    void add(int cycle, const sim::AdaptationOption& o, const sim::QualityPoint& q) {
        const auto i = static_cast<std::size_t>(cycle - 1);
        samples_.push_back({cycle, {ml2asr::features(p_.spec.config.topology, p_.uncs[i], p_.power[i], o), q}});
    }

    void retrain(int cycle) {
        while (!samples_.empty() && samples_.front().first <= cycle - 1000) samples_.pop_front();
        std::vector<ml2asr::Sample> hist;
        for (const auto& [c, s] : samples_) hist.push_back(s);
        if (hist.size() >= ml2asr::kMinSamples)
            predictor_ = std::make_unique<ml2asr::LinearPredictor>(p_.spec.config.topology, ml2asr::train(hist));
    }

    const ml2asr::Predictor& predictor() const {
        if (!predictor_) throw InvalidState("ml2asr: regressor not trained");
        return *predictor_;
    }

private:
    const Prepared& p_;
    std::deque<std::pair<int, ml2asr::Sample>> samples_;
    std::unique_ptr<ml2asr::LinearPredictor> predictor_;
};

Summary summarize(const std::vector<CycleRecord>& records, int m, int drift_start) {
    Summary s;
    double pre_gap = 0, drift_gap = 0, pre_u = 0, drift_u = 0, all_u = 0;
    int n_pre = 0, n_drift = 0;
    const double denom = m > 1 ? m - 1.0 : 1.0;
    for (const auto& r : records) {
        const double gap = (r.rank - r.ideal_rank) / denom;
        all_u += r.utility;
        s.verifications += r.verifications;
        if (r.cycle < drift_start) {
            pre_gap += gap;
            pre_u += r.utility;
            ++n_pre;
        } else {
            drift_gap += gap;
            drift_u += r.utility;
            ++n_drift;
        }
    }
    if (n_pre) {
        s.pre_drift_rsm = pre_gap / n_pre;
        s.pre_drift_utility = pre_u / n_pre;
    }
    if (n_drift) {
        s.drift_rsm = drift_gap / n_drift;
        s.drift_utility = drift_u / n_drift;
    }
    if (!records.empty()) s.mean_utility = all_u / static_cast<double>(records.size());
    return s;
}

std::vector<WindowStats> window_stats(const std::vector<CycleRecord>& records, int m) {
    std::vector<WindowStats> out;
    for (std::size_t start = 0; start + lifelong::kPeriod <= records.size(); start += lifelong::kPeriod) {
        WindowStats w;
        w.window_id = static_cast<int>(start / lifelong::kPeriod) + 1;
        w.first_cycle = records[start].cycle;
        w.last_cycle = records[start + lifelong::kPeriod - 1].cycle;
        metrics::RsmInput in;
        in.m = m;
        for (std::size_t i = start; i < start + lifelong::kPeriod; ++i) {
            const auto& r = records[i];
            in.r.push_back(r.rank);
            in.r_star.push_back(r.ideal_rank);
            w.mean_utility += r.utility / lifelong::kPeriod;
            w.mean_pl += r.quality.packet_loss / lifelong::kPeriod;
            w.mean_ec += r.quality.energy / lifelong::kPeriod;
        }
        w.rsm = m >= 2 ? metrics::rsm(in) : 0.0;
        out.push_back(w);
    }
    return out;
}

}  // namespace

RunReport run(const Prepared& p, Approach approach, const RunOptions& options) {
    const auto& spec = p.spec;
    if (approach == Approach::lsa_feedback && spec.mode == lifelong::OperatorMode::inactive)
        throw InvalidInput("lsa_feedback needs an active operator; the scenario has operator feedback off");
    if (approach == Approach::lsa_feedback && spec.mode == lifelong::OperatorMode::human && !options.channel)
        throw InvalidState("human operator mode needs a feedback channel");

    RunReport report;
    report.spec = to_json(spec);
    report.approach = approach_name(approach);
    report.ranked_classes = p.ideal.ranked_classes;

    mapek::KnowledgeBase kb;
    if (approach == Approach::baseline) kb.install(p.ideal.model, {p.ideal.ranking});
    else kb.install(p.predefined, {p.predefined_ranking});

    gmm::ClassId next_id = static_cast<gmm::ClassId>(spec.config.clusters.size());
    for (auto id : kb.classifier.class_ids()) next_id = std::max(next_id, id + 1);

    std::optional<lifelong::LifelongLoop> loop;
    if (approach == Approach::lsa_feedback) loop.emplace(spec.mode, spec.seed, next_id);
    if (approach == Approach::lsa_nofeedback) loop.emplace(lifelong::OperatorMode::inactive, spec.seed, next_id);

    std::optional<Ml2asrState> ml;
    if (approach == Approach::ml2asr) ml.emplace(p);

    auto emit = [&](EvolutionEvent e) {
        if (options.observer) options.observer->on_event(e);
        report.events.push_back(std::move(e));
    };

    const mapek::AnalysisConfig acfg;
    mapek::NetworkState state;
    const auto& opts = p.net->options();
    for (int c = 1; c <= spec.cycles; ++c) {
        if (options.stop && options.stop->load()) break;
        const auto i = static_cast<std::size_t>(c - 1);
        ArchiveVerifier verifier;
        verifier.net = p.net.get();
        verifier.power = &p.power[i];
        verifier.view = &p.views[i];

        mapek::AnalysisResult res;
        if (ml) {
            res = ml2asr::reduce_and_select(opts, p.uncs[i], p.power[i], ml->predictor(), kb, c, verifier);
        } else {
            std::mt19937_64 rng(sim::derive_seed(spec.seed, static_cast<std::uint64_t>(c), sim::kAnalysis));
            res = mapek::analyse(kb, opts, p.uncs[i], c, rng, verifier, acfg);
        }
        check_selection(kb, res, c, acfg);
        mapek::plan_and_execute(res, p.power[i], state);

        CycleRecord rec;
        rec.cycle = c;
        rec.approach = report.approach;
        rec.option_id = res.option_id;
        rec.quality = res.quality;
        rec.utility = metrics::utility(res.quality);
        rec.rank = p.ideal.rank_of_label(p.views[i].label.empty() ? -1 : p.views[i].label[static_cast<std::size_t>(res.option_id)]);
        if (rec.rank == 0) rec.rank = p.ideal.ranked_classes;
        rec.ideal_rank = p.ideal.r_star[i];
        rec.fallback = res.fallback;
        rec.verifications = res.verifications;
        report.records.push_back(rec);

        if (ml) {
            for (const auto& [id, cr] : kb.cycle_entries(c))
                ml->add(c, opts[static_cast<std::size_t>(id)], cr.verification);
            if (c % lifelong::kPeriod == 0) ml->retrain(c);
        }

        std::optional<lifelong::DetectionOutcome> outcome;
        if (loop) outcome = loop->after_cycle(kb, c);
        if (options.observer)
            options.observer->on_cycle(rec, kb, loop ? &loop->knowledge().snapshots().back() : nullptr);
        mapek::prune_results(kb, c);

        if (!outcome || !outcome->detected) continue;
        nlohmann::json detail{{"out_of_class_percent", outcome->out_of_class_fraction},
                              {"new_components", outcome->new_model->size()}};
        if (!loop->pending()) {
            detail["action"] = "logged";
            emit({c, "new_class_detected", detail});
            continue;
        }
        auto& req = loop->pending_request();
        detail["request_id"] = req.id;
        detail["new_classes"] = components_brief(req.proposal, req.new_class_ids);
        const bool human = spec.mode == lifelong::OperatorMode::human;
        // Publish the request before announcing it, so a listener can fetch it at once.
        if (human && options.observer) options.observer->on_request(req);
        emit({c, "new_class_detected", detail});

        if (!human) {
            const auto fb = lifelong::automated_operator(req, spec.preference);
            const auto id = req.id;
            loop->box_feedback(id, fb.boxes);
            const auto pref = loop->ranking_feedback(kb, id, fb.ranking);
            emit({c, "feedback_applied", {{"request_id", id}, {"ranking", pref.ranking}, {"operator", "automated"}}});
            continue;
        }

        // Human operator: the loop waits here until ranking, timeout or shutdown.
        while (loop->pending()) {
            auto msg = options.channel->receive(options.feedback_timeout);
            if (!msg) {
                const auto id = loop->pending()->id;
                loop->expire_pending();
                emit({c, "feedback_expired", {{"request_id", id}}});
                break;
            }
            lifelong::FeedbackReply reply;
            try {
                if (msg->kind == lifelong::FeedbackMessage::Kind::box) {
                    const auto refined = loop->box_feedback(msg->request_id, msg->boxes);
                    reply = {200, {{"request_id", msg->request_id}, {"model", gmm::to_json(refined)}}};
                    if (options.observer) options.observer->on_refined(loop->pending_request());
                } else {
                    const auto pref = loop->ranking_feedback(kb, msg->request_id, msg->ranking);
                    reply = {200, {{"request_id", msg->request_id}, {"ranking", pref.ranking}, {"status", "applied"}}};
                    emit({c, "feedback_applied", {{"request_id", msg->request_id}, {"ranking", pref.ranking}, {"operator", "human"}}});
                }
            } catch (const InvalidFeedback& e) {
                reply = {422, {{"error", e.what()}}};
            } catch (const InvalidState& e) {
                reply = {409, {{"error", e.what()}}};
            }
            msg->reply.set_value(std::move(reply));
        }
    }

    report.windows = window_stats(report.records, report.ranked_classes);
    report.summary = summarize(report.records, report.ranked_classes, spec.drift_start);
    return report;
}

RunReport run(const ScenarioSpec& spec, Approach approach, const RunOptions& options) {
    return run(prepare(spec), approach, options);
}

std::vector<double> drift_utilities(const RunReport& r, int drift_start) {
    std::vector<double> out;
    for (const auto& rec : r.records)
        if (rec.cycle >= drift_start) out.push_back(rec.utility);
    return out;
}

}  // namespace driftguard::scenario
