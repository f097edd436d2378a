#include "driftguard/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <future>

#include "driftguard/errors.hpp"

namespace driftguard::service {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Event log

std::uint64_t EventLog::append(std::string kind, json payload) {
    std::uint64_t seq;
    {
        std::lock_guard lock(mu_);
        seq = next_++;
        buf_.push_back({seq, std::move(kind), std::move(payload)});
        while (buf_.size() > capacity_) buf_.pop_front();
    }
    cv_.notify_all();
    return seq;
}

std::vector<ApiEvent> EventLog::since(std::uint64_t after) const {
    std::lock_guard lock(mu_);
    std::vector<ApiEvent> out;
    for (const auto& e : buf_)
        if (e.seq > after) out.push_back(e);
    return out;
}

std::vector<ApiEvent> EventLog::wait_since(std::uint64_t after, std::chrono::milliseconds timeout) const {
    {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return closed_ || next_ - 1 > after; });
    }
    return since(after);
}

std::uint64_t EventLog::last_seq() const {
    std::lock_guard lock(mu_);
    return next_ - 1;
}

void EventLog::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool EventLog::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

std::string format_sse(const ApiEvent& e) {
    return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + e.payload.dump() + "\n\n";
}

// ---------------------------------------------------------------------------
// Run observer: builds immutable snapshots for the HTTP side

class OperatorService::Observer : public scenario::RunObserver {
public:
    Observer(OperatorService& svc, std::string approach, json spec)
        : svc_(svc), approach_(std::move(approach)), spec_(std::move(spec)) {}

    void on_cycle(const scenario::CycleRecord& rec, const mapek::KnowledgeBase& kb,
                  const lifelong::StateSnapshot*) override {
        json points = json::array();
        for (const auto& [id, r] : kb.cycle_entries(rec.cycle))
            points.push_back({{"cycle", rec.cycle},
                              {"option_id", id},
                              {"pl", r.verification.packet_loss},
                              {"ec", r.verification.energy},
                              {"class_id", r.classification.class_id},
                              {"membership", r.classification.membership}});
        window_.push_back(std::move(points));
        while (window_.size() > static_cast<std::size_t>(lifelong::kPeriod)) window_.pop_front();

        json window = json::array();
        for (const auto& cyc : window_)
            for (auto p : cyc) {
                p["out_of_class"] = gmm::is_out_of_class(kb.classifier, {p["pl"].get<double>(), p["ec"].get<double>()});
                window.push_back(std::move(p));
            }
        json record{{"cycle", rec.cycle},       {"option_id", rec.option_id}, {"pl", rec.quality.packet_loss},
                    {"ec", rec.quality.energy}, {"utility", rec.utility},     {"rank", rec.rank},
                    {"ideal_rank", rec.ideal_rank}};
        auto state = std::make_shared<const json>(json{{"status", "running"},
                                                       {"approach", approach_},
                                                       {"spec", spec_},
                                                       {"cycle", rec.cycle},
                                                       {"last_record", record},
                                                       {"window", std::move(window)},
                                                       {"model", gmm::to_json(kb.classifier)},
                                                       {"ranking", kb.preference.ranking}});
        {
            std::lock_guard lock(svc_.mu_);
            svc_.state_ = std::move(state);
        }
        svc_.events_.append("cycle_completed", std::move(record));
    }

    void on_request(const lifelong::FeedbackRequest& req) override { publish(req); }
    void on_refined(const lifelong::FeedbackRequest& req) override { publish(req); }

    void on_event(const scenario::EvolutionEvent& e) override {
        if (e.kind == "feedback_applied" || e.kind == "feedback_expired") {
            std::lock_guard lock(svc_.mu_);
            svc_.pending_.reset();
            svc_.pending_id_.reset();
        }
        json payload = e.detail;
        payload["cycle"] = e.cycle;
        svc_.events_.append(e.kind, std::move(payload));
    }

private:
    void publish(const lifelong::FeedbackRequest& req) {
        auto body = std::make_shared<const json>(lifelong::to_json(req));
        std::lock_guard lock(svc_.mu_);
        svc_.pending_ = std::move(body);
        svc_.pending_id_ = req.id;
    }

    OperatorService& svc_;
    std::string approach_;
    json spec_;
    std::deque<json> window_;
};

// ---------------------------------------------------------------------------
// Service

OperatorService::OperatorService(ServiceOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()), events_(options_.event_capacity) {
    install_routes();
}

OperatorService::~OperatorService() { shutdown(); }

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
        return std::nullopt;
    }
}

std::uint64_t parse_id(const std::string& s) {
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        return 0;  // never a live request id
    }
}

}  // namespace

void OperatorService::install_routes() {
    auto& svr = *server_;
    svr.set_default_headers({{"Access-Control-Allow-Origin", options_.cors_origin},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type, Last-Event-ID"}});
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send_json(res, 500, {{"error", what}});
    });

    svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    svr.Get("/api/run/state", [this](const httplib::Request&, httplib::Response& res) {
        std::shared_ptr<const json> state;
        {
            std::lock_guard lock(mu_);
            state = state_;
        }
        if (!state) return send_json(res, 404, {{"error", "no active run"}});
        send_json(res, 200, *state);
    });

    svr.Get("/api/feedback/pending", [this](const httplib::Request&, httplib::Response& res) {
        std::shared_ptr<const json> pending;
        {
            std::lock_guard lock(mu_);
            pending = pending_;
        }
        if (!pending) {
            res.status = 204;
            return;
        }
        send_json(res, 200, *pending);
    });

    svr.Post(R"(/api/feedback/(\d+)/box)", [this](const httplib::Request& req, httplib::Response& res) {
        auto body = parse_body(req, res);
        if (!body) return;
        auto r = post_box(parse_id(req.matches[1]), *body);
        send_json(res, r.status, r.body);
    });

    svr.Post(R"(/api/feedback/(\d+)/ranking)", [this](const httplib::Request& req, httplib::Response& res) {
        auto body = parse_body(req, res);
        if (!body) return;
        auto r = post_ranking(parse_id(req.matches[1]), *body);
        send_json(res, r.status, r.body);
    });

    svr.Get("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t after = 0;
        if (req.has_header("Last-Event-ID")) after = parse_id(req.get_header_value("Last-Event-ID"));
        else if (req.has_param("last_event_id")) after = parse_id(req.get_param_value("last_event_id"));
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, after](std::size_t, httplib::DataSink& sink) mutable {
            auto batch = events_.wait_since(after, std::chrono::milliseconds(500));
            if (batch.empty()) {
                if (events_.closed()) {
                    sink.done();
                    return true;
                }
                // Comment line; a failed write tells us the client left.
                static const std::string keepalive = ":\n\n";
                return sink.write(keepalive.data(), keepalive.size());
            }
            for (const auto& e : batch) {
                const auto frame = format_sse(e);
                if (!sink.write(frame.data(), frame.size())) return false;
                after = e.seq;
            }
            return true;
        });
    });
}

OperatorService::Reply OperatorService::forward(lifelong::FeedbackMessage msg) {
    if (stop_) return {503, {{"error", "service is shutting down"}}};
    auto fut = msg.reply.get_future();
    channel_.send(std::move(msg));
    if (fut.wait_for(options_.reply_timeout) != std::future_status::ready)
        return {504, {{"error", "run loop did not answer"}}};
    auto r = fut.get();
    return {r.status, std::move(r.body)};
}

OperatorService::Reply OperatorService::post_box(std::uint64_t id, const json& body) {
    lifelong::FeedbackMessage msg;
    msg.kind = lifelong::FeedbackMessage::Kind::box;
    msg.request_id = id;
    try {
        const json& boxes = body.is_object() && body.contains("boxes") ? body.at("boxes") : body;
        if (!boxes.is_array()) return {422, {{"error", "expected an array of boxes"}}};
        for (const auto& b : boxes) msg.boxes.push_back(lifelong::box_from_json(b));
    } catch (const InvalidFeedback& e) {
        return {422, {{"error", e.what()}}};
    }
    {
        std::lock_guard lock(mu_);
        if (!pending_id_ || *pending_id_ != id) return {409, {{"error", "request " + std::to_string(id) + " is not pending"}}};
    }
    return forward(std::move(msg));
}

OperatorService::Reply OperatorService::post_ranking(std::uint64_t id, const json& body) {
    lifelong::FeedbackMessage msg;
    msg.kind = lifelong::FeedbackMessage::Kind::ranking;
    msg.request_id = id;
    const json& ranking = body.is_object() && body.contains("ranking") ? body.at("ranking") : body;
    if (!ranking.is_array()) return {422, {{"error", "expected an array of class ids"}}};
    for (const auto& v : ranking) {
        if (!v.is_number_integer()) return {422, {{"error", "class ids must be integers"}}};
        msg.ranking.push_back(v.get<gmm::ClassId>());
    }
    {
        std::lock_guard lock(mu_);
        if (!pending_id_ || *pending_id_ != id) {
            // A repeat of an accepted ranking is answered as before.
            auto it = answered_.find(id);
            if (it != answered_.end() && it->second.first == msg.ranking) return {200, it->second.second};
            return {409, {{"error", "request " + std::to_string(id) + " is not pending"}}};
        }
    }
    const auto ranking_copy = msg.ranking;
    auto r = forward(std::move(msg));
    if (r.status == 200) {
        std::lock_guard lock(mu_);
        answered_[id] = {ranking_copy, r.body};
    }
    return r;
}

int OperatorService::listen() {
    if (server_thread_.joinable()) return port_;
    if (options_.port == 0) port_ = server_->bind_to_any_port(options_.host);
    else port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
    if (port_ < 0) throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void OperatorService::serve_forever() {
    listen();
    std::unique_lock lock(mu_);
    stop_cv_.wait(lock, [this] { return stop_.load(); });
}

void OperatorService::start_run(const scenario::ScenarioSpec& spec, scenario::Approach approach) {
    {
        std::lock_guard lock(mu_);
        if (run_started_) throw InvalidState("a run is already active");
        run_started_ = true;
        state_ = std::make_shared<const json>(json{{"status", "preparing"},
                                                   {"approach", scenario::approach_name(approach)},
                                                   {"spec", scenario::to_json(spec)},
                                                   {"cycle", 0}});
    }
    observer_ = std::make_unique<Observer>(*this, scenario::approach_name(approach), scenario::to_json(spec));
    run_thread_ = std::thread([this, spec, approach] {
        scenario::RunOptions opts;
        opts.observer = observer_.get();
        opts.channel = &channel_;
        opts.feedback_timeout = options_.feedback_timeout;
        opts.stop = &stop_;
        try {
            auto report = scenario::run(spec, approach, opts);
            std::lock_guard lock(mu_);
            auto state = state_ ? json(*state_) : json::object();
            state["status"] = "finished";
            state["summary"] = scenario::to_json(report).at("summary");
            state_ = std::make_shared<const json>(std::move(state));
            report_ = std::move(report);
        } catch (const std::exception& e) {
            std::lock_guard lock(mu_);
            auto state = state_ ? json(*state_) : json::object();
            state["status"] = "failed";
            state["error"] = e.what();
            state_ = std::make_shared<const json>(std::move(state));
            run_error_ = std::current_exception();
        }
        std::lock_guard lock(mu_);
        run_done_ = true;
        pending_.reset();
        pending_id_.reset();
    });
}

scenario::RunReport OperatorService::wait_run() {
    if (run_thread_.joinable()) run_thread_.join();
    std::lock_guard lock(mu_);
    if (run_error_) std::rethrow_exception(run_error_);
    if (!report_) throw InvalidState("no run was started");
    return *report_;
}

bool OperatorService::run_finished() const {
    std::lock_guard lock(mu_);
    return run_done_;
}

void OperatorService::shutdown() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    stop_cv_.notify_all();
    channel_.close();
    events_.close();
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    if (run_thread_.joinable()) run_thread_.join();
}

}  // namespace driftguard::service
