#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "driftguard/lifelong.hpp"
#include "driftguard/scenario.hpp"

namespace httplib {
class Server;
}

// HTTP facade for a human operator: run state, the pending feedback request,
// box and ranking submission, and a server-sent event stream.
namespace driftguard::service {

struct ApiEvent {
    std::uint64_t seq = 0;
    std::string kind;  // cycle_completed, new_class_detected, feedback_applied, feedback_expired
    nlohmann::json payload;
};

// Bounded event history with blocking reads. Sequence numbers start at 1.
class EventLog {
public:
    explicit EventLog(std::size_t capacity = 1000) : capacity_(capacity) {}

    std::uint64_t append(std::string kind, nlohmann::json payload);
    // Buffered events with seq > after; older ones may have been evicted.
    std::vector<ApiEvent> since(std::uint64_t after) const;
    // Like since(), waiting up to `timeout` when nothing is buffered yet.
    std::vector<ApiEvent> wait_since(std::uint64_t after, std::chrono::milliseconds timeout) const;
    std::uint64_t last_seq() const;
    void close();
    bool closed() const;

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::deque<ApiEvent> buf_;
    std::uint64_t next_ = 1;
    bool closed_ = false;
};

std::string format_sse(const ApiEvent& e);

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 picks a free port
    std::size_t event_capacity = 1000;
    std::string cors_origin = "*";
    std::chrono::milliseconds feedback_timeout{0};  // 0 waits forever
    std::chrono::milliseconds reply_timeout{30000};
};

class OperatorService {
public:
    explicit OperatorService(ServiceOptions options = {});
    ~OperatorService();
    OperatorService(const OperatorService&) = delete;
    OperatorService& operator=(const OperatorService&) = delete;

    // Binds and serves on a background thread. Returns the bound port.
    int listen();
    // Blocks the caller until shutdown().
    void serve_forever();

    // Starts a run on its own thread. Throws InvalidState if one is already running.
    void start_run(const scenario::ScenarioSpec& spec, scenario::Approach approach);
    // Joins the run thread. Throws whatever the run threw.
    scenario::RunReport wait_run();
    bool run_finished() const;

    void shutdown();

    const EventLog& events() const { return events_; }
    int port() const { return port_; }

private:
    class Observer;
    struct Reply {
        int status = 200;
        nlohmann::json body;
    };

    void install_routes();
    Reply post_box(std::uint64_t id, const nlohmann::json& body);
    Reply post_ranking(std::uint64_t id, const nlohmann::json& body);
    Reply forward(lifelong::FeedbackMessage msg);

    ServiceOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    std::thread run_thread_;
    int port_ = 0;

    EventLog events_;
    lifelong::FeedbackChannel channel_;
    std::unique_ptr<Observer> observer_;
    std::atomic<bool> stop_{false};

    mutable std::mutex mu_;
    std::condition_variable stop_cv_;
    bool run_started_ = false;
    bool run_done_ = false;
    std::shared_ptr<const nlohmann::json> state_;    // latest run snapshot
    std::shared_ptr<const nlohmann::json> pending_;  // latest pending request
    std::optional<std::uint64_t> pending_id_;
    std::map<std::uint64_t, std::pair<std::vector<gmm::ClassId>, nlohmann::json>> answered_;
    std::optional<scenario::RunReport> report_;
    std::exception_ptr run_error_;
};

}  // namespace driftguard::service
