#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/injector.hpp"
#include "masfire/prompt_mod.hpp"
#include "masfire/taxonomy.hpp"
#include "masfire/tracelog.hpp"

namespace httplib {
class Server;
}

namespace masfire {

using ordered_json = nlohmann::ordered_json;

inline const std::string kUnmappedAgent = "unmapped";
inline const std::string kUntrackedTask = "untracked";

/// Header names are lowercased by the caller.
using HeaderMap = std::map<std::string, std::string>;

/// Header mode reads the configured header; prefix mode matches patterns, in
/// declaration order, against the first line of the first system message.
std::string identify_agent(const AgentMapping& mapping, const HeaderMap& headers, const ordered_json& body);

struct RequestContext {
    std::string agent_id;
    std::string task_id;
};

/// Applies the plan to wire payloads. Holds no per-request state apart from
/// the marker registry, which is internally locked.
class Interceptor {
public:
    /// Throws Error{Config} for routing specs, which need a message bus.
    Interceptor(std::vector<FaultSpec> plan, InjectorClient* injector = nullptr);

    /// Mutates messages[] in place. Returns true if anything changed.
    bool ingress(ordered_json& request, const RequestContext& rc, EventSink& sink);
    /// Mutates choices[0].message in place. `request` supplies the tool catalog.
    bool egress(ordered_json& response, const ordered_json& request, const RequestContext& rc, EventSink& sink);

    const std::vector<FaultSpec>& plan() const { return plan_; }

private:
    FaultSpec seeded(const FaultSpec& spec, const RequestContext& rc) const;
    bool prompt_point(ordered_json& messages, const FaultSpec& spec, const RequestContext& rc, EventSink& sink);
    bool history_point(ordered_json& messages, const FaultSpec& spec, const RequestContext& rc, EventSink& sink);

    std::vector<FaultSpec> plan_;
    InjectorClient* injector_;
    InjectionMarkers markers_;
};

struct GatewayOptions {
    std::string upstream;  // base URL, e.g. http://127.0.0.1:9000
    AgentMapping agent_mapping;
    std::vector<FaultSpec> plan;
    std::uint64_t campaign_seed = 0;
    std::string run_id = "gateway";
    /// Traces go to <trace_dir>/<task>.jsonl when set.
    std::optional<std::filesystem::path> trace_dir;
    InjectorClient* injector = nullptr;
    int upstream_timeout_s = 120;
    std::string upstream_key_env = "MASFIRE_UPSTREAM_API_KEY";
};

struct HttpReply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class Gateway {
public:
    explicit Gateway(GatewayOptions options);
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// POST /v1/chat/completions without the socket layer.
    HttpReply handle_chat(const std::string& body, const HeaderMap& headers);
    /// POST /v1/mas/task_result: {"task_id", "success", "applicable"?} closes a task trace.
    HttpReply handle_task_result(const std::string& body);

    /// Binds and serves on a background thread; returns the bound port.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from another thread or a signal handler.
    void serve(const std::string& host, int port);
    void stop();
    void flush();

    /// Committed events for one task, in seq order.
    std::vector<TraceEvent> events(const std::string& task_id) const;
    std::size_t fault_events() const;

private:
    struct Forwarded {
        int status = 0;
        std::string body;
        std::string content_type;
    };
    std::optional<Forwarded> forward(const std::string& body, const HeaderMap& headers);
    void commit(const std::string& task_id, std::vector<TraceEvent> staged);
    void install_routes();

    GatewayOptions options_;
    Interceptor interceptor_;
    std::unique_ptr<TraceStore> store_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;

    mutable std::mutex mu_;
    std::map<std::string, std::vector<TraceEvent>> log_;
    std::map<std::string, bool> closed_;
    std::size_t fault_events_ = 0;
};

}  // namespace masfire
