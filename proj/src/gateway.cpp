#include "masfire/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <iostream>

#include <httplib.h>

#include "masfire/digest.hpp"
#include "masfire/error.hpp"
#include "masfire/response_rewrite.hpp"

namespace masfire {

namespace {

bool skippable(Errc c) {
    switch (c) {
        case Errc::NotApplicable:
        case Errc::KindMismatch:
        case Errc::WouldEmptyHistory:
        case Errc::BudgetNotBinding:
        case Errc::UnknownAgent:
        case Errc::CatalogTooSmall:
        case Errc::FieldNotFound:
        case Errc::AlreadyInvalid:
        case Errc::AlreadyInjected:
        case Errc::EmptyPrompt:
        case Errc::Parse:
            return true;
        default:
            return false;
    }
}

bool delegation_failure(Errc c) { return c == Errc::InjectorUnavailable || c == Errc::IntegrityCheckFailed; }

/// Runs one mutation; inapplicable or failed delegations leave the payload alone.
template <class Fn>
bool attempt(const FaultSpec& spec, Fn&& fn) {
    try {
        fn();
        return true;
    } catch (const Error& e) {
        if (skippable(e.code())) return false;
        if (delegation_failure(e.code())) {
            std::cerr << "masfire gateway: " << spec.id << " not injected: " << e.what() << '\n';
            return false;
        }
        throw;
    }
}

ordered_json* find_message(ordered_json& messages, const std::string& role, bool last) {
    ordered_json* hit = nullptr;
    for (auto& m : messages) {
        if (m.is_object() && m.value("role", "") == role && m.contains("content") && m["content"].is_string()) {
            hit = &m;
            if (!last) break;
        }
    }
    return hit;
}

std::string message_text(const ordered_json& m) {
    if (!m.contains("content") || m["content"].is_null()) return {};
    return m["content"].is_string() ? m["content"].get<std::string>() : m["content"].dump();
}

std::string message_sender(const ordered_json& m, const std::string& self) {
    const auto role = m.value("role", "");
    if (m.contains("name") && m["name"].is_string()) return m["name"].get<std::string>();
    if (role == "assistant") return self;
    return role;
}

OutputKind egress_kind(FaultType type) {
    switch (type) {
        case FaultType::InexecutablePlan:
        case FaultType::CriticalInfoLoss:
            return OutputKind::Plan;
        case FaultType::Hallucination:
            return OutputKind::Reasoning;
        default:
            return OutputKind::PlainMessage;
    }
}

void require_well_formed(const ordered_json& body) {
    if (!body.is_object()) throw Error(Errc::MalformedRequest, "body must be a JSON object");
    if (!body.contains("model") || !body["model"].is_string()) throw Error(Errc::MalformedRequest, "model must be a string");
    if (!body.contains("messages") || !body["messages"].is_array()) throw Error(Errc::MalformedRequest, "messages must be an array");
    for (const auto& m : body["messages"]) {
        if (!m.is_object() || !m.contains("role") || !m["role"].is_string())
            throw Error(Errc::MalformedRequest, "every message needs a string role");
        const auto role = m["role"].get<std::string>();
        if (role != "system" && role != "user" && role != "assistant" && role != "tool")
            throw Error(Errc::MalformedRequest, "unknown role " + role);
    }
}

HttpReply error_reply(int status, std::string_view type, std::string_view message) {
    return {status, json{{"error", {{"type", type}, {"message", message}}}}.dump(), "application/json"};
}

/// One SSE chunk carrying the whole message, then the terminator.
std::string as_event_stream(const ordered_json& completion) {
    ordered_json chunk = completion;
    chunk["object"] = "chat.completion.chunk";
    if (chunk.contains("choices") && chunk["choices"].is_array()) {
        for (auto& c : chunk["choices"]) {
            if (c.contains("message")) {
                c["delta"] = c["message"];
                c.erase("message");
            }
        }
    }
    return "data: " + chunk.dump() + "\n\ndata: [DONE]\n\n";
}

TraceEvent wire_event(EventKind kind, const RequestContext& rc, std::string_view payload, json detail) {
    TraceEvent e;
    e.kind = kind;
    e.agent_id = rc.agent_id;
    e.payload_digest = sha256_hex(payload);
    e.detail = std::move(detail);
    return e;
}

}  // namespace

std::string identify_agent(const AgentMapping& mapping, const HeaderMap& headers, const ordered_json& body) {
    if (mapping.mode == AgentMappingMode::Header) {
        std::string name = mapping.header;
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        auto it = headers.find(name);
        return it == headers.end() || it->second.empty() ? kUnmappedAgent : it->second;
    }
    if (!body.contains("messages") || !body["messages"].is_array()) return kUnmappedAgent;
    for (const auto& m : body["messages"]) {
        if (!m.is_object() || m.value("role", "") != "system" || !m.contains("content") || !m["content"].is_string()) continue;
        const auto text = m["content"].get<std::string>();
        const auto first_line = text.substr(0, text.find('\n'));
        for (const auto& p : mapping.patterns)
            if (first_line.find(p.pattern) != std::string::npos) return p.agent;
        break;
    }
    return kUnmappedAgent;
}

// ---- Interceptor ----

Interceptor::Interceptor(std::vector<FaultSpec> plan, InjectorClient* injector) : plan_(std::move(plan)), injector_(injector) {
    for (const auto& s : plan_) {
        if (!point_of(s.fault_type) || s.target.kind != TargetSelector::Kind::Point)
            throw Error(Errc::Config, "spec " + s.id + ": routing faults need the simulator's message bus");
        if (s.mode == InjectionMode::Delegated && !injector_)
            throw Error(Errc::Config, "spec " + s.id + " is delegated but no injector is configured");
    }
}

FaultSpec Interceptor::seeded(const FaultSpec& spec, const RequestContext& rc) const {
    FaultSpec s = spec;
    s.seed = derive_seed(spec.seed, rc.task_id, rc.agent_id);
    return s;
}

bool Interceptor::prompt_point(ordered_json& messages, const FaultSpec& spec, const RequestContext& rc, EventSink& sink) {
    const bool system = spec.target.point == InterceptionPoint::SystemPromptInit;
    auto* msg = find_message(messages, system ? "system" : "user", !system);
    if (!msg) return false;
    const auto s = seeded(spec, rc);
    return attempt(spec, [&] {
        PromptDoc doc{system ? PromptRole::SystemPrompt : PromptRole::UserPrompt, (*msg)["content"].get<std::string>(),
                      system ? std::optional(rc.agent_id) : std::nullopt};
        InjectionContext ic{spec.id, rc.agent_id, &sink, &markers_};
        auto out = apply_prompt_fault(s, doc, injector_, ic);
        (*msg)["content"] = out.text;
    });
}

bool Interceptor::history_point(ordered_json& messages, const FaultSpec& spec, const RequestContext& rc, EventSink& sink) {
    HistoryWindow window;
    for (const auto& m : messages) window.messages.push_back({message_sender(m, rc.agent_id), m.value("role", ""), message_text(m)});
    HistoryWindow out;
    const auto s = seeded(spec, rc);
    RewriteContext ctx{rc.agent_id, &sink, injector_, {}};
    if (!attempt(spec, [&] { out = apply_history_fault(s, window, ctx); })) return false;

    // Kept messages are an ordered subsequence of the input; map them back so
    // their extra fields survive untouched.
    ordered_json rebuilt = ordered_json::array();
    std::size_t cursor = 0;
    for (const auto& h : out.messages) {
        if (h.sender == "masfire" && h.text == kContextTruncatedMarker) {
            rebuilt.push_back({{"role", "system"}, {"content", h.text}});
            continue;
        }
        while (cursor < window.messages.size() && !(window.messages[cursor] == h)) ++cursor;
        if (cursor == window.messages.size()) throw Error(Errc::Io, "history rewrite produced an unknown message");
        rebuilt.push_back(messages[cursor++]);
    }
    messages = std::move(rebuilt);
    return true;
}

bool Interceptor::ingress(ordered_json& request, const RequestContext& rc, EventSink& sink) {
    bool changed = false;
    // Point order: system prompt, user prompt, history.
    for (auto point : {InterceptionPoint::SystemPromptInit, InterceptionPoint::UserPromptIngress, InterceptionPoint::HistoryWindowIngress}) {
        for (const auto& spec : plan_) {
            if (spec.target.point != point || !spec.target.matches_agent(rc.agent_id)) continue;
            auto& messages = request["messages"];
            changed |= point == InterceptionPoint::HistoryWindowIngress ? history_point(messages, spec, rc, sink)
                                                                        : prompt_point(messages, spec, rc, sink);
        }
    }
    return changed;
}

bool Interceptor::egress(ordered_json& response, const ordered_json& request, const RequestContext& rc, EventSink& sink) {
    if (!response.is_object() || !response.contains("choices") || !response["choices"].is_array() || response["choices"].empty())
        return false;
    auto& choice = response["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) return false;
    auto& msg = choice["message"];

    std::vector<std::string> catalog;
    if (request.contains("tools") && request["tools"].is_array()) {
        for (const auto& t : request["tools"]) {
            if (t.is_object() && t.contains("function") && t["function"].is_object() && t["function"].contains("name") &&
                t["function"]["name"].is_string())
                catalog.push_back(t["function"]["name"].get<std::string>());
        }
    }

    bool changed = false;
    for (const auto& spec : plan_) {
        if (!spec.target.matches_agent(rc.agent_id)) continue;
        const auto s = seeded(spec, rc);
        RewriteContext ctx{rc.agent_id, &sink, injector_, catalog};
        if (spec.target.point == InterceptionPoint::AgentOutputEgress) {
            if (!msg.contains("content") || !msg["content"].is_string() || msg["content"].get<std::string>().empty()) continue;
            AgentOutput out{rc.agent_id, egress_kind(spec.fault_type), msg["content"].get<std::string>(), std::nullopt};
            changed |= attempt(spec, [&] { msg["content"] = apply_output_fault(s, out, ctx).content; });
        } else if (spec.target.point == InterceptionPoint::ToolCallEgress) {
            if (!msg.contains("tool_calls") || !msg["tool_calls"].is_array() || msg["tool_calls"].empty()) continue;
            auto& fn = msg["tool_calls"][0]["function"];
            if (!fn.is_object() || !fn.contains("name") || !fn["name"].is_string() || !fn.contains("arguments") ||
                !fn["arguments"].is_string())
                continue;
            auto args = json::parse(fn["arguments"].get<std::string>(), nullptr, false);
            if (args.is_discarded() || !args.is_object()) continue;
            ToolCall call{fn["name"].get<std::string>(), args, std::nullopt};
            AgentOutput out{rc.agent_id, OutputKind::ToolCall, tool_call_to_json(call).dump(), call};
            changed |= attempt(spec, [&] {
                auto mutated = apply_output_fault(s, out, ctx);
                fn["name"] = mutated.tool_call->tool_name;
                fn["arguments"] = mutated.tool_call->raw_arguments ? *mutated.tool_call->raw_arguments
                                                                   : mutated.tool_call->arguments.dump();
            });
        }
    }
    return changed;
}

// ---- Gateway ----

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)), interceptor_(options_.plan, options_.injector) {
    if (options_.upstream.find("://") == std::string::npos)
        throw Error(Errc::Config, "upstream must be a URL with a scheme: " + options_.upstream);
    while (options_.upstream.ends_with('/')) options_.upstream.pop_back();
    if (options_.trace_dir) {
        std::filesystem::create_directories(*options_.trace_dir);
        store_ = std::make_unique<TraceStore>(*options_.trace_dir, options_.campaign_seed, options_.run_id);
    }
}

Gateway::~Gateway() {
    stop();
    flush();
}

std::optional<Gateway::Forwarded> Gateway::forward(const std::string& body, const HeaderMap& headers) {
    const auto scheme_end = options_.upstream.find("://");
    const auto path_start = options_.upstream.find('/', scheme_end + 3);
    const std::string origin = options_.upstream.substr(0, path_start);
    std::string path = path_start == std::string::npos ? std::string() : options_.upstream.substr(path_start);
    if (!path.ends_with("/chat/completions")) path += path.ends_with("/v1") ? "/chat/completions" : "/v1/chat/completions";

    httplib::Client cli(origin);
    cli.set_connection_timeout(options_.upstream_timeout_s);
    cli.set_read_timeout(options_.upstream_timeout_s);
    httplib::Headers out;
    if (const char* key = std::getenv(options_.upstream_key_env.c_str()); key && *key) {
        out.emplace("Authorization", std::string("Bearer ") + key);
    } else if (auto it = headers.find("authorization"); it != headers.end()) {
        out.emplace("Authorization", it->second);
    }
    auto res = cli.Post(path, out, body, "application/json");
    if (!res) return std::nullopt;
    return Forwarded{res->status, res->body, res->get_header_value("Content-Type")};
}

void Gateway::commit(const std::string& task_id, std::vector<TraceEvent> staged) {
    std::lock_guard lock(mu_);
    if (closed_[task_id]) {
        std::cerr << "masfire gateway: task " << task_id << " already has a result; dropping " << staged.size() << " events\n";
        return;
    }
    auto& log = log_[task_id];
    std::uint64_t next = log.empty() ? 0 : log.back().seq + 1;
    for (auto& e : staged) {
        e.seq = next++;
        e.task_id = task_id;
        if (e.kind == EventKind::FaultInjected) ++fault_events_;
        if (e.kind == EventKind::TaskResult) closed_[task_id] = true;
    }
    if (store_) store_->commit(task_id, staged);
    log.insert(log.end(), staged.begin(), staged.end());
}

HttpReply Gateway::handle_chat(const std::string& body, const HeaderMap& headers) {
    ordered_json request = ordered_json::parse(body, nullptr, false);
    try {
        require_well_formed(request);
    } catch (const Error& e) {
        return error_reply(400, "malformed_request", e.what());
    }
    RequestContext rc{identify_agent(options_.agent_mapping, headers, request), kUntrackedTask};
    if (auto it = headers.find("x-mas-task"); it != headers.end() && !it->second.empty()) rc.task_id = it->second;

    EventBuffer staged;
    std::string upstream_body = body;
    const bool stream = request.value("stream", false);
    if (interceptor_.ingress(request, rc, staged) || stream) {
        // Egress rewriting needs the whole message, so streams are buffered.
        if (stream) request["stream"] = false;
        upstream_body = request.dump();
    }
    staged.record(wire_event(EventKind::MsgSent, rc, upstream_body, {{"to", "upstream"}, {"model", request["model"]}}));

    auto reply = forward(upstream_body, headers);
    if (!reply) return error_reply(502, "upstream_unreachable", "upstream " + options_.upstream + " did not answer");
    if (reply->status >= 500) return error_reply(502, "upstream_error", "upstream returned HTTP " + std::to_string(reply->status));

    staged.record(wire_event(EventKind::MsgReceived, rc, reply->body, {{"from", "upstream"}, {"status", reply->status}}));
    std::string downstream = reply->body;
    ordered_json response = ordered_json::parse(reply->body, nullptr, false);
    if (reply->status < 300 && !response.is_discarded()) {
        if (interceptor_.egress(response, request, rc, staged)) downstream = response.dump();
        if (stream) {
            commit(rc.task_id, std::move(staged.events));
            return {reply->status, as_event_stream(response), "text/event-stream"};
        }
    }
    commit(rc.task_id, std::move(staged.events));
    return {reply->status, downstream, reply->content_type.empty() ? "application/json" : reply->content_type};
}

HttpReply Gateway::handle_task_result(const std::string& body) {
    const auto j = json::parse(body, nullptr, false);
    if (!j.is_object() || !j.contains("task_id") || !j["task_id"].is_string() || !j.contains("success") || !j["success"].is_boolean())
        return error_reply(400, "malformed_request", "expected {\"task_id\": string, \"success\": bool}");
    const auto task = j["task_id"].get<std::string>();
    TaskOutcome o;
    o.task_id = task;
    o.run_id = options_.run_id;
    o.success = j["success"].get<bool>();
    o.applicable = j.value("applicable", true);
    {
        std::lock_guard lock(mu_);
        if (closed_[task]) return error_reply(409, "task_closed", "task " + task + " already has a result");
        o.ft_summary = summarize(log_[task]);
    }
    const auto digest = outcome_digest(o);
    TraceEvent e;
    e.kind = EventKind::TaskResult;
    e.agent_id = "system";
    e.success = o.success;
    e.payload_digest = digest;
    e.detail = {{"applicable", o.applicable}, {"ft_summary", summary_to_json(o.ft_summary)}, {"outcome_digest", digest}};
    commit(task, {e});
    return {200, json{{"task_id", task}, {"outcome_digest", digest}}.dump(), "application/json"};
}

void Gateway::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    auto headers_of = [](const httplib::Request& req) {
        HeaderMap h;
        for (const auto& [k, v] : req.headers) {
            std::string key = k;
            std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
            h.emplace(key, v);
        }
        return h;
    };
    auto send = [](httplib::Response& res, const HttpReply& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server_->Post("/v1/chat/completions", [this, headers_of, send](const httplib::Request& req, httplib::Response& res) {
        try {
            send(res, handle_chat(req.body, headers_of(req)));
        } catch (const std::exception& e) {
            send(res, error_reply(500, "internal_error", e.what()));
        }
    });
    server_->Post("/v1/mas/task_result", [this, send](const httplib::Request& req, httplib::Response& res) {
        try {
            send(res, handle_task_result(req.body));
        } catch (const std::exception& e) {
            send(res, error_reply(500, "internal_error", e.what()));
        }
    });
    server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("{\"status\":\"ok\"}", "application/json"); });
}

int Gateway::start(const std::string& host, int port) {
    install_routes();
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void Gateway::serve(const std::string& host, int port) {
    install_routes();
    if (!server_->bind_to_port(host, port)) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
    server_->listen_after_bind();
    flush();
}

void Gateway::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void Gateway::flush() {
    if (store_) store_->flush_all();
}

std::vector<TraceEvent> Gateway::events(const std::string& task_id) const {
    std::lock_guard lock(mu_);
    auto it = log_.find(task_id);
    return it == log_.end() ? std::vector<TraceEvent>{} : it->second;
}

std::size_t Gateway::fault_events() const {
    std::lock_guard lock(mu_);
    return fault_events_;
}

}  // namespace masfire
