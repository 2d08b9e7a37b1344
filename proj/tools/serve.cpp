#include <pthread.h>
#include <signal.h>

#include <fstream>
#include <iostream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "commands.hpp"
#include "masfire/digest.hpp"
#include "masfire/gateway.hpp"
#include "masfire/tracelog.hpp"

namespace masfire::cli {

namespace fs = std::filesystem;

namespace {

sigset_t stop_set() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    return set;
}

void check_upstream(const std::string& url) {
    static const std::regex re(R"(^https?://[A-Za-z0-9.\-]+(:[0-9]{1,5})?(/[^\s]*)?$)");
    if (!std::regex_match(url, re)) throw Error(Errc::Config, "invalid upstream URL: " + url);
}

}  // namespace

void block_stop_signals() {
    const auto set = stop_set();
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

void wait_for_stop_signal() {
    const auto set = stop_set();
    int sig = 0;
    sigwait(&set, &sig);
}

std::pair<std::string, int> parse_listen(const std::string& addr) {
    static const std::regex re(R"(^(?:([A-Za-z0-9.\-]+|\[[0-9a-fA-F:]+\]):)?([0-9]{1,5})$)");
    std::smatch m;
    if (!std::regex_match(addr, m, re)) throw Error(Errc::Config, "listen address must be [host:]port, got " + addr);
    const int port = std::stoi(m[2].str());
    if (port > 65535) throw Error(Errc::Config, "port out of range: " + addr);
    return {m[1].matched ? m[1].str() : "127.0.0.1", port};
}

int cmd_serve(const ServeArgs& args) {
    const auto config = load_config(args.config);
    if (!config.gateway) throw Error(Errc::Config, "config has no gateway target");
    const auto upstream = args.upstream.value_or(config.gateway->upstream);
    check_upstream(upstream);
    const auto [host, port] = parse_listen(args.listen.value_or(config.gateway->listen));

    const fs::path out = args.out ? *args.out : fs::path(config.output_dir);
    const auto session = out / "gateway.json";
    if (fs::exists(session) && !args.force) throw Error(Errc::Config, session.string() + " exists; pass --force to reuse the directory");
    fs::create_directories(out);

    auto injector = make_injector(config, args.injector_fixtures);
    GatewayOptions opts;
    opts.upstream = upstream;
    opts.agent_mapping = config.gateway->agent_mapping;
    opts.plan = config.fault_specs;
    opts.campaign_seed = config.campaign_seed;
    opts.run_id = opts.plan.empty() ? kBaselineRun : opts.plan.size() == 1 ? opts.plan[0].id : "gateway";
    opts.trace_dir = out / "traces";
    opts.injector = injector.get();

    Gateway gateway(opts);
    const int bound = gateway.start(host, port);
    std::cout << "listening on http://" << host << ":" << bound << std::endl;
    wait_for_stop_signal();
    gateway.stop();
    gateway.flush();

    const json doc = {{"schema_version", 1},
                      {"config_digest", sha256_hex(serialize_campaign(config))},
                      {"upstream", upstream},
                      {"run_id", opts.run_id},
                      {"fault_events", gateway.fault_events()},
                      {"injector", injector.endpoint ? json(injector.endpoint->identity()) : json(nullptr)}};
    std::ofstream(session, std::ios::trunc) << doc.dump(2) << '\n';
    std::cout << "stopped; traces flushed to " << opts.trace_dir->string() << std::endl;
    return kOk;
}

int cmd_mock(const MockArgs& args) {
    const auto fixture = Fixture::load(args.fixtures);
    const auto [host, port] = parse_listen(args.listen);

    httplib::Server server;
    auto chat = [&fixture](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body, nullptr, false);
        std::string digest;
        try {
            if (body.is_discarded()) throw Error(Errc::MalformedRequest, "body is not JSON");
            digest = request_digest(body);
        } catch (const Error& e) {
            res.status = 400;
            res.set_content(json{{"error", {{"type", "malformed_request"}, {"message", e.what()}}}}.dump(), "application/json");
            return;
        }
        const auto* r = fixture.find(digest);
        if (!r) {
            res.status = 404;
            res.set_content(json{{"error", {{"type", "fixture_miss"}, {"message", "no fixture for request"}, {"digest", digest}}}}.dump(),
                            "application/json");
            return;
        }
        res.status = r->status;
        if (r->status < 200 || r->status >= 300) {
            res.set_content(json{{"error", {{"type", "fixture_status"}, {"message", r->content}, {"digest", digest}}}}.dump(), "application/json");
            return;
        }
        const json reply = {{"id", "mock-" + digest.substr(0, 16)},
                            {"object", "chat.completion"},
                            {"model", body.value("model", "")},
                            {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", r->content}}}, {"finish_reason", "stop"}}}}};
        res.set_content(reply.dump(), "application/json");
    };
    server.Post("/v1/chat/completions", chat);
    server.Post("/chat/completions", chat);
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(Errc::Io, "cannot bind " + args.listen);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    std::cout << "listening on http://" << host << ":" << bound << " (" << fixture.size() << " fixtures)" << std::endl;
    wait_for_stop_signal();
    server.stop();
    worker.join();
    return kOk;
}

}  // namespace masfire::cli
