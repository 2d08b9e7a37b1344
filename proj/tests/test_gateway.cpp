#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "gateway_fixtures.hpp"
#include "masfire/prompt_mod.hpp"

using namespace masfire;
using fixtures::StubUpstream;
namespace fs = std::filesystem;

namespace {

GatewayOptions options_for(const std::string& upstream, std::vector<FaultSpec> plan = {}) {
    GatewayOptions o;
    o.upstream = upstream;
    o.plan = std::move(plan);
    return o;
}

}  // namespace

TEST_CASE("identify_agent") {
    AgentMapping header;
    const auto body = ordered_json::parse(R"({"messages":[{"role":"system","content":"You are the Reviewer for this team.\nBe strict."}]})");
    CHECK(identify_agent(header, {{"x-mas-agent", "critic"}}, body) == "critic");
    CHECK(identify_agent(header, {}, body) == kUnmappedAgent);

    AgentMapping prefix;
    prefix.mode = AgentMappingMode::SystemPromptPrefix;
    prefix.patterns = {{"Reviewer", "reviewer"}, {"Writer", "writer"}};
    CHECK(identify_agent(prefix, {}, body) == "reviewer");
    // only the first line is the prefix
    const auto later = ordered_json::parse(R"({"messages":[{"role":"system","content":"You help.\nThe Writer reports to you."}]})");
    CHECK(identify_agent(prefix, {}, later) == kUnmappedAgent);
    CHECK(identify_agent(prefix, {}, ordered_json::parse(R"({"messages":[]})")) == kUnmappedAgent);
}

TEST_CASE("passthrough is byte-preserving") {
    const std::string canned = R"({"id":"x",  "choices":[{"index":0,"message":{"role":"assistant","content":"ok","x_m":2.50}}], "usage":{"t":1E2}})";
    StubUpstream up(canned);
    Gateway gw(options_for(up.url()));
    const int port = gw.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    std::mt19937_64 rng(5);
    std::vector<std::string> sent;
    for (int i = 0; i < 60; ++i) {
        sent.push_back(fixtures::random_request(rng, i));
        auto res = cli.Post("/v1/chat/completions", {{"x-mas-task", "t"}}, sent.back(), "application/json");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->body == canned);
    }
    CHECK(up.bodies() == sent);
    CHECK(gw.fault_events() == 0);
    CHECK(gw.events("t").size() == 120);  // msg_sent + msg_received per request

    auto health = cli.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    gw.stop();
}

TEST_CASE("blind trust directive reaches upstream for the targeted agent only") {
    StubUpstream up("", true);
    auto spec = fixtures::sample_spec(FaultType::BlindTrust);
    spec.target.agent = "judge";
    Gateway gw(options_for(up.url(), {spec}));
    const auto req = fixtures::sample_request().dump();
    const auto expected = inject_blind_trust({PromptRole::SystemPrompt, "You are the Reviewer. Check every claim the writer makes.", "judge"},
                                             "writer")
                              .text;

    auto r = gw.handle_chat(req, {{"x-mas-agent", "judge"}, {"x-mas-task", "t1"}});
    REQUIRE(r.status == 200);
    const auto echoed = ordered_json::parse(ordered_json::parse(r.body)["choices"][0]["message"]["content"].get<std::string>());
    CHECK(echoed["messages"][0]["content"] == expected);
    CHECK(echoed["x_vendor"] == fixtures::sample_request()["x_vendor"]);

    auto other = gw.handle_chat(req, {{"x-mas-agent", "writer"}, {"x-mas-task", "t1"}});
    CHECK(up.bodies().back() == req);
    CHECK(other.status == 200);

    const auto events = gw.events("t1");
    std::size_t injected = 0;
    for (const auto& e : events) {
        if (e.kind != EventKind::FaultInjected) continue;
        ++injected;
        CHECK(e.agent_id == "judge");
        CHECK(e.point == InterceptionPoint::SystemPromptInit);
    }
    CHECK(injected == 1);
}

TEST_CASE("upstream failure is a 502 with nothing recorded") {
    // nothing listens on port 1
    auto opts = options_for("http://127.0.0.1:1", {fixtures::sample_spec(FaultType::BlindTrust)});
    opts.upstream_timeout_s = 2;
    Gateway gw(opts);
    auto r = gw.handle_chat(fixtures::sample_request().dump(), {{"x-mas-agent", "judge"}, {"x-mas-task", "t"}});
    CHECK(r.status == 502);
    CHECK(json::parse(r.body)["error"]["type"] == "upstream_unreachable");
    CHECK(gw.fault_events() == 0);
    CHECK(gw.events("t").empty());
}

TEST_CASE("malformed requests are rejected") {
    StubUpstream up("{}");
    Gateway gw(options_for(up.url()));
    for (const char* bad : {"not json", "[]", R"({"messages":[]})", R"({"model":"m","messages":{}})",
                            R"({"model":"m","messages":[{"role":"wizard","content":"x"}]})"}) {
        CHECK_MESSAGE(gw.handle_chat(bad, {}).status == 400, bad);
    }
    CHECK(up.bodies().empty());
}

TEST_CASE("injection locality for every fault type") {
    for (auto type : kAllFaultTypes) {
        const auto r = fixtures::check_locality(type);
        CAPTURE(fault_type_name(type));
        if (!point_of(type)) {
            CHECK(r.rejected);
            continue;
        }
        CHECK(r.changed);
        CHECK(r.fault_events == 1);
        CHECK_MESSAGE(r.violation.empty(), r.violation);
    }
}

TEST_CASE("tool call corruption keeps the envelope") {
    Interceptor ic({fixtures::sample_spec(FaultType::ParameterFormatError)});
    auto resp = fixtures::sample_response();
    EventBuffer sink;
    REQUIRE(ic.egress(resp, fixtures::sample_request(), {"engineer", "t"}, sink));
    const auto& fn = resp["choices"][0]["message"]["tool_calls"][0]["function"];
    CHECK(fn["name"] == "search");
    CHECK(json::parse(fn["arguments"].get<std::string>(), nullptr, false).is_discarded());
    CHECK(resp["choices"][0]["message"]["tool_calls"][0]["id"] == "call_1");
}

TEST_CASE("task_result closes the trace file") {
    const auto dir = fs::temp_directory_path() / "masfire_test_gateway";
    fs::remove_all(dir);
    StubUpstream up(fixtures::sample_response().dump());
    auto opts = options_for(up.url(), {fixtures::sample_spec(FaultType::Hallucination)});
    opts.trace_dir = dir;
    opts.run_id = "spec-Hallucination";
    {
        Gateway gw(opts);
        CHECK(gw.handle_chat(fixtures::sample_request().dump(), {{"x-mas-agent", "analyst"}, {"x-mas-task", "task 1"}}).status == 200);
        CHECK(gw.handle_chat(fixtures::sample_request().dump(), {{"x-mas-agent", "analyst"}}).status == 200);
        CHECK(gw.handle_task_result(R"({"task_id":"task 1","success":false})").status == 200);
        CHECK(gw.handle_task_result(R"({"task_id":"task 1","success":true})").status == 409);
        CHECK(gw.handle_task_result(R"({"success":true})").status == 400);
        CHECK(gw.fault_events() == 2);
    }
    const auto rp = replay(dir / (safe_file_stem("task 1") + ".jsonl"));
    REQUIRE(rp.outcome);
    CHECK_FALSE(rp.outcome->success);
    CHECK(rp.header.run_id == "spec-Hallucination");
    CHECK(rp.events.size() == 4);
    const auto untracked = replay(dir / (safe_file_stem(kUntrackedTask) + ".jsonl"));
    CHECK_FALSE(untracked.outcome);
    fs::remove_all(dir);
}

TEST_CASE("streamed requests are buffered and re-emitted whole") {
    StubUpstream up(fixtures::sample_response().dump());
    Gateway gw(options_for(up.url()));
    auto req = fixtures::sample_request();
    req["stream"] = true;
    auto r = gw.handle_chat(req.dump(), {});
    CHECK(r.content_type == "text/event-stream");
    CHECK(r.body.starts_with("data: {"));
    CHECK(r.body.ends_with("data: [DONE]\n\n"));
    CHECK(ordered_json::parse(up.bodies().at(0))["stream"] == false);
}

TEST_CASE("upstream credentials") {
    StubUpstream up("{}");
    Gateway gw(options_for(up.url()));
    gw.handle_chat(R"({"model":"m","messages":[]})", {{"authorization", "Bearer client"}});
    ::setenv("MASFIRE_UPSTREAM_API_KEY", "server-key", 1);
    gw.handle_chat(R"({"model":"m","messages":[]})", {{"authorization", "Bearer client"}});
    ::unsetenv("MASFIRE_UPSTREAM_API_KEY");
    const auto auth = up.auth();
    REQUIRE(auth.size() == 2);
    CHECK(auth[0] == "Bearer client");
    CHECK(auth[1] == "Bearer server-key");
}

TEST_CASE("gateway refuses routing and undelegatable plans") {
    CHECK_THROWS_AS(Interceptor({fixtures::sample_spec(FaultType::MessageStorm)}), Error);
    auto delegated = fixtures::sample_spec(FaultType::Hallucination);
    delegated.mode = InjectionMode::Delegated;
    CHECK_THROWS_AS(Interceptor({delegated}), Error);
    CHECK_THROWS_AS(Gateway(options_for("localhost:9000")), Error);
}
