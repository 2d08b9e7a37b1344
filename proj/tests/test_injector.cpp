#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "masfire/error.hpp"
#include "masfire/injector.hpp"

using namespace masfire;

namespace {

const std::vector<IntegrityRule> kConstraint{{IntegrityCheck::ConstraintAdded}};
const std::vector<IntegrityRule> kVagued{{IntegrityCheck::TermsVagued}};

/// Endpoint scripted per attempt; "!" entries simulate transport failures.
class ScriptedEndpoint : public InjectorEndpoint {
public:
    explicit ScriptedEndpoint(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const ChatRequest& request) override {
        seeds.push_back(request.seed);
        const auto& r = replies_.at(std::min(calls++, replies_.size() - 1));
        if (r == "!") throw Error(Errc::InjectorUnavailable, "scripted outage");
        return r;
    }
    std::string identity() const override { return "scripted"; }
    std::size_t calls = 0;
    std::vector<std::uint64_t> seeds;

private:
    std::vector<std::string> replies_;
};

}  // namespace

TEST_CASE("content words and retention") {
    CHECK(content_words("Sort BY revenue, descending!") == std::vector<std::string>{"sort", "revenue", "descending"});
    CHECK(keyword_retention("a b c d", "a b") == doctest::Approx(0.5));
    CHECK(keyword_retention("", "anything") == 1.0);
    CHECK(is_constraint_marker("Never"));
    CHECK(is_constraint_marker("shouldn't"));
}

TEST_CASE("check_integrity examples") {
    CHECK_FALSE(check_integrity("orders over $100 get 10% off", "orders over $100 get 10% off", kConstraint).pass);
    CHECK(check_integrity("sort by revenue", "organize the data appropriately", kVagued).pass);
    auto r = check_integrity("a b c d", "a b", {{IntegrityCheck::KeywordsRetained, 0.75}});
    CHECK_FALSE(r.pass);
    CHECK(r.failed == std::vector<std::string>{"keywords_retained(0.75)"});
    CHECK(check_integrity("a b c d", "a b", {{IntegrityCheck::KeywordsRetained, 0.5}}).pass);
}

TEST_CASE("constraint and vagueness checks") {
    const std::string task = "orders over $100 get 10% off";
    CHECK(check_integrity(task, task + ", and the discount amount must not exceed $5", kConstraint).pass);
    // New words without a constraint marker do not count.
    CHECK_FALSE(check_integrity(task, task + " today for loyal customers", kConstraint).pass);
    CHECK_FALSE(check_integrity("sort by revenue", "sort by revenue", kVagued).pass);
    CHECK_FALSE(check_integrity("sort by revenue", "", kVagued).pass);
}

TEST_CASE("structured checks") {
    const std::string call = R"({"name":"calculator","arguments":{"expr":"2+2"}})";
    const std::vector<IntegrityRule> rules{{IntegrityCheck::SchemaParseable}, {IntegrityCheck::NameChanged}};
    CHECK(check_integrity(call, R"({"name":"web_search","arguments":{"expr":"2+2"}})", rules).pass);
    CHECK_FALSE(check_integrity(call, call, rules).pass);
    CHECK(check_integrity(call, R"({"name":"web_search","arguments":)", rules).failed.size() == 2);
    CHECK_FALSE(check_integrity(call, R"({"tool":"web_search"})", {{IntegrityCheck::SchemaParseable}}).pass);
}

TEST_CASE("default catalog covers the semantic faults") {
    const auto& cat = default_templates();
    CHECK_FALSE(cat.version.empty());
    for (auto t : kAllFaultTypes) {
        if (is_semantic(t)) {
            CHECK_FALSE(cat.for_fault(t).integrity_rules.empty());
        } else {
            CHECK_THROWS_AS(cat.for_fault(t), Error);
        }
    }
    CHECK(cat.for_fault(FaultType::ToolSelectionError).output_contract == OutputContract::StructuredObject);
    CHECK(cat.prompt("blind_trust").find("{trusted_agent}") != std::string::npos);
    CHECK_THROWS_AS(parse_template_catalog(R"({"schema_version":1,"catalog_version":"x","prompt_templates":{},"fault_templates":[]})"),
                    Error);
}

TEST_CASE("request digest ignores extra wire fields") {
    ChatRequest r{"m", {{"system", "s"}, {"user", "u"}}, 3};
    auto body = r.to_json();
    body["temperature"] = 0.2;
    body["messages"][0]["name"] = "x";
    CHECK(request_digest(body) == request_digest(r));
    r.seed = 4;
    CHECK(request_digest(body) != request_digest(r));
}

TEST_CASE("delegate with mock fixture") {
    const auto& tmpl = default_templates().for_fault(FaultType::InstructionLogicConflict);
    const std::string original = "Apply the discount: orders over $100 get 10% off.";
    const std::string canned = "Apply the discount: orders over $100 get 10% off, and the discount amount must not exceed $5.";
    DelegateOptions opts;
    opts.seed = 11;
    opts.spec_id = "conf";

    Fixture fx;
    fx.add(request_digest(build_injector_request(tmpl, original, opts.model, opts.seed, 0)), {200, canned});
    MockEndpoint mock(fx);
    EventBuffer sink;
    CHECK(delegate(original, tmpl, mock, opts, &sink) == canned);
    REQUIRE(sink.events.size() == 1);
    CHECK(sink.events[0].kind == EventKind::InjectionAttempt);
    CHECK(sink.events[0].detail["attempt"] == 0);
    CHECK(sink.events[0].detail["outcome"] == "pass");

    SUBCASE("fixture round trip") {
        auto again = Fixture::from_json(fx.to_json());
        MockEndpoint m2(again);
        CHECK(delegate(original, tmpl, m2, opts, nullptr) == canned);
    }
    SUBCASE("unknown digest is an outage") {
        MockEndpoint empty{Fixture{}};
        try {
            delegate(original, tmpl, empty, opts, nullptr);
            FAIL("expected InjectorUnavailable");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::InjectorUnavailable);
        }
        CHECK(empty.calls() == 3);
    }
}

TEST_CASE("delegate retries until integrity passes") {
    const auto& tmpl = default_templates().for_fault(FaultType::InstructionLogicConflict);
    const std::string original = "orders over $100 get 10% off";
    const std::string good = original + " and the discount must not exceed $5";
    DelegateOptions opts;
    opts.max_retries = 2;

    SUBCASE("rule violations on every attempt") {
        ScriptedEndpoint ep({"completely unrelated words"});
        EventBuffer sink;
        try {
            delegate(original, tmpl, ep, opts, &sink);
            FAIL("expected IntegrityCheckFailed");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::IntegrityCheckFailed);
        }
        CHECK(sink.events.size() == 3);
        CHECK(ep.seeds == std::vector<std::uint64_t>{0, 1, 2});
        for (const auto& e : sink.events) CHECK(e.detail["outcome"] == "integrity_failed");
    }
    SUBCASE("recovers on the last attempt") {
        ScriptedEndpoint ep({"nope", "!", good});
        EventBuffer sink;
        CHECK(delegate(original, tmpl, ep, opts, &sink) == good);
        CHECK(sink.events.size() == 3);
        CHECK(sink.events[1].detail["outcome"] == "transport_error");
    }
    SUBCASE("only outages") {
        ScriptedEndpoint ep({"!"});
        CHECK_THROWS_WITH(delegate(original, tmpl, ep, opts, nullptr), doctest::Contains("InjectorUnavailable"));
    }
    SUBCASE("zero retries") {
        opts.max_retries = 0;
        ScriptedEndpoint ep({"nope", good});
        EventBuffer sink;
        CHECK_THROWS_AS(delegate(original, tmpl, ep, opts, &sink), Error);
        CHECK(sink.events.size() == 1);
    }
}

TEST_CASE("structured contracts strip code fences") {
    CHECK(strip_code_fence("```json\n{\"a\":1}\n```") == "{\"a\":1}");
    CHECK(strip_code_fence("  plain ") == "plain");
    const auto& tmpl = default_templates().for_fault(FaultType::ToolSelectionError);
    ScriptedEndpoint ep({"```json\n{\"name\":\"web_search\",\"arguments\":{\"expr\":\"2+2\"}}\n```"});
    CHECK(delegate(R"({"name":"calculator","arguments":{"expr":"2+2"}})", tmpl, ep, {}, nullptr) ==
          R"({"name":"web_search","arguments":{"expr":"2+2"}})");
}

TEST_CASE("client applies keyword retention overrides") {
    ScriptedEndpoint ep({"x"});
    InjectorConfig cfg;
    cfg.keyword_retention["InstructionAmbiguity"] = 0.25;
    cfg.keyword_retention["InstructionLogicConflict"] = 0.9;
    auto client = InjectorClient::from_config(ep, cfg);
    const auto& amb = client.catalog().for_fault(FaultType::InstructionAmbiguity).integrity_rules;
    CHECK(amb.front().check == IntegrityCheck::KeywordsRetained);
    CHECK(amb.front().min_fraction == doctest::Approx(0.25));
    CHECK(client.catalog().for_fault(FaultType::InstructionLogicConflict).integrity_rules.front().min_fraction == doctest::Approx(0.9));
    cfg.keyword_retention = {{"MessageStorm", 0.5}};
    CHECK_THROWS_AS(InjectorClient::from_config(ep, cfg), Error);
}

TEST_CASE("http endpoint talks chat completions") {
    httplib::Server srv;
    std::string seen_auth;
    srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        auto body = json::parse(req.body);
        json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo:" + body["messages"][1]["content"].get<std::string>()}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    ::setenv("MASFIRE_TEST_KEY", "sekrit", 1);
    HttpEndpoint ep("http://127.0.0.1:" + std::to_string(port), "MASFIRE_TEST_KEY", 5);
    ChatRequest r{"m", {{"system", "s"}, {"user", "hello"}}, 0};
    CHECK(ep.complete(r) == "echo:hello");
    CHECK(seen_auth == "Bearer sekrit");
    srv.stop();
    th.join();

    HttpEndpoint dead("http://127.0.0.1:" + std::to_string(port), "MASFIRE_TEST_KEY", 1);
    try {
        dead.complete(r);
        FAIL("expected InjectorUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::InjectorUnavailable);
    }
}
