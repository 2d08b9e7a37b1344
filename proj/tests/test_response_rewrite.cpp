#include <doctest.h>

#include <functional>
#include <random>

#include "masfire/error.hpp"
#include "masfire/response_rewrite.hpp"

using namespace masfire;

namespace {

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return Errc::Io;
}

HistoryWindow history(std::initializer_list<std::pair<std::string, std::string>> msgs) {
    HistoryWindow h;
    h.messages.push_back({"system", "system", "You are helpful."});
    for (const auto& [sender, text] : msgs) h.messages.push_back({sender, sender == "user" ? "user" : "assistant", text});
    return h;
}

AgentOutput tool_output(std::string name, json args) {
    return {"engineer", OutputKind::ToolCall, "", ToolCall{std::move(name), std::move(args), std::nullopt}};
}

FaultSpec spec_of(FaultType type, json params = json::object()) {
    FaultSpec s;
    s.id = "s";
    s.fault_type = type;
    s.params = std::move(params);
    s.mode = InjectionMode::Deterministic;
    return s;
}

}  // namespace

TEST_CASE("swap_tool_deterministic") {
    ToolCall calc{"calculator", {{"expr", "2+2"}}, std::nullopt};
    CHECK(swap_tool_deterministic(calc, {"calculator", "web_search"}, 0).tool_name == "web_search");
    CHECK(swap_tool_deterministic(calc, {"calculator", "web_search"}, 0).arguments == calc.arguments);
    CHECK(code_of([&] { swap_tool_deterministic(calc, {"calculator"}, 0); }) == Errc::CatalogTooSmall);
    CHECK(code_of([&] { swap_tool_deterministic(calc, {"a", "b"}, 0); }) == Errc::CatalogTooSmall);
    ToolCall a{"a", json::object(), std::nullopt};
    CHECK(swap_tool_deterministic(a, {"a", "b", "c"}, 1).tool_name == "c");
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(swap_tool_deterministic(a, {"a", "b", "c", "d"}, seed).tool_name != "a");
}

TEST_CASE("drop_memory") {
    auto h = history({{"user", "m1"}, {"planner", "m2"}, {"reviewer", "m3"}, {"planner", "m4"}, {"reviewer", "m5"}});
    auto out = drop_memory(h, DropFirstN{2});
    REQUIRE(out.messages.size() == 4);
    CHECK(out.messages[0].is_system());
    CHECK(out.messages[1].text == "m3");
    CHECK(out.messages[3].text == "m5");

    auto no_rev = drop_memory(h, DropAgent{"reviewer"});
    CHECK(no_rev.non_system_count() == 3);
    for (const auto& m : no_rev.messages) CHECK(m.sender != "reviewer");

    CHECK(code_of([&] { drop_memory(h, DropFirstN{5}); }) == Errc::WouldEmptyHistory);
    CHECK(code_of([&] { drop_memory(h, DropAgent{"ghost"}); }) == Errc::UnknownAgent);
}

TEST_CASE("violate_context") {
    auto sized = [](std::vector<std::size_t> sizes) {
        HistoryWindow h;
        h.messages.push_back({"system", "system", "sys"});
        char c = 'a';
        for (auto n : sizes) h.messages.push_back({"agent", "assistant", std::string(n, c++)});
        return h;
    };
    auto out = violate_context(sized({100, 100, 100}), 150);
    REQUIRE(out.messages.size() == 3);
    CHECK(out.messages[0].text == "sys");
    CHECK(out.messages[1].text == kContextTruncatedMarker);
    CHECK(out.messages[2].text == std::string(100, 'c'));

    auto two = violate_context(sized({50, 50, 50}), 100);
    REQUIRE(two.messages.size() == 4);
    CHECK(two.messages[2].text == std::string(50, 'b'));
    CHECK(two.messages[3].text == std::string(50, 'c'));

    CHECK(code_of([&] { violate_context(sized({100, 100, 100}), 300); }) == Errc::BudgetNotBinding);

    // Characters, not bytes.
    HistoryWindow utf;
    utf.messages.push_back({"a", "user", "\xC3\xA9\xC3\xA9"});
    CHECK(code_of([&] { violate_context(utf, 2); }) == Errc::BudgetNotBinding);
}

TEST_CASE("history mutators preserve order and system messages") {
    std::mt19937_64 rng(99);
    for (int iter = 0; iter < 300; ++iter) {
        HistoryWindow h;
        const int n = 2 + static_cast<int>(rng() % 10);
        for (int i = 0; i < n; ++i) {
            const bool sys = rng() % 4 == 0;
            h.messages.push_back({sys ? "system" : "agent" + std::to_string(rng() % 3), sys ? "system" : "assistant",
                                  "msg" + std::to_string(i) + std::string(rng() % 30, 'x')});
        }
        if (h.non_system_count() < 2) continue;
        auto check = [&](const HistoryWindow& out) {
            std::size_t cursor = 0;
            for (const auto& m : out.messages) {
                if (m.text == kContextTruncatedMarker) continue;
                while (cursor < h.messages.size() && !(h.messages[cursor] == m)) {
                    CHECK_FALSE(h.messages[cursor].is_system());
                    ++cursor;
                }
                REQUIRE(cursor < h.messages.size());
                ++cursor;
            }
            for (; cursor < h.messages.size(); ++cursor) CHECK_FALSE(h.messages[cursor].is_system());
        };
        check(drop_memory(h, DropFirstN{1 + rng() % (h.non_system_count() - 1)}));
        std::size_t total = 0;
        for (const auto& m : h.messages) total += m.is_system() ? 0 : m.text.size();
        check(violate_context(h, 1 + rng() % (total - 1)));
    }
}

TEST_CASE("corrupt_format examples") {
    CHECK(corrupt_format(R"({"a":1})", CorruptionKind::DropClosingDelimiter) == R"({"a":1)");
    CHECK(corrupt_format(R"({"n":5})", CorruptionKind::TypeFlip, "n") == R"({"n":"5"})");
    CHECK(code_of([] { corrupt_format(R"({"q":"x"})", CorruptionKind::RemoveRequiredField, "missing"); }) == Errc::FieldNotFound);
    CHECK(corrupt_format(R"({"q":"x","z":2})", CorruptionKind::RemoveRequiredField, "q") == R"({"z":2})");
    CHECK(code_of([] { corrupt_format(R"({"a":1)", CorruptionKind::DropClosingDelimiter); }) == Errc::AlreadyInvalid);
    CHECK(code_of([] { corrupt_format(R"({"q":"x"})", CorruptionKind::TypeFlip, "q"); }) == Errc::NotApplicable);
    // Field order survives re-serialization.
    CHECK(corrupt_format(R"({"z":1,"a":2})", CorruptionKind::TypeFlip, "a") == R"({"z":1,"a":"2"})");
}

TEST_CASE("parameter swap fallback") {
    ToolCall geo{"get_weather", {{"lat", 52.5}, {"lon", 13.4}, {"unit", "C"}}, std::nullopt};
    auto out = swap_parameters_deterministic(geo);
    CHECK(out.arguments["lat"] == 13.4);
    CHECK(out.arguments["lon"] == 52.5);
    CHECK(out.arguments["unit"] == "C");
    ToolCall single{"f", {{"a", 1}, {"b", "x"}}, std::nullopt};
    CHECK(code_of([&] { swap_parameters_deterministic(single); }) == Errc::NotApplicable);
}

TEST_CASE("offline semantic rewrites") {
    SUBCASE("hallucination hardens hedges") {
        AgentOutput r{"solver", OutputKind::Reasoning, "The answer is likely 42.", std::nullopt};
        CHECK(rewrite_semantic_offline(r, FaultType::Hallucination, spec_of(FaultType::Hallucination)).content ==
              "The answer is definitely 42.");
        r.content = "The answer is 42.";
        CHECK(rewrite_semantic_offline(r, FaultType::Hallucination, spec_of(FaultType::Hallucination)).content ==
              "The answer is 42. This has been independently verified and is beyond doubt.");
    }
    SUBCASE("inexecutable plan adds a circular step") {
        AgentOutput p{"architect", OutputKind::Plan, "1. Parse input.\n2. Compute totals.", std::nullopt};
        const auto out = rewrite_semantic_offline(p, FaultType::InexecutablePlan, spec_of(FaultType::InexecutablePlan));
        CHECK(out.content.starts_with(p.content));
        CHECK(out.content.find("3. Use the plan_dependency_resolver tool on the output of step 3") != std::string::npos);
        CHECK(check_integrity(p.content, out.content, default_templates().for_fault(FaultType::InexecutablePlan).integrity_rules).pass);
    }
    SUBCASE("critical info loss drops the constraint sentence") {
        AgentOutput p{"pm", OutputKind::Plan, "Build a report generator. Output must not exceed 2 pages. Use the sales table.", std::nullopt};
        const auto out = rewrite_semantic_offline(p, FaultType::CriticalInfoLoss, spec_of(FaultType::CriticalInfoLoss));
        CHECK(out.content == "Build a report generator. Use the sales table.");
        p.content = "Just one sentence here.";
        CHECK(code_of([&] { rewrite_semantic_offline(p, FaultType::CriticalInfoLoss, spec_of(FaultType::CriticalInfoLoss)); }) ==
              Errc::NotApplicable);
    }
    SUBCASE("tool selection uses the agent catalog") {
        auto out = rewrite_semantic_offline(tool_output("calculator", {{"expr", "2+2"}}), FaultType::ToolSelectionError,
                                            spec_of(FaultType::ToolSelectionError), {"calculator", "web_search"});
        CHECK(out.tool_call->tool_name == "web_search");
        CHECK(out.tool_call->arguments == json{{"expr", "2+2"}});
        auto spec = spec_of(FaultType::ToolSelectionError, {{"tool_catalog", {"a", "calculator", "b"}}});
        spec.seed = 1;
        CHECK(rewrite_semantic_offline(tool_output("calculator", json::object()), FaultType::ToolSelectionError, spec).tool_call->tool_name ==
              "a");
    }
    SUBCASE("kind mismatch") {
        AgentOutput r{"solver", OutputKind::Reasoning, "x", std::nullopt};
        CHECK(code_of([&] { rewrite_semantic_offline(r, FaultType::InexecutablePlan, spec_of(FaultType::InexecutablePlan)); }) ==
              Errc::KindMismatch);
    }
}

TEST_CASE("rewrite_semantic through a mock injector") {
    const auto out = tool_output("calculator", {{"expr", "2+2"}});
    auto spec = spec_of(FaultType::ToolSelectionError);
    spec.mode = InjectionMode::Delegated;
    spec.seed = 8;
    const auto& tmpl = default_templates().for_fault(FaultType::ToolSelectionError);
    Fixture fx;
    fx.add(request_digest(build_injector_request(tmpl, tool_call_to_json(*out.tool_call).dump(), "injector", 8, 0)),
           {200, R"({"name":"web_search","arguments":{"expr":"2+2"}})"});
    MockEndpoint mock(fx);
    InjectorClient client(mock);
    EventBuffer sink;
    RewriteContext ctx{"engineer", &sink, &client, {}};
    const auto mutated = apply_output_fault(spec, out, ctx);
    CHECK(mutated.tool_call->tool_name == "web_search");
    CHECK(mutated.tool_call->arguments == out.tool_call->arguments);
    REQUIRE(sink.events.size() == 2);
    CHECK(sink.events[0].kind == EventKind::InjectionAttempt);
    CHECK(sink.events[1].kind == EventKind::FaultInjected);
    CHECK(sink.events[1].point == InterceptionPoint::ToolCallEgress);
    CHECK(sink.events[1].detail["tool_after"] == "web_search");

    AgentOutput hallu{"solver", OutputKind::Reasoning, "the answer is likely 42", std::nullopt};
    auto hspec = spec_of(FaultType::Hallucination);
    hspec.mode = InjectionMode::Delegated;
    fx.add(request_digest(build_injector_request(default_templates().for_fault(FaultType::Hallucination), hallu.content, "injector", 0, 0)),
           {200, "the answer is definitely 42"});
    MockEndpoint mock2(fx);
    InjectorClient c2(mock2);
    CHECK(rewrite_semantic(hallu, FaultType::Hallucination, c2, hspec).content == "the answer is definitely 42");
}

TEST_CASE("format fault keeps the tool call and marks raw arguments") {
    EventBuffer sink;
    RewriteContext ctx{"engineer", &sink, nullptr, {}};
    const auto out = tool_output("search", {{"query", "shoes"}, {"limit", 5}});
    auto drop = apply_output_fault(spec_of(FaultType::ParameterFormatError, {{"corruption_kind", "drop_closing_delimiter"}}), out, ctx);
    REQUIRE(drop.tool_call->raw_arguments);
    CHECK(json::parse(*drop.tool_call->raw_arguments, nullptr, false).is_discarded());
    auto flip = apply_output_fault(spec_of(FaultType::ParameterFormatError, {{"corruption_kind", "type_flip"}, {"field", "limit"}}), out, ctx);
    CHECK(flip.tool_call->arguments["limit"] == "5");
    CHECK(sink.events.size() == 2);
}

TEST_CASE("history fault dispatch") {
    EventBuffer sink;
    RewriteContext ctx{"reviewer", &sink, nullptr, {}};
    auto h = history({{"user", "m1"}, {"planner", "m2"}, {"reviewer", "m3"}});
    auto mem = apply_history_fault(spec_of(FaultType::MemoryLoss, {{"drop_first_n", 1}}), h, ctx);
    CHECK(mem.non_system_count() == 2);
    auto ctxv = apply_history_fault(spec_of(FaultType::ContextLengthViolation, {{"char_budget", 2}}), h, ctx);
    CHECK(ctxv.non_system_count() == 1);
    REQUIRE(sink.events.size() == 2);
    CHECK(sink.events[0].point == InterceptionPoint::HistoryWindowIngress);
    CHECK(sink.events[0].detail["unit"] == "messages");
}
