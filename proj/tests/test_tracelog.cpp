#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <functional>
#include <thread>

#include <unistd.h>

#include "masfire/error.hpp"
#include "masfire/tracelog.hpp"

using namespace masfire;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("masfire_" + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

TraceEvent ev(EventKind kind, std::optional<FtTier> tier = std::nullopt) {
    TraceEvent e;
    e.kind = kind;
    e.agent_id = "a";
    e.tier = tier;
    e.payload_digest = "d";
    return e;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return Errc::Io;
}

}  // namespace

TEST_CASE("event json round trip keeps optional fields absent") {
    auto e = ev(EventKind::FaultInjected);
    e.task_id = "t";
    e.spec_id = "s";
    e.point = InterceptionPoint::ToolCallEgress;
    e.detail = {{"k", 1}};
    const auto j = event_to_json(e);
    CHECK_FALSE(j.contains("tier"));
    CHECK_FALSE(j.contains("success"));
    CHECK(event_from_json(j) == e);
    auto bad = j;
    bad["extra"] = 1;
    CHECK_THROWS_AS(event_from_json(bad), Error);
}

TEST_CASE("append invariants") {
    TaskTrace t("t1", "baseline");
    SUBCASE("first event gets seq 0") { CHECK(t.emit(ev(EventKind::MsgSent)).seq == 0); }
    SUBCASE("fix without trigger") {
        CHECK(code_of([&] { t.emit(ev(EventKind::FtFixed, FtTier::Reasoning)); }) == Errc::InvariantViolation);
    }
    SUBCASE("fix pairs by tier") {
        t.emit(ev(EventKind::FtTriggered, FtTier::Rule));
        CHECK(code_of([&] { t.emit(ev(EventKind::FtFixed, FtTier::Reasoning)); }) == Errc::InvariantViolation);
        CHECK_NOTHROW(t.emit(ev(EventKind::FtFixed, FtTier::Rule)));
        CHECK(code_of([&] { t.emit(ev(EventKind::FtFixed, FtTier::Rule)); }) == Errc::InvariantViolation);
    }
    SUBCASE("duplicate task_result") {
        t.finish(true, true);
        CHECK(code_of([&] { t.finish(true, true); }) == Errc::InvariantViolation);
        CHECK(code_of([&] { t.emit(ev(EventKind::MsgSent)); }) == Errc::InvariantViolation);
    }
    SUBCASE("validator rejects non-increasing seq and foreign tasks") {
        TraceValidator v("t1");
        auto a = ev(EventKind::MsgSent);
        a.task_id = "t1";
        a.seq = 3;
        v.accept(a);
        CHECK(code_of([&] { v.accept(a); }) == Errc::InvariantViolation);
        a.seq = 4;
        a.task_id = "t2";
        CHECK(code_of([&] { v.accept(a); }) == Errc::InvariantViolation);
    }
}

TEST_CASE("summary and outcome") {
    TaskTrace t("t1", "spec");
    t.emit(ev(EventKind::FtTriggered, FtTier::Reasoning));
    t.emit(ev(EventKind::FtTriggered, FtTier::Reasoning));
    t.emit(ev(EventKind::FtFixed, FtTier::Reasoning));
    t.emit(ev(EventKind::FtTriggered, FtTier::Mechanism));
    t.finish(false, true);
    auto o = t.outcome();
    REQUIRE(o);
    CHECK(o->ft_summary[static_cast<int>(FtTier::Reasoning)] == TierCounts{2, 1});
    CHECK(o->ft_summary[static_cast<int>(FtTier::Mechanism)] == TierCounts{1, 0});
    CHECK(o->any_triggered());
    CHECK(o->any_fixed());
    CHECK_FALSE(o->success);
    CHECK(summary_from_json(summary_to_json(o->ft_summary)) == o->ft_summary);
}

TEST_CASE("write then replay") {
    TempDir dir("replay");
    TaskTrace t("task/1", "s1");
    auto e = ev(EventKind::FaultInjected);
    e.spec_id = "s1";
    e.point = InterceptionPoint::AgentOutputEgress;
    t.emit(e);
    t.emit(ev(EventKind::FtTriggered, FtTier::Rule));
    t.emit(ev(EventKind::FtFixed, FtTier::Rule));
    t.finish(true, true);
    TraceHeader h;
    h.campaign_seed = 5;
    h.task_id = "task/1";
    h.run_id = "s1";
    h.fault_type = FaultType::Hallucination;
    const auto path = dir.path / "t.jsonl";
    const auto digest = write_trace(path, h, t);
    CHECK(digest == file_sha256(path));

    auto r = replay(path);
    CHECK(r.header == h);
    CHECK(r.events == t.events());
    REQUIRE(r.outcome);
    CHECK(*r.outcome == *t.outcome());

    const auto text = slurp(path);
    SUBCASE("truncated last line") {
        auto cut = text.substr(0, text.size() - 5);
        try {
            replay_text(cut, "t.jsonl");
            FAIL("expected CorruptTrace");
        } catch (const Error& err) {
            CHECK(err.code() == Errc::CorruptTrace);
            CHECK(std::string(err.what()).find("t.jsonl:5:") != std::string::npos);
        }
    }
    SUBCASE("flipped success flag") {
        auto tampered = text;
        const auto pos = tampered.rfind("\"success\":true");
        REQUIRE(pos != std::string::npos);
        tampered.replace(pos, 14, "\"success\":false");
        try {
            replay_text(tampered);
            FAIL("expected CorruptTrace");
        } catch (const Error& err) {
            CHECK(err.code() == Errc::CorruptTrace);
            CHECK(std::string(err.what()).find("OutcomeMismatch") != std::string::npos);
        }
    }
    SUBCASE("garbage line") {
        CHECK(code_of([&] { replay_text(text + "{oops\n"); }) == Errc::CorruptTrace);
    }
    SUBCASE("open trace without task_result") {
        auto lines = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
        auto open = replay_text(lines);
        CHECK_FALSE(open.outcome);
        CHECK(open.events.size() == 3);
    }
}

TEST_CASE("writer rejects invalid appends") {
    TempDir dir("writer");
    TraceHeader h;
    h.task_id = "t";
    TraceWriter w(dir.path / "w.jsonl", h);
    auto e = ev(EventKind::FtFixed, FtTier::Prompt);
    e.task_id = "t";
    CHECK(code_of([&] { w.append(e); }) == Errc::InvariantViolation);
    e.kind = EventKind::MsgSent;
    e.tier.reset();
    w.append(e);
    w.flush();
    CHECK(replay(dir.path / "w.jsonl").events.size() == 1);
}

TEST_CASE("safe file stems") {
    CHECK(safe_file_stem("task-1") == "task-1");
    const auto a = safe_file_stem("a/b");
    const auto b = safe_file_stem("a_b");
    CHECK(a != b);
    CHECK(a.find('/') == std::string::npos);
}

TEST_CASE("trace store serializes concurrent commits") {
    TempDir dir("store");
    TraceStore store(dir.path, 1, "gateway");
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&, i] {
            for (int k = 0; k < 25; ++k) {
                std::vector<TraceEvent> batch{ev(EventKind::MsgReceived), ev(EventKind::MsgSent)};
                store.commit(i % 2 ? "odd" : "even", batch);
            }
        });
    }
    for (auto& t : threads) t.join();
    store.flush_all();
    CHECK(store.total_events() == 400);
    CHECK(store.files().size() == 2);
    for (const auto& f : store.files()) {
        auto r = replay(f);
        CHECK(r.events.size() == 200);
        CHECK(r.events.back().seq == 199);
    }
    SUBCASE("a bad batch leaves the file untouched") {
        std::vector<TraceEvent> bad{ev(EventKind::MsgSent), ev(EventKind::FtFixed, FtTier::Rule)};
        CHECK(code_of([&] { store.commit("odd", bad); }) == Errc::InvariantViolation);
        store.flush_all();
        CHECK(replay(dir.path / "odd.jsonl").events.size() == 200);
    }
}
