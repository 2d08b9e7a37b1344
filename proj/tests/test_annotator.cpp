#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "masfire/annotator.hpp"
#include "masfire/error.hpp"
#include "masfire/resources.hpp"
#include "masfire/sim.hpp"

using namespace masfire;
namespace fs = std::filesystem;

namespace {

TraceEvent ft(EventKind kind, FtTier tier, std::uint64_t seq) {
    TraceEvent e;
    e.seq = seq;
    e.kind = kind;
    e.tier = tier;
    e.agent_id = "a";
    return e;
}

constexpr auto S = TierOutcome::Success;
constexpr auto F = TierOutcome::Failure;
constexpr auto I = TierOutcome::Inactive;

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return Errc::Io;
}

/// Replies from a fixed script, one entry per call; "!" means a transport error.
class ScriptedJudge : public InjectorEndpoint {
public:
    explicit ScriptedJudge(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const ChatRequest& request) override {
        requests.push_back(request);
        const auto r = replies_.at(std::min(calls_++, replies_.size() - 1));
        if (r == "!") throw Error(Errc::InjectorUnavailable, "judge down");
        return r;
    }
    std::string identity() const override { return "scripted-judge"; }
    std::vector<ChatRequest> requests;

private:
    std::vector<std::string> replies_;
    std::size_t calls_ = 0;
};

}  // namespace

TEST_CASE("rule-based annotation") {
    auto tag = annotate_rule_based({ft(EventKind::FtTriggered, FtTier::Rule, 0), ft(EventKind::FtFixed, FtTier::Rule, 1)});
    CHECK(tag.tiers == TierSignature{I, S, I, I});
    CHECK(annotate_rule_based({}).tiers == TierSignature{I, I, I, I});
    CHECK(annotate_rule_based({ft(EventKind::FtTriggered, FtTier::Reasoning, 0)}).tiers == TierSignature{I, I, I, F});

    CHECK(code_of([] { annotate_rule_based({ft(EventKind::FtFixed, FtTier::Rule, 0)}); }) == Errc::CorruptTrace);
    auto untiered = ft(EventKind::FtTriggered, FtTier::Rule, 0);
    untiered.tier.reset();
    CHECK(code_of([&] { annotate_rule_based({untiered}); }) == Errc::CorruptTrace);

    // catalog label when the signature matches one row
    auto labeled = annotate_rule_based({ft(EventKind::FtTriggered, FtTier::Reasoning, 0)}, FaultType::InexecutablePlan);
    REQUIRE(labeled.label);
    CHECK(*labeled.label == "No corrective behavior");
    // idempotent
    CHECK(annotate_rule_based({ft(EventKind::FtTriggered, FtTier::Reasoning, 0)}, FaultType::InexecutablePlan) == labeled);
}

TEST_CASE("behavior catalog") {
    const auto& c = default_behavior_catalog();
    CHECK(c.groups.size() == 13);
    for (auto t : kAllFaultTypes) CHECK(c.for_fault(t) != nullptr);
    CHECK(c.for_fault(FaultType::ParameterFormatError) == c.for_fault(FaultType::ToolSelectionError));

    auto raw = json::parse(resources::behavior_catalog());
    auto bad = raw;
    bad["groups"][0]["behaviors"][0]["mechanism"] = "SF";
    CHECK(code_of([&] { parse_behavior_catalog(bad); }) == Errc::Schema);
    bad = raw;
    bad["groups"].erase(bad["groups"].begin());
    CHECK(code_of([&] { parse_behavior_catalog(bad); }) == Errc::Schema);
    bad = raw;
    bad["groups"][0]["behaviors"][0]["extra"] = 1;
    CHECK(code_of([&] { parse_behavior_catalog(bad); }) == Errc::Schema);
    bad = raw;
    bad["groups"][0]["behaviors"].push_back(bad["groups"][0]["behaviors"][0]);
    CHECK(code_of([&] { parse_behavior_catalog(bad); }) == Errc::Schema);
    bad = raw;
    bad["groups"][0]["behaviors"][0]["rule"] = "I";
    CHECK(code_of([&] { parse_behavior_catalog(bad); }) == Errc::Schema);
}

TEST_CASE("verdict grammar") {
    const auto* g = default_behavior_catalog().for_fault(FaultType::InexecutablePlan);
    auto v = parse_verdict("MECHANISM=S RULE=I PROMPT=I REASONING=F LABEL=Responds to error but ultimately fails", g);
    REQUIRE(v);
    CHECK(v->tiers == TierSignature{S, I, I, F});
    CHECK(*v->label == "Responds to error but ultimately fails");
    CHECK(parse_verdict("Sure!\nMECHANISM=I RULE=I PROMPT=I REASONING=I\n", g));
    CHECK_FALSE(parse_verdict("The system recovered well.", g));
    CHECK_FALSE(parse_verdict("MECHANISM=X RULE=I PROMPT=I REASONING=I", g));
    CHECK_FALSE(parse_verdict("MECHANISM=S RULE=I PROMPT=I REASONING=I LABEL=Made up behavior", g));
    CHECK_FALSE(parse_verdict("MECHANISM=S RULE=I PROMPT=I REASONING=I\nMECHANISM=F RULE=I PROMPT=I REASONING=I", g));
}

TEST_CASE("llm annotation with a mock judge") {
    const auto& cat = default_behavior_catalog();
    std::vector<TraceEvent> events{ft(EventKind::FtTriggered, FtTier::Mechanism, 0), ft(EventKind::FtFixed, FtTier::Mechanism, 1)};

    ScriptedJudge good({"MECHANISM=S RULE=I PROMPT=I REASONING=I LABEL=Restores faulty plan via inherent process"});
    auto tag = annotate_llm(events, FaultType::InexecutablePlan, cat, good);
    CHECK(tag.tiers == TierSignature{S, I, I, I});
    CHECK(*tag.label == "Restores faulty plan via inherent process");
    CHECK(tag.provenance["judge"] == "scripted-judge");
    REQUIRE(good.requests.size() == 1);
    CHECK(good.requests[0].messages[0].content.find("Restores faulty plan via inherent process") != std::string::npos);
    CHECK(good.requests[0].messages[1].content.find("ft_triggered") != std::string::npos);

    ScriptedJudge prose({"It looks fine to me."});
    CHECK(code_of([&] { annotate_llm(events, FaultType::InexecutablePlan, cat, prose); }) == Errc::UnparseableVerdict);
    CHECK(prose.requests.size() == 3);
    CHECK(prose.requests[1].seed == prose.requests[0].seed + 1);

    ScriptedJudge late({"nope", "MECHANISM=I RULE=I PROMPT=I REASONING=I"});
    CHECK(annotate_llm(events, std::nullopt, cat, late).provenance["attempts"] == 2);

    ScriptedJudge down({"!"});
    CHECK(code_of([&] { annotate_llm(events, std::nullopt, cat, down); }) == Errc::JudgeUnavailable);
}

TEST_CASE("transcripts are cut to the last K events under budget") {
    std::vector<TraceEvent> events;
    for (std::uint64_t i = 0; i < 500; ++i) {
        TraceEvent e;
        e.seq = i;
        e.agent_id = "agent";
        e.detail = {{"note", std::string(40, 'x')}};
        events.push_back(e);
    }
    const auto full = render_transcript(events, 1'000'000, 10);
    CHECK_FALSE(full.truncated());
    for (std::size_t budget : {4000u, 1000u, 300u, 10u}) {
        const auto t = render_transcript(events, budget, 20);
        CHECK(t.text.size() <= budget);
        CHECK(t.truncated());
        CHECK(t.events_kept <= 20);
    }
    const auto t = render_transcript(events, 4000, 20);
    CHECK(t.events_kept == 20);
    CHECK(t.text.starts_with("#480 "));

    ScriptedJudge judge({"MECHANISM=I RULE=I PROMPT=I REASONING=I"});
    JudgeOptions opts;
    opts.context_budget = 2000;
    opts.last_k = 15;
    auto tag = annotate_llm(events, std::nullopt, default_behavior_catalog(), judge, opts);
    CHECK(tag.provenance["truncated"] == true);
    CHECK(tag.provenance["transcript_chars"].get<std::size_t>() <= 2000);
}

TEST_CASE("cohen kappa") {
    CHECK(cohen_kappa({"X", "Y", "Z", "X"}, {"X", "Y", "Z", "X"}) == 1.0);
    CHECK(cohen_kappa({"X", "X", "Y", "Y"}, {"X", "Y", "X", "Y"}) == 0.0);
    CHECK(cohen_kappa({"X", "X"}, {"X", "X"}) == 1.0);
    CHECK(code_of([] { cohen_kappa({"X"}, {"X", "Y"}); }) == Errc::LengthMismatch);
    CHECK(code_of([] { cohen_kappa({}, {}); }) == Errc::EmptyInput);

    std::mt19937_64 rng(8);
    const char* labels[] = {"S", "F", "I"};
    for (int i = 0; i < 100; ++i) {
        std::vector<std::string> a, b;
        const auto n = 1 + rng() % 30;
        for (std::size_t k = 0; k < n; ++k) {
            a.push_back(labels[rng() % 3]);
            b.push_back(labels[rng() % 3]);
        }
        const double ab = cohen_kappa(a, b);
        CHECK(ab == cohen_kappa(b, a));
        CHECK(ab >= -1.0);
        CHECK(ab <= 1.0);
    }

    std::vector<BehaviorTag> ta(3), tb(3);
    ta[0].tiers = {S, I, I, F};
    tb[0].tiers = {S, I, I, F};
    ta[1].tiers = {I, S, I, I};
    tb[1].tiers = {I, S, I, I};
    const auto r = tag_agreement(ta, tb);
    CHECK(r.pooled == 1.0);
    CHECK(r.per_tier[0] == 1.0);
}

TEST_CASE("annotate_campaign writes tags into the manifest") {
    CampaignConfig cfg;
    cfg.campaign_seed = 12;
    cfg.tasks = {{"a", "Plan the office move."}, {"b", "Estimate the budget for the move."}};
    cfg.simulator = SimulatorTarget{preset_scenario("linear_pipeline")};
    FaultSpec s;
    s.id = "storm";
    s.fault_type = FaultType::MessageStorm;
    s.target.kind = TargetSelector::Kind::BusEdge;
    s.params = {{"replication_factor", 3}};
    cfg.fault_specs = {s};
    const auto dir = fs::temp_directory_path() / "masfire_test_annotator";
    fs::remove_all(dir);
    CampaignOptions opts;
    opts.out_dir = dir;
    run_campaign(cfg, opts);

    auto ann = annotate_campaign(
        dir, "rule", [](const Replay& rp, std::optional<FaultType> t) { return annotate_rule_based(rp.events, t); }, 2);
    REQUIRE(ann["tasks"].size() == 4);
    std::ifstream in(dir / "manifest.json");
    const auto m = json::parse(in);
    CHECK(m["annotations"]["annotator"] == "rule");
    const auto& storm_task = m["annotations"]["tasks"][2];
    CHECK(storm_task["run_id"] == "storm");
    CHECK(storm_task["tiers"]["Rule"] == "S");
    fs::remove_all(dir);
}
