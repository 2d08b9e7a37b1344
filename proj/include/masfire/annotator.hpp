#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/injector.hpp"
#include "masfire/taxonomy.hpp"
#include "masfire/tier.hpp"
#include "masfire/tracelog.hpp"

namespace masfire {

enum class TierOutcome { Success, Failure, Inactive };

char outcome_letter(TierOutcome o) noexcept;
std::optional<TierOutcome> parse_outcome_letter(char c) noexcept;

using TierSignature = std::array<TierOutcome, 4>;  // indexed by FtTier

struct BehaviorTag {
    TierSignature tiers{TierOutcome::Inactive, TierOutcome::Inactive, TierOutcome::Inactive, TierOutcome::Inactive};
    std::optional<std::string> label;
    /// How the tag was produced (annotator, truncation); not part of the verdict.
    json provenance = json::object();

    TierOutcome at(FtTier tier) const { return tiers[static_cast<std::size_t>(tier)]; }
    /// Compares the verdict only.
    bool operator==(const BehaviorTag& other) const { return tiers == other.tiers && label == other.label; }
};

json tag_to_json(const BehaviorTag& tag);
/// Inverse of tag_to_json; provenance is kept as-is. Throws Schema.
BehaviorTag tag_from_json(const json& j);

struct CatalogBehavior {
    std::string label;
    TierSignature signature;
};

struct BehaviorGroup {
    std::string name;  // a fault type name, or "ActionFault"
    std::vector<CatalogBehavior> behaviors;
};

struct BehaviorCatalog {
    std::string version;
    std::vector<FaultType> action_members;
    std::vector<BehaviorGroup> groups;

    /// Action faults share one group.
    const BehaviorGroup* for_fault(FaultType type) const;
};

/// Strict: unknown keys, bad outcome letters, empty behaviors, a missing
/// group, or duplicate labels within a group raise Error{Schema}.
BehaviorCatalog parse_behavior_catalog(const json& j);
const BehaviorCatalog& default_behavior_catalog();

/// Per tier: Inactive without ft_triggered, Success if also ft_fixed, else
/// Failure. The label is set when the signature matches exactly one row of
/// the fault's catalog group. Throws CorruptTrace on untiered or unpaired events.
BehaviorTag annotate_rule_based(const std::vector<TraceEvent>& events, std::optional<FaultType> fault_type = std::nullopt,
                                const BehaviorCatalog& catalog = default_behavior_catalog());

struct JudgeOptions {
    std::string model = "judge";
    int max_retries = 2;
    std::size_t context_budget = 12000;  // characters of transcript
    std::size_t last_k = 40;             // events kept when over budget
    std::uint64_t seed = 0;
};

std::string event_line(const TraceEvent& event);

struct Transcript {
    std::string text;
    std::size_t events_total = 0;
    std::size_t events_kept = 0;
    bool truncated() const { return events_kept < events_total; }
};

/// Renders one line per event; over budget, keeps the last K events (fewer
/// if the lines are long) so the text never exceeds the budget.
Transcript render_transcript(const std::vector<TraceEvent>& events, std::size_t budget, std::size_t last_k);

ChatRequest build_judge_request(const Transcript& transcript, std::optional<FaultType> fault_type, const BehaviorCatalog& catalog,
                                const JudgeOptions& options, int attempt);

/// Accepts exactly one line of the form
/// MECHANISM=<S|F|I> RULE=<S|F|I> PROMPT=<S|F|I> REASONING=<S|F|I> [LABEL=<text>].
/// A label must name a behavior of `group` when one is given.
std::optional<BehaviorTag> parse_verdict(std::string_view text, const BehaviorGroup* group = nullptr);

BehaviorTag annotate_llm(const std::vector<TraceEvent>& events, std::optional<FaultType> fault_type, const BehaviorCatalog& catalog,
                         InjectorEndpoint& judge, const JudgeOptions& options = {});

/// κ over two label sequences; 1 when chance agreement is already perfect.
double cohen_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct KappaReport {
    std::array<double, 4> per_tier{};
    double pooled = 0.0;
};

KappaReport tag_agreement(const std::vector<BehaviorTag>& a, const std::vector<BehaviorTag>& b);

using TaskAnnotator = std::function<BehaviorTag(const Replay& trace, std::optional<FaultType> fault_type)>;

/// Annotates every closed trace of a campaign directory and writes the tags
/// into manifest.json under "annotations". At most `in_flight` annotator
/// calls run concurrently.
json annotate_campaign(const std::filesystem::path& dir, const std::string& annotator_name, const TaskAnnotator& annotate,
                       unsigned in_flight = 1);

}  // namespace masfire
