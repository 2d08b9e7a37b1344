#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/tier.hpp"

namespace masfire {

enum class Topology { LinearPipeline, CriticRefineLoop, BilateralNegotiation };

std::string_view topology_name(Topology topology) noexcept;

/// Shape of what an agent emits at its output interception point.
enum class OutputKind { Reasoning, Plan, ToolCall, PlainMessage };

std::string_view output_kind_name(OutputKind kind) noexcept;

struct AgentPolicy {
    double p_detect = 0.0;
    double p_fix = 0.0;
    double p_succ_given_fix = 1.0;
    double p_succ_given_unfixed = 0.0;
    bool operator==(const AgentPolicy&) const = default;
};

struct AgentFilters {
    bool dedup = false;
    /// Senders this agent accepts; empty accepts everyone.
    std::set<std::string> subscriptions;
    /// 0 disables the loop guard.
    int loop_guard_max_hops = 0;
    bool operator==(const AgentFilters&) const = default;
};

struct ScriptedAgent {
    std::string id;
    std::string role;
    OutputKind output_kind = OutputKind::PlainMessage;
    std::string system_prompt;
    std::vector<std::string> tools;
    AgentPolicy policy;
    FtTier tier_label = FtTier::Reasoning;
    AgentFilters filters;
    bool operator==(const ScriptedAgent&) const = default;
};

struct Scenario {
    Topology topology = Topology::LinearPipeline;
    std::vector<ScriptedAgent> agents;
    bool shared_pool = false;
    int max_iterations = 3;
    int turn_limit = 10;
    /// Assistant turns needed to produce the goal token in a fault-free negotiation.
    int goal_turns = 4;
    double baseline_success = 1.0;
    bool operator==(const Scenario&) const = default;
};

nlohmann::json scenario_to_json(const Scenario& scenario);
/// Strict parse; throws Error{Schema} on unknown or missing keys.
Scenario scenario_from_json(const nlohmann::json& j);
/// Throws Error{Config} if topology invariants are violated.
void validate_scenario(const Scenario& scenario);

/// Shipped presets: "linear_pipeline", "critic_refine", "bilateral".
Scenario preset_scenario(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace masfire
