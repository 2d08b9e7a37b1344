#include "masfire/scenario.hpp"

#include <set>

#include "json_util.hpp"
#include "masfire/error.hpp"
#include "masfire/resources.hpp"

namespace masfire {

using detail::require;
using detail::require_keys_subset;
using json = nlohmann::json;

std::string_view topology_name(Topology topology) noexcept {
    switch (topology) {
        case Topology::LinearPipeline: return "linear_pipeline";
        case Topology::CriticRefineLoop: return "critic_refine";
        case Topology::BilateralNegotiation: return "bilateral";
    }
    return "?";
}

std::string_view output_kind_name(OutputKind kind) noexcept {
    switch (kind) {
        case OutputKind::Reasoning: return "reasoning";
        case OutputKind::Plan: return "plan";
        case OutputKind::ToolCall: return "tool_call";
        case OutputKind::PlainMessage: return "plain_message";
    }
    return "?";
}

namespace {

Topology parse_topology(const std::string& name) {
    for (auto t : {Topology::LinearPipeline, Topology::CriticRefineLoop, Topology::BilateralNegotiation}) {
        if (topology_name(t) == name) return t;
    }
    throw Error(Errc::Schema, "unknown topology '" + name + "'");
}

OutputKind parse_output_kind(const std::string& name) {
    for (auto k : {OutputKind::Reasoning, OutputKind::Plan, OutputKind::ToolCall, OutputKind::PlainMessage}) {
        if (output_kind_name(k) == name) return k;
    }
    throw Error(Errc::Schema, "unknown output_kind '" + name + "'");
}

ScriptedAgent agent_from_json(const json& j) {
    constexpr std::string_view where = "agents[]";
    require_keys_subset(j, {"id", "role", "output_kind", "system_prompt", "tools", "policy", "tier_label", "filters"}, where);
    ScriptedAgent a;
    a.id = detail::required_string(j, "id", where);
    a.role = detail::optional_field<std::string>(j, "role", a.id, where);
    a.output_kind = parse_output_kind(detail::optional_field<std::string>(j, "output_kind", "plain_message", where));
    a.system_prompt = detail::optional_field<std::string>(j, "system_prompt", "You are the " + a.role + ".", where);
    a.tools = detail::optional_field<std::vector<std::string>>(j, "tools", {}, where);
    const auto& p = require(j, "policy", where);
    require_keys_subset(p, {"p_detect", "p_fix", "p_succ_given_fix", "p_succ_given_unfixed"}, "policy");
    a.policy.p_detect = detail::required_probability(p, "p_detect", "policy");
    a.policy.p_fix = detail::required_probability(p, "p_fix", "policy");
    a.policy.p_succ_given_fix = detail::required_probability(p, "p_succ_given_fix", "policy");
    a.policy.p_succ_given_unfixed = detail::required_probability(p, "p_succ_given_unfixed", "policy");
    const auto tier = detail::optional_field<std::string>(j, "tier_label", "Reasoning", where);
    auto parsed = parse_tier(tier);
    if (!parsed) throw Error(Errc::Schema, "unknown tier_label '" + tier + "'");
    a.tier_label = *parsed;
    if (j.contains("filters")) {
        const auto& f = j.at("filters");
        require_keys_subset(f, {"dedup", "subscriptions", "loop_guard_max_hops"}, "filters");
        a.filters.dedup = detail::optional_field<bool>(f, "dedup", false, "filters");
        const auto subs = detail::optional_field<std::vector<std::string>>(f, "subscriptions", {}, "filters");
        a.filters.subscriptions = {subs.begin(), subs.end()};
        a.filters.loop_guard_max_hops = detail::optional_field<int>(f, "loop_guard_max_hops", 0, "filters");
    }
    return a;
}

json agent_to_json(const ScriptedAgent& a) {
    return {{"id", a.id},
            {"role", a.role},
            {"output_kind", output_kind_name(a.output_kind)},
            {"system_prompt", a.system_prompt},
            {"tools", a.tools},
            {"policy",
             {{"p_detect", a.policy.p_detect},
              {"p_fix", a.policy.p_fix},
              {"p_succ_given_fix", a.policy.p_succ_given_fix},
              {"p_succ_given_unfixed", a.policy.p_succ_given_unfixed}}},
            {"tier_label", tier_name(a.tier_label)},
            {"filters",
             {{"dedup", a.filters.dedup},
              {"subscriptions", std::vector<std::string>(a.filters.subscriptions.begin(), a.filters.subscriptions.end())},
              {"loop_guard_max_hops", a.filters.loop_guard_max_hops}}}};
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

json scenario_to_json(const Scenario& s) {
    json agents = json::array();
    for (const auto& a : s.agents) agents.push_back(agent_to_json(a));
    return {{"topology", topology_name(s.topology)}, {"shared_pool", s.shared_pool},   {"max_iterations", s.max_iterations},
            {"turn_limit", s.turn_limit},           {"goal_turns", s.goal_turns},     {"baseline_success", s.baseline_success},
            {"agents", agents}};
}

Scenario scenario_from_json(const json& j) {
    constexpr std::string_view where = "scenario";
    require_keys_subset(j, {"topology", "shared_pool", "max_iterations", "turn_limit", "goal_turns", "baseline_success", "agents"},
                        where);
    Scenario s;
    s.topology = parse_topology(detail::required_string(j, "topology", where));
    s.shared_pool = detail::optional_field<bool>(j, "shared_pool", false, where);
    s.max_iterations = detail::optional_field<int>(j, "max_iterations", 3, where);
    s.turn_limit = detail::optional_field<int>(j, "turn_limit", 10, where);
    s.goal_turns = detail::optional_field<int>(j, "goal_turns", 4, where);
    s.baseline_success = detail::optional_field<double>(j, "baseline_success", 1.0, where);
    const auto& agents = require(j, "agents", where);
    if (!agents.is_array()) throw Error(Errc::Schema, "agents must be a list");
    for (const auto& a : agents) s.agents.push_back(agent_from_json(a));
    return s;
}

void validate_scenario(const Scenario& s) {
    std::set<std::string> ids;
    for (const auto& a : s.agents) {
        if (a.id.empty() || a.id == "user" || a.id == "*") throw Error(Errc::Config, "invalid agent id '" + a.id + "'");
        if (!ids.insert(a.id).second) throw Error(Errc::Config, "duplicate agent id '" + a.id + "'");
        const auto& p = a.policy;
        if (!is_probability(p.p_detect) || !is_probability(p.p_fix) || !is_probability(p.p_succ_given_fix) ||
            !is_probability(p.p_succ_given_unfixed)) {
            throw Error(Errc::Config, "agent '" + a.id + "' has a probability outside [0,1]");
        }
        if (a.filters.loop_guard_max_hops < 0) throw Error(Errc::Config, "loop_guard_max_hops must be >= 0");
    }
    if (!is_probability(s.baseline_success)) throw Error(Errc::Config, "baseline_success outside [0,1]");
    switch (s.topology) {
        case Topology::LinearPipeline:
            if (s.agents.size() < 2) throw Error(Errc::Config, "linear_pipeline needs at least 2 agents");
            break;
        case Topology::CriticRefineLoop:
            if (s.agents.size() != 3) throw Error(Errc::Config, "critic_refine needs exactly generator, judge, refiner");
            if (s.max_iterations < 1) throw Error(Errc::Config, "critic_refine max_iterations must be >= 1");
            break;
        case Topology::BilateralNegotiation:
            if (s.agents.size() != 2) throw Error(Errc::Config, "bilateral needs exactly 2 agents");
            if (s.turn_limit < 1) throw Error(Errc::Config, "bilateral turn_limit must be >= 1");
            if (s.goal_turns < 1) throw Error(Errc::Config, "bilateral goal_turns must be >= 1");
            break;
    }
}

Scenario preset_scenario(std::string_view name) {
    const auto text = resources::scenario_preset(name);
    if (text.empty()) throw Error(Errc::Schema, "unknown scenario preset '" + std::string(name) + "'");
    return scenario_from_json(json::parse(text));
}

std::vector<std::string> preset_names() { return {"linear_pipeline", "critic_refine", "bilateral"}; }

}  // namespace masfire
