#include "masfire/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "masfire/digest.hpp"
#include "masfire/error.hpp"

namespace masfire {

using detail::require;
using detail::require_keys_subset;

const std::array<FaultType, kFaultTypeCount> kAllFaultTypes = {
    FaultType::InexecutablePlan,         FaultType::CriticalInfoLoss,     FaultType::MemoryLoss,
    FaultType::ContextLengthViolation,   FaultType::Hallucination,        FaultType::ToolSelectionError,
    FaultType::ParameterFillingError,    FaultType::ParameterFormatError, FaultType::RoleAmbiguity,
    FaultType::BlindTrust,               FaultType::InstructionLogicConflict,
    FaultType::InstructionAmbiguity,     FaultType::MessageCycle,         FaultType::MessageStorm,
    FaultType::MessageBroadcastAmplification,
};

std::string_view fault_type_name(FaultType type) noexcept {
    switch (type) {
        case FaultType::InexecutablePlan: return "InexecutablePlan";
        case FaultType::CriticalInfoLoss: return "CriticalInfoLoss";
        case FaultType::MemoryLoss: return "MemoryLoss";
        case FaultType::ContextLengthViolation: return "ContextLengthViolation";
        case FaultType::Hallucination: return "Hallucination";
        case FaultType::ToolSelectionError: return "ToolSelectionError";
        case FaultType::ParameterFillingError: return "ParameterFillingError";
        case FaultType::ParameterFormatError: return "ParameterFormatError";
        case FaultType::RoleAmbiguity: return "RoleAmbiguity";
        case FaultType::BlindTrust: return "BlindTrust";
        case FaultType::InstructionLogicConflict: return "InstructionLogicConflict";
        case FaultType::InstructionAmbiguity: return "InstructionAmbiguity";
        case FaultType::MessageCycle: return "MessageCycle";
        case FaultType::MessageStorm: return "MessageStorm";
        case FaultType::MessageBroadcastAmplification: return "MessageBroadcastAmplification";
    }
    return "?";
}

std::optional<FaultType> parse_fault_type(std::string_view name) noexcept {
    for (auto t : kAllFaultTypes) {
        if (fault_type_name(t) == name) return t;
    }
    return std::nullopt;
}

std::string_view category_name(FaultCategory category) noexcept {
    switch (category) {
        case FaultCategory::Planning: return "Planning";
        case FaultCategory::Memory: return "Memory";
        case FaultCategory::Reasoning: return "Reasoning";
        case FaultCategory::Action: return "Action";
        case FaultCategory::Configuration: return "Configuration";
        case FaultCategory::Instruction: return "Instruction";
        case FaultCategory::Communication: return "Communication";
    }
    return "?";
}

std::string_view mechanism_name(InjectionMechanism mechanism) noexcept {
    switch (mechanism) {
        case InjectionMechanism::PromptModification: return "PromptModification";
        case InjectionMechanism::InterceptionRewrite: return "InterceptionRewrite";
        case InjectionMechanism::RoutingManipulation: return "RoutingManipulation";
    }
    return "?";
}

namespace {

constexpr std::array<std::pair<InterceptionPoint, std::string_view>, 5> kPointNames = {{
    {InterceptionPoint::SystemPromptInit, "system_prompt_init"},
    {InterceptionPoint::UserPromptIngress, "user_prompt_ingress"},
    {InterceptionPoint::HistoryWindowIngress, "history_window_ingress"},
    {InterceptionPoint::AgentOutputEgress, "agent_output_egress"},
    {InterceptionPoint::ToolCallEgress, "tool_call_egress"},
}};

constexpr std::string_view kBusEdge = "bus_edge";

}  // namespace

std::string_view point_name(InterceptionPoint point) noexcept {
    for (const auto& [p, n] : kPointNames) {
        if (p == point) return n;
    }
    return "?";
}

std::optional<InterceptionPoint> parse_point(std::string_view name) noexcept {
    for (const auto& [p, n] : kPointNames) {
        if (n == name) return p;
    }
    return std::nullopt;
}

std::string_view mode_name(InjectionMode mode) noexcept {
    return mode == InjectionMode::Deterministic ? "deterministic" : "delegated";
}

FaultCategory category_of(FaultType type) noexcept {
    switch (type) {
        case FaultType::InexecutablePlan:
        case FaultType::CriticalInfoLoss: return FaultCategory::Planning;
        case FaultType::MemoryLoss:
        case FaultType::ContextLengthViolation: return FaultCategory::Memory;
        case FaultType::Hallucination: return FaultCategory::Reasoning;
        case FaultType::ToolSelectionError:
        case FaultType::ParameterFillingError:
        case FaultType::ParameterFormatError: return FaultCategory::Action;
        case FaultType::RoleAmbiguity:
        case FaultType::BlindTrust: return FaultCategory::Configuration;
        case FaultType::InstructionLogicConflict:
        case FaultType::InstructionAmbiguity: return FaultCategory::Instruction;
        case FaultType::MessageCycle:
        case FaultType::MessageStorm:
        case FaultType::MessageBroadcastAmplification: return FaultCategory::Communication;
    }
    return FaultCategory::Communication;
}

FaultLocus locus_of(FaultCategory category) noexcept {
    switch (category) {
        case FaultCategory::Configuration:
        case FaultCategory::Instruction:
        case FaultCategory::Communication: return FaultLocus::Inter;
        default: return FaultLocus::Intra;
    }
}

InjectionMechanism mechanism_of(FaultType type) noexcept {
    switch (category_of(type)) {
        case FaultCategory::Communication: return InjectionMechanism::RoutingManipulation;
        case FaultCategory::Configuration:
        case FaultCategory::Instruction: return InjectionMechanism::PromptModification;
        default: return InjectionMechanism::InterceptionRewrite;
    }
}

std::optional<InterceptionPoint> point_of(FaultType type) noexcept {
    switch (category_of(type)) {
        case FaultCategory::Configuration: return InterceptionPoint::SystemPromptInit;
        case FaultCategory::Instruction: return InterceptionPoint::UserPromptIngress;
        case FaultCategory::Memory: return InterceptionPoint::HistoryWindowIngress;
        case FaultCategory::Planning:
        case FaultCategory::Reasoning: return InterceptionPoint::AgentOutputEgress;
        case FaultCategory::Action: return InterceptionPoint::ToolCallEgress;
        case FaultCategory::Communication: return std::nullopt;
    }
    return std::nullopt;
}

InjectionMechanism mechanism_of(InterceptionPoint point) noexcept {
    switch (point) {
        case InterceptionPoint::SystemPromptInit:
        case InterceptionPoint::UserPromptIngress: return InjectionMechanism::PromptModification;
        default: return InjectionMechanism::InterceptionRewrite;
    }
}

bool is_semantic(FaultType type) noexcept {
    switch (type) {
        case FaultType::InexecutablePlan:
        case FaultType::CriticalInfoLoss:
        case FaultType::Hallucination:
        case FaultType::ToolSelectionError:
        case FaultType::ParameterFillingError:
        case FaultType::InstructionLogicConflict:
        case FaultType::InstructionAmbiguity: return true;
        default: return false;
    }
}

bool TargetSelector::matches_agent(std::string_view agent_id, std::string_view role) const {
    return agent == "*" || agent == agent_id || (!role.empty() && agent == role);
}

bool TargetSelector::matches_edge(std::string_view from, std::string_view to) const {
    return (edge_from == "*" || edge_from == from) && (edge_to == "*" || edge_to == to);
}

std::string_view violation_name(ViolationCode code) noexcept {
    switch (code) {
        case ViolationCode::MechanismMismatch: return "MechanismMismatch";
        case ViolationCode::PointMismatch: return "PointMismatch";
        case ViolationCode::NoOpParameter: return "NoOpParameter";
        case ViolationCode::OutOfRange: return "OutOfRange";
        case ViolationCode::MissingParameter: return "MissingParameter";
        case ViolationCode::UnknownParameter: return "UnknownParameter";
        case ViolationCode::WrongParameterType: return "WrongParameterType";
        case ViolationCode::InvalidMode: return "InvalidMode";
        case ViolationCode::EmptyValue: return "EmptyValue";
        case ViolationCode::DuplicateId: return "DuplicateId";
        case ViolationCode::DelegatedWithoutInjector: return "DelegatedWithoutInjector";
    }
    return "?";
}

namespace {

std::vector<std::string_view> allowed_params(FaultType type) {
    switch (type) {
        case FaultType::MessageStorm: return {"replication_factor"};
        case FaultType::MemoryLoss: return {"drop_first_n", "drop_agent"};
        case FaultType::ContextLengthViolation: return {"char_budget"};
        case FaultType::ParameterFormatError: return {"corruption_kind", "field"};
        case FaultType::ToolSelectionError: return {"tool_catalog"};
        case FaultType::RoleAmbiguity: return {"secondary_role"};
        case FaultType::BlindTrust: return {"trusted_agent"};
        default: return {};
    }
}

class SpecChecker {
public:
    explicit SpecChecker(const FaultSpec& spec) : spec_(spec) {}

    std::vector<Violation> run() {
        if (spec_.id.empty()) add(ViolationCode::EmptyValue, "id", "spec id must be non-empty");
        check_target();
        if (spec_.mode == InjectionMode::Delegated && !is_semantic(spec_.fault_type)) {
            add(ViolationCode::InvalidMode, "mode",
                std::string(fault_type_name(spec_.fault_type)) + " is structure-level; delegated mode not permitted");
        }
        check_params();
        return std::move(out_);
    }

private:
    void add(ViolationCode code, std::string field, std::string message) {
        out_.push_back({code, std::move(field), std::move(message)});
    }

    void check_target() {
        const auto wanted = mechanism_of(spec_.fault_type);
        const auto& t = spec_.target;
        if (t.kind == TargetSelector::Kind::BusEdge) {
            if (wanted != InjectionMechanism::RoutingManipulation) {
                add(ViolationCode::MechanismMismatch, "target",
                    "bus edge target requires a routing fault, got " + std::string(mechanism_name(wanted)));
            }
            if (t.edge_from.empty() || t.edge_to.empty()) add(ViolationCode::EmptyValue, "target", "edge endpoints must be non-empty");
            return;
        }
        if (wanted == InjectionMechanism::RoutingManipulation || mechanism_of(t.point) != wanted) {
            add(ViolationCode::MechanismMismatch, "target",
                std::string(point_name(t.point)) + " is not reachable by " + std::string(mechanism_name(wanted)));
            return;
        }
        if (point_of(spec_.fault_type) != t.point) {
            add(ViolationCode::PointMismatch, "target",
                std::string(fault_type_name(spec_.fault_type)) + " is injected at " +
                    std::string(point_name(*point_of(spec_.fault_type))));
        }
        if (t.agent.empty()) add(ViolationCode::EmptyValue, "target.agent", "agent selector must be non-empty");
    }

    const json* param(std::string_view key) const {
        if (!spec_.params.is_object()) return nullptr;
        auto it = spec_.params.find(std::string(key));
        return it == spec_.params.end() ? nullptr : &*it;
    }

    void int_param(std::string_view key, long long min_valid, std::optional<long long> noop_value, bool required) {
        const json* v = param(key);
        const std::string field = "params." + std::string(key);
        if (!v) {
            if (required) add(ViolationCode::MissingParameter, field, "required");
            return;
        }
        if (!v->is_number_integer()) {
            add(ViolationCode::WrongParameterType, field, "must be an integer");
            return;
        }
        const auto n = v->get<long long>();
        if (n == noop_value) {
            add(ViolationCode::NoOpParameter, field, "value " + std::to_string(n) + " makes the fault a no-op");
        } else if (n < min_valid) {
            add(ViolationCode::OutOfRange, field, "must be >= " + std::to_string(min_valid));
        }
    }

    void text_param(std::string_view key, bool required) {
        const json* v = param(key);
        const std::string field = "params." + std::string(key);
        if (!v) {
            if (required) add(ViolationCode::MissingParameter, field, "required");
            return;
        }
        if (!v->is_string()) {
            add(ViolationCode::WrongParameterType, field, "must be a string");
        } else if (v->get<std::string>().empty()) {
            add(ViolationCode::EmptyValue, field, "must be non-empty");
        }
    }

    void check_params() {
        if (!spec_.params.is_object()) {
            add(ViolationCode::WrongParameterType, "params", "must be an object");
            return;
        }
        const auto allowed = allowed_params(spec_.fault_type);
        for (const auto& [key, _] : spec_.params.items()) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                add(ViolationCode::UnknownParameter, "params." + key,
                    "not a parameter of " + std::string(fault_type_name(spec_.fault_type)));
            }
        }
        switch (spec_.fault_type) {
            case FaultType::MessageStorm: int_param("replication_factor", 2, 1, true); break;
            case FaultType::MemoryLoss: {
                const bool has_n = param("drop_first_n") != nullptr;
                const bool has_agent = param("drop_agent") != nullptr;
                if (has_n && has_agent) {
                    add(ViolationCode::OutOfRange, "params", "drop_first_n and drop_agent are exclusive");
                } else if (!has_n && !has_agent) {
                    add(ViolationCode::MissingParameter, "params", "one of drop_first_n or drop_agent is required");
                }
                if (has_n) int_param("drop_first_n", 1, 0, true);
                if (has_agent) text_param("drop_agent", true);
                break;
            }
            case FaultType::ContextLengthViolation: int_param("char_budget", 1, std::nullopt, true); break;
            case FaultType::ParameterFormatError: {
                text_param("corruption_kind", true);
                const json* kind = param("corruption_kind");
                if (kind && kind->is_string()) {
                    const auto k = kind->get<std::string>();
                    if (k == "remove_required_field" || k == "type_flip") {
                        text_param("field", true);
                    } else if (k != "drop_closing_delimiter") {
                        add(ViolationCode::OutOfRange, "params.corruption_kind", "unknown corruption kind '" + k + "'");
                    }
                }
                break;
            }
            case FaultType::ToolSelectionError: {
                const json* cat = param("tool_catalog");
                if (cat) {
                    if (!cat->is_array() || !std::all_of(cat->begin(), cat->end(), [](const json& e) { return e.is_string(); })) {
                        add(ViolationCode::WrongParameterType, "params.tool_catalog", "must be a list of tool names");
                    } else if (cat->size() < 2) {
                        add(ViolationCode::OutOfRange, "params.tool_catalog", "needs at least two tools");
                    }
                }
                break;
            }
            case FaultType::RoleAmbiguity: text_param("secondary_role", true); break;
            case FaultType::BlindTrust: text_param("trusted_agent", true); break;
            default: break;
        }
    }

    const FaultSpec& spec_;
    std::vector<Violation> out_;
};

std::string format_violations(std::string_view owner, const std::vector<Violation>& vs) {
    std::ostringstream os;
    os << owner << ":";
    for (const auto& v : vs) os << " [" << violation_name(v.code) << " " << v.field << ": " << v.message << "]";
    return os.str();
}

std::uint64_t parse_seed(const json& v, std::string_view where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
    throw Error(Errc::Schema, std::string(where) + " must be a non-negative integer");
}

TargetSelector target_from_json(const json& j) {
    require_keys_subset(j, {"kind", "agent", "from", "to"}, "target");
    TargetSelector t;
    const auto kind = detail::required_string(j, "kind", "target");
    if (kind == kBusEdge) {
        if (j.contains("agent")) throw Error(Errc::Schema, "bus_edge target takes from/to, not agent");
        t.kind = TargetSelector::Kind::BusEdge;
        t.edge_from = detail::optional_field<std::string>(j, "from", "*", "target");
        t.edge_to = detail::optional_field<std::string>(j, "to", "*", "target");
        return t;
    }
    auto point = parse_point(kind);
    if (!point) throw Error(Errc::Schema, "unknown target kind '" + kind + "'");
    if (j.contains("from") || j.contains("to")) throw Error(Errc::Schema, "interception point target takes agent, not from/to");
    t.kind = TargetSelector::Kind::Point;
    t.point = *point;
    t.agent = detail::optional_field<std::string>(j, "agent", "*", "target");
    return t;
}

json target_to_json(const TargetSelector& t) {
    if (t.kind == TargetSelector::Kind::BusEdge) return {{"kind", kBusEdge}, {"from", t.edge_from}, {"to", t.edge_to}};
    return {{"kind", point_name(t.point)}, {"agent", t.agent}};
}

void materialize_defaults(FaultSpec& spec) {
    auto& p = spec.params;
    switch (spec.fault_type) {
        case FaultType::MessageStorm:
            if (!p.contains("replication_factor")) p["replication_factor"] = 3;
            break;
        case FaultType::MemoryLoss:
            if (!p.contains("drop_first_n") && !p.contains("drop_agent")) p["drop_first_n"] = 1;
            break;
        case FaultType::ParameterFormatError:
            if (!p.contains("corruption_kind")) p["corruption_kind"] = "drop_closing_delimiter";
            break;
        default: break;
    }
}

AgentMapping mapping_from_json(const json& j) {
    require_keys_subset(j, {"mode", "header", "patterns"}, "agent_mapping");
    AgentMapping m;
    const auto mode = detail::required_string(j, "mode", "agent_mapping");
    if (mode == "header") {
        m.mode = AgentMappingMode::Header;
        m.header = detail::optional_field<std::string>(j, "header", "x-mas-agent", "agent_mapping");
        if (j.contains("patterns")) throw Error(Errc::Schema, "header mapping takes no patterns");
    } else if (mode == "system_prompt_prefix") {
        m.mode = AgentMappingMode::SystemPromptPrefix;
        if (j.contains("header")) throw Error(Errc::Schema, "prefix mapping takes no header");
        for (const auto& pj : detail::require(j, "patterns", "agent_mapping")) {
            require_keys_subset(pj, {"pattern", "agent"}, "agent_mapping.patterns[]");
            m.patterns.push_back({detail::required_string(pj, "pattern", "pattern"), detail::required_string(pj, "agent", "pattern")});
        }
    } else {
        throw Error(Errc::Schema, "unknown agent_mapping mode '" + mode + "'");
    }
    return m;
}

json mapping_to_json(const AgentMapping& m) {
    if (m.mode == AgentMappingMode::Header) return {{"mode", "header"}, {"header", m.header}};
    json patterns = json::array();
    for (const auto& p : m.patterns) patterns.push_back({{"pattern", p.pattern}, {"agent", p.agent}});
    return {{"mode", "system_prompt_prefix"}, {"patterns", patterns}};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Schema, "cannot read scenario_file '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void parse_execution_target(const json& j, CampaignConfig& cfg, const ParseOptions& options) {
    const auto kind = detail::required_string(j, "kind", "execution_target");
    if (kind == "simulator") {
        require_keys_subset(j, {"kind", "preset", "scenario", "scenario_file"}, "execution_target");
        const int sources = int(j.contains("preset")) + int(j.contains("scenario")) + int(j.contains("scenario_file"));
        if (sources != 1) throw Error(Errc::Schema, "simulator target needs exactly one of preset, scenario, scenario_file");
        SimulatorTarget sim;
        if (j.contains("preset")) {
            sim.scenario = preset_scenario(detail::required_string(j, "preset", "execution_target"));
        } else if (j.contains("scenario")) {
            sim.scenario = scenario_from_json(j.at("scenario"));
        } else {
            const auto rel = detail::required_string(j, "scenario_file", "execution_target");
            const auto path = (!rel.empty() && rel.front() == '/') ? rel : options.base_dir + "/" + rel;
            json doc;
            try {
                doc = json::parse(read_file(path));
            } catch (const json::parse_error& e) {
                throw Error(Errc::Parse, "scenario_file: " + std::string(e.what()));
            }
            sim.scenario = scenario_from_json(doc);
        }
        cfg.simulator = std::move(sim);
    } else if (kind == "gateway") {
        require_keys_subset(j, {"kind", "upstream", "listen", "agent_mapping"}, "execution_target");
        GatewayTarget gw;
        gw.upstream = detail::required_string(j, "upstream", "execution_target");
        gw.listen = detail::optional_field<std::string>(j, "listen", gw.listen, "execution_target");
        if (j.contains("agent_mapping")) gw.agent_mapping = mapping_from_json(j.at("agent_mapping"));
        cfg.gateway = std::move(gw);
    } else {
        throw Error(Errc::Schema, "unknown execution_target kind '" + kind + "'");
    }
}

InjectorConfig injector_from_json(const json& j) {
    require_keys_subset(j, {"endpoint", "model", "max_retries", "keyword_retention"}, "injector");
    InjectorConfig c;
    c.endpoint = detail::required_string(j, "endpoint", "injector");
    c.model = detail::optional_field<std::string>(j, "model", c.model, "injector");
    c.max_retries = detail::optional_field<int>(j, "max_retries", c.max_retries, "injector");
    if (c.max_retries < 0) throw Error(Errc::Schema, "injector.max_retries must be >= 0");
    if (j.contains("keyword_retention")) {
        for (const auto& [k, v] : j.at("keyword_retention").items()) {
            if (!parse_fault_type(k)) throw Error(Errc::Schema, "unknown fault type '" + k + "' in keyword_retention");
            if (!v.is_number()) throw Error(Errc::Schema, "keyword_retention values must be numbers");
            c.keyword_retention[k] = v.get<double>();
        }
    }
    return c;
}

json injector_to_json(const InjectorConfig& c) {
    json kr = json::object();
    for (const auto& [k, v] : c.keyword_retention) kr[k] = v;
    return {{"endpoint", c.endpoint}, {"model", c.model}, {"max_retries", c.max_retries}, {"keyword_retention", kr}};
}

}  // namespace

std::vector<Violation> validate_spec(const FaultSpec& spec) { return SpecChecker(spec).run(); }

json spec_to_json(const FaultSpec& spec) {
    return {{"id", spec.id},
            {"fault_type", fault_type_name(spec.fault_type)},
            {"target", target_to_json(spec.target)},
            {"params", spec.params},
            {"mode", mode_name(spec.mode)},
            {"seed", spec.seed}};
}

FaultSpec spec_from_json(const json& j, std::uint64_t default_seed) {
    require_keys_subset(j, {"id", "fault_type", "target", "params", "mode", "seed"}, "fault_specs[]");
    FaultSpec spec;
    spec.id = detail::required_string(j, "id", "fault_specs[]");
    const auto type_name = detail::required_string(j, "fault_type", "fault_specs[]");
    const auto type = parse_fault_type(type_name);
    if (!type) throw Error(Errc::Schema, "unknown fault_type '" + type_name + "'");
    spec.fault_type = *type;
    spec.target = target_from_json(require(j, "target", "fault_specs[]"));
    if (j.contains("params")) {
        if (!j.at("params").is_object()) throw Error(Errc::Schema, "params must be an object");
        spec.params = j.at("params");
    }
    if (j.contains("mode")) {
        const auto m = detail::required_string(j, "mode", "fault_specs[]");
        if (m == "deterministic") spec.mode = InjectionMode::Deterministic;
        else if (m == "delegated") spec.mode = InjectionMode::Delegated;
        else throw Error(Errc::Schema, "unknown mode '" + m + "'");
    } else {
        spec.mode = is_semantic(spec.fault_type) ? InjectionMode::Delegated : InjectionMode::Deterministic;
    }
    spec.seed = j.contains("seed") ? parse_seed(j.at("seed"), "seed") : default_seed;
    materialize_defaults(spec);
    return spec;
}

CampaignConfig parse_campaign(std::string_view raw, const ParseOptions& options) {
    json doc;
    try {
        doc = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw Error(Errc::Parse, e.what());
    }
    require_keys_subset(doc,
                        {"schema_version", "campaign_seed", "tasks", "fault_specs", "execution_target", "baseline_ref",
                         "output_dir", "injector", "applicable_only"},
                        "campaign");
    CampaignConfig cfg;
    cfg.schema_version = detail::required_field<int>(doc, "schema_version", "campaign");
    if (cfg.schema_version != 1) throw Error(Errc::Schema, "unsupported schema_version " + std::to_string(cfg.schema_version));
    cfg.campaign_seed = parse_seed(require(doc, "campaign_seed", "campaign"), "campaign_seed");

    const auto& tasks = require(doc, "tasks", "campaign");
    if (!tasks.is_array()) throw Error(Errc::Schema, "tasks must be a list");
    for (const auto& tj : tasks) {
        require_keys_subset(tj, {"id", "input"}, "tasks[]");
        cfg.tasks.push_back({detail::required_string(tj, "id", "tasks[]"), detail::required_string(tj, "input", "tasks[]")});
    }
    const auto& specs = require(doc, "fault_specs", "campaign");
    if (!specs.is_array()) throw Error(Errc::Schema, "fault_specs must be a list");
    for (const auto& sj : specs) cfg.fault_specs.push_back(spec_from_json(sj, cfg.campaign_seed));

    parse_execution_target(require(doc, "execution_target", "campaign"), cfg, options);
    if (doc.contains("baseline_ref")) cfg.baseline_ref = detail::required_string(doc, "baseline_ref", "campaign");
    cfg.output_dir = detail::required_string(doc, "output_dir", "campaign");
    if (doc.contains("injector")) cfg.injector = injector_from_json(doc.at("injector"));
    cfg.applicable_only = detail::optional_field<bool>(doc, "applicable_only", false, "campaign");

    std::vector<Violation> problems;
    std::set<std::string> seen;
    if (cfg.tasks.empty()) problems.push_back({ViolationCode::EmptyValue, "tasks", "at least one task is required"});
    for (const auto& t : cfg.tasks) {
        if (t.id.empty()) problems.push_back({ViolationCode::EmptyValue, "tasks[].id", "task id must be non-empty"});
        if (!seen.insert(t.id).second) problems.push_back({ViolationCode::DuplicateId, "tasks[].id", "duplicate task id '" + t.id + "'"});
    }
    seen.clear();
    for (const auto& s : cfg.fault_specs) {
        if (!seen.insert(s.id).second) problems.push_back({ViolationCode::DuplicateId, "fault_specs[].id", "duplicate spec id '" + s.id + "'"});
        for (auto& v : validate_spec(s)) {
            v.field = s.id + "." + v.field;
            problems.push_back(std::move(v));
        }
        if (s.mode == InjectionMode::Delegated && !cfg.injector) {
            problems.push_back({ViolationCode::DelegatedWithoutInjector, s.id + ".mode", "delegated mode needs an injector endpoint"});
        }
    }
    if (cfg.gateway && cfg.gateway->upstream.empty()) {
        problems.push_back({ViolationCode::EmptyValue, "execution_target.upstream", "upstream must be non-empty"});
    }
    if (!problems.empty()) throw Error(Errc::Validation, format_violations("campaign", problems));
    if (cfg.simulator) {
        try {
            validate_scenario(cfg.simulator->scenario);
        } catch (const Error& e) {
            throw Error(Errc::Validation, e.what());
        }
    }
    return cfg;
}

std::string serialize_campaign(const CampaignConfig& cfg) {
    json doc;
    doc["schema_version"] = cfg.schema_version;
    doc["campaign_seed"] = cfg.campaign_seed;
    doc["tasks"] = json::array();
    for (const auto& t : cfg.tasks) doc["tasks"].push_back({{"id", t.id}, {"input", t.input}});
    doc["fault_specs"] = json::array();
    for (const auto& s : cfg.fault_specs) doc["fault_specs"].push_back(spec_to_json(s));
    if (cfg.simulator) {
        doc["execution_target"] = {{"kind", "simulator"}, {"scenario", scenario_to_json(cfg.simulator->scenario)}};
    } else if (cfg.gateway) {
        doc["execution_target"] = {{"kind", "gateway"},
                                   {"upstream", cfg.gateway->upstream},
                                   {"listen", cfg.gateway->listen},
                                   {"agent_mapping", mapping_to_json(cfg.gateway->agent_mapping)}};
    }
    if (cfg.baseline_ref) doc["baseline_ref"] = *cfg.baseline_ref;
    doc["output_dir"] = cfg.output_dir;
    if (cfg.injector) doc["injector"] = injector_to_json(*cfg.injector);
    doc["applicable_only"] = cfg.applicable_only;
    return doc.dump(2) + "\n";
}

std::uint64_t task_seed(const FaultSpec& spec, std::string_view task_id) {
    return derive_seed(spec.seed, spec.id, task_id);
}

std::uint64_t baseline_task_seed(std::uint64_t campaign_seed, std::string_view task_id) {
    return derive_seed(campaign_seed, "baseline", task_id);
}

}  // namespace masfire
