#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/scenario.hpp"

namespace masfire {

using json = nlohmann::json;

/// The fixed fault catalog, in catalog order (reports are rendered in this order).
enum class FaultType {
    InexecutablePlan,
    CriticalInfoLoss,
    MemoryLoss,
    ContextLengthViolation,
    Hallucination,
    ToolSelectionError,
    ParameterFillingError,
    ParameterFormatError,
    RoleAmbiguity,
    BlindTrust,
    InstructionLogicConflict,
    InstructionAmbiguity,
    MessageCycle,
    MessageStorm,
    MessageBroadcastAmplification,
};

inline constexpr std::size_t kFaultTypeCount = 15;
extern const std::array<FaultType, kFaultTypeCount> kAllFaultTypes;

enum class FaultCategory { Planning, Memory, Reasoning, Action, Configuration, Instruction, Communication };
enum class FaultLocus { Intra, Inter };
enum class InjectionMechanism { PromptModification, InterceptionRewrite, RoutingManipulation };

/// Where in the request/response/history flow a fault is applied.
enum class InterceptionPoint {
    SystemPromptInit,
    UserPromptIngress,
    HistoryWindowIngress,
    AgentOutputEgress,
    ToolCallEgress,
};

enum class InjectionMode { Deterministic, Delegated };

std::string_view fault_type_name(FaultType type) noexcept;
std::optional<FaultType> parse_fault_type(std::string_view name) noexcept;
std::string_view category_name(FaultCategory category) noexcept;
std::string_view mechanism_name(InjectionMechanism mechanism) noexcept;
std::string_view point_name(InterceptionPoint point) noexcept;
std::optional<InterceptionPoint> parse_point(std::string_view name) noexcept;
std::string_view mode_name(InjectionMode mode) noexcept;

FaultCategory category_of(FaultType type) noexcept;
FaultLocus locus_of(FaultCategory category) noexcept;
InjectionMechanism mechanism_of(FaultType type) noexcept;
/// Routing faults have no interception point; they act on bus edges.
std::optional<InterceptionPoint> point_of(FaultType type) noexcept;
InjectionMechanism mechanism_of(InterceptionPoint point) noexcept;

/// Fault types whose native injection path is the secondary-model injector.
bool is_semantic(FaultType type) noexcept;

struct TargetSelector {
    enum class Kind { Point, BusEdge };
    Kind kind = Kind::Point;
    InterceptionPoint point = InterceptionPoint::SystemPromptInit;
    std::string agent = "*";  // agent id or role; "*" matches any
    std::string edge_from = "*";
    std::string edge_to = "*";

    bool matches_agent(std::string_view agent_id, std::string_view role = {}) const;
    bool matches_edge(std::string_view from, std::string_view to) const;
    bool operator==(const TargetSelector&) const = default;
};

struct FaultSpec {
    std::string id;
    FaultType fault_type = FaultType::MessageStorm;
    TargetSelector target;
    json params = json::object();
    InjectionMode mode = InjectionMode::Deterministic;
    std::uint64_t seed = 0;

    /// Deterministic stand-in for a fault normally injected semantically.
    bool offline_fallback() const { return mode == InjectionMode::Deterministic && is_semantic(fault_type); }
    bool operator==(const FaultSpec&) const = default;
};

enum class ViolationCode {
    MechanismMismatch,
    PointMismatch,
    NoOpParameter,
    OutOfRange,
    MissingParameter,
    UnknownParameter,
    WrongParameterType,
    InvalidMode,
    EmptyValue,
    DuplicateId,
    DelegatedWithoutInjector,
};

std::string_view violation_name(ViolationCode code) noexcept;

struct Violation {
    ViolationCode code;
    std::string field;
    std::string message;
};

/// Empty result means the fault spec is valid.
std::vector<Violation> validate_spec(const FaultSpec& spec);

struct TaskDescriptor {
    std::string id;
    std::string input;
    bool operator==(const TaskDescriptor&) const = default;
};

enum class AgentMappingMode { Header, SystemPromptPrefix };

struct PrefixPattern {
    std::string pattern;
    std::string agent;
    bool operator==(const PrefixPattern&) const = default;
};

struct AgentMapping {
    AgentMappingMode mode = AgentMappingMode::Header;
    std::string header = "x-mas-agent";
    std::vector<PrefixPattern> patterns;
    bool operator==(const AgentMapping&) const = default;
};

struct GatewayTarget {
    std::string upstream;
    std::string listen = "127.0.0.1:8080";
    AgentMapping agent_mapping;
    bool operator==(const GatewayTarget&) const = default;
};

struct SimulatorTarget {
    Scenario scenario;
    bool operator==(const SimulatorTarget&) const = default;
};

struct InjectorConfig {
    std::string endpoint;  // base URL of a chat-completions endpoint
    std::string model = "injector";
    int max_retries = 2;
    /// Per fault type override of the template's KeywordsRetained threshold.
    std::map<std::string, double> keyword_retention;
    bool operator==(const InjectorConfig&) const = default;
};

struct CampaignConfig {
    int schema_version = 1;
    std::uint64_t campaign_seed = 0;
    std::vector<TaskDescriptor> tasks;
    std::optional<std::string> baseline_ref;
    std::vector<FaultSpec> fault_specs;
    std::optional<SimulatorTarget> simulator;
    std::optional<GatewayTarget> gateway;
    std::optional<InjectorConfig> injector;
    std::string output_dir = "out";
    bool applicable_only = false;

    bool operator==(const CampaignConfig&) const = default;
};

struct ParseOptions {
    /// Directory used to resolve `scenario_file` references.
    std::string base_dir = ".";
};

/// Throws Error{Parse|Schema|Validation}. The result has every default materialized.
CampaignConfig parse_campaign(std::string_view raw, const ParseOptions& options = {});
std::string serialize_campaign(const CampaignConfig& config);

json spec_to_json(const FaultSpec& spec);
/// Strict: unknown keys raise SchemaError. Does not validate semantics.
FaultSpec spec_from_json(const json& j, std::uint64_t default_seed);

/// Seed of the RNG stream for one (spec, task) run.
std::uint64_t task_seed(const FaultSpec& spec, std::string_view task_id);
std::uint64_t baseline_task_seed(std::uint64_t campaign_seed, std::string_view task_id);

}  // namespace masfire
