#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "masfire/injector.hpp"
#include "masfire/scenario.hpp"
#include "masfire/taxonomy.hpp"
#include "masfire/tracelog.hpp"

namespace masfire {

struct ToolCall {
    std::string tool_name;
    json arguments = json::object();
    /// Arguments exactly as emitted when a format fault made them differ from `arguments`.
    std::optional<std::string> raw_arguments;
    bool operator==(const ToolCall&) const = default;
};

/// {"name":..., "arguments":{...}} as sent to and parsed from the injector.
json tool_call_to_json(const ToolCall& call);
/// Throws Error{Parse} unless the text is an object with a string name and object arguments.
ToolCall tool_call_from_text(std::string_view text);

struct AgentOutput {
    std::string producer;
    OutputKind kind = OutputKind::PlainMessage;
    std::string content;
    std::optional<ToolCall> tool_call;
    bool operator==(const AgentOutput&) const = default;
};

struct HistoryMessage {
    std::string sender;
    std::string role;  // system | user | assistant | tool
    std::string text;
    bool is_system() const { return role == "system"; }
    bool operator==(const HistoryMessage&) const = default;
};

struct HistoryWindow {
    std::vector<HistoryMessage> messages;
    std::size_t non_system_count() const;
    bool operator==(const HistoryWindow&) const = default;
};

inline constexpr std::string_view kContextTruncatedMarker = "[context truncated]";

struct DropFirstN {
    std::size_t n = 1;
};
struct DropAgent {
    std::string agent;
};
using MemoryPolicy = std::variant<DropFirstN, DropAgent>;

HistoryWindow drop_memory(const HistoryWindow& history, const MemoryPolicy& policy);
HistoryWindow violate_context(const HistoryWindow& history, std::size_t char_budget);

enum class CorruptionKind { DropClosingDelimiter, RemoveRequiredField, TypeFlip };
std::optional<CorruptionKind> parse_corruption_kind(std::string_view name);

/// `field` is ignored for DropClosingDelimiter. The seed is accepted for
/// interface symmetry; all three corruptions are fully determined by kind and field.
std::string corrupt_format(std::string_view payload, CorruptionKind kind, std::string_view field = {}, std::uint64_t seed = 0);

/// Throws CatalogTooSmall when the catalog has fewer than two tools or lacks the call's tool.
ToolCall swap_tool_deterministic(const ToolCall& call, const std::vector<std::string>& catalog, std::uint64_t seed);

/// Swaps the values of the two lexicographically first argument fields that
/// share a JSON type. NotApplicable when no such pair exists.
ToolCall swap_parameters_deterministic(const ToolCall& call);

/// Delegates a semantic mutation; KindMismatch when the output kind does not fit the fault.
AgentOutput rewrite_semantic(const AgentOutput& output, FaultType type, InjectorClient& injector, const FaultSpec& spec,
                             EventSink* sink = nullptr);

/// Offline counterparts of rewrite_semantic for the five output-level semantic faults.
/// `tool_catalog` is used by ToolSelectionError when the fault spec does not carry one.
AgentOutput rewrite_semantic_offline(const AgentOutput& output, FaultType type, const FaultSpec& spec,
                                     const std::vector<std::string>& tool_catalog = {});

bool kind_compatible(FaultType type, OutputKind kind);

struct RewriteContext {
    std::string agent_id;
    EventSink* sink = nullptr;
    InjectorClient* injector = nullptr;
    std::vector<std::string> tool_catalog;
};

/// Applies an output-level spec (Planning, Reasoning, Action) honoring its mode
/// and emits one fault_injected event.
AgentOutput apply_output_fault(const FaultSpec& spec, const AgentOutput& output, const RewriteContext& ctx);
/// Applies a Memory spec and emits one fault_injected event.
HistoryWindow apply_history_fault(const FaultSpec& spec, const HistoryWindow& history, const RewriteContext& ctx);

}  // namespace masfire
