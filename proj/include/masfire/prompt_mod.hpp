#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "masfire/injector.hpp"
#include "masfire/taxonomy.hpp"
#include "masfire/tracelog.hpp"

namespace masfire {

enum class PromptRole { SystemPrompt, UserPrompt };

struct PromptDoc {
    PromptRole role = PromptRole::SystemPrompt;
    std::string text;
    std::optional<std::string> origin_agent;
    bool operator==(const PromptDoc&) const = default;
};

/// Records which texts each spec has produced, so a prompt that already
/// carries a spec's injection is refused. Nothing is written into the prompt.
class InjectionMarkers {
public:
    bool injected(const std::string& spec_id, std::string_view text) const;
    void mark(const std::string& spec_id, std::string_view text);

private:
    mutable std::mutex mu_;
    std::map<std::string, std::set<std::string>> produced_;
};

/// Where an injection is reported. Both pointers may be null.
struct InjectionContext {
    std::string spec_id;
    std::string agent_id;
    EventSink* sink = nullptr;
    InjectionMarkers* markers = nullptr;
};

PromptDoc inject_role_ambiguity(const PromptDoc& prompt, std::string_view secondary_role, const InjectionContext& ctx = {});
PromptDoc inject_blind_trust(const PromptDoc& prompt, std::string_view trusted_agent, const InjectionContext& ctx = {});

PromptDoc conflict_instruction(const PromptDoc& prompt, InjectorClient& injector, std::uint64_t seed,
                               const InjectionContext& ctx = {});
PromptDoc ambiguate_instruction(const PromptDoc& prompt, InjectorClient& injector, std::uint64_t seed,
                                const InjectionContext& ctx = {});

/// Offline fallbacks: fixed rewrite patterns that still pass the template's
/// integrity rules.
PromptDoc conflict_instruction_offline(const PromptDoc& prompt, const InjectionContext& ctx = {});
PromptDoc ambiguate_instruction_offline(const PromptDoc& prompt, const InjectionContext& ctx = {});

/// Applies a Configuration or Instruction spec, honoring its mode. The
/// injector is required for Delegated specs.
PromptDoc apply_prompt_fault(const FaultSpec& spec, const PromptDoc& prompt, InjectorClient* injector,
                             const InjectionContext& ctx);

}  // namespace masfire
