#include "masfire/prompt_mod.hpp"

#include <cctype>
#include <sstream>
#include <vector>

#include "masfire/digest.hpp"
#include "masfire/error.hpp"

namespace masfire {

namespace {

std::string fill(std::string tmpl, std::string_view key, std::string_view value) {
    const std::string needle = "{" + std::string(key) + "}";
    for (auto pos = tmpl.find(needle); pos != std::string::npos; pos = tmpl.find(needle, pos + value.size()))
        tmpl.replace(pos, needle.size(), value);
    return tmpl;
}

bool blank(std::string_view s) {
    for (unsigned char c : s) {
        if (!std::isspace(c)) return false;
    }
    return true;
}

void require_target(const PromptDoc& prompt, PromptRole role) {
    if (prompt.role != role)
        throw Error(Errc::WrongPromptRole,
                    role == PromptRole::SystemPrompt ? "fault applies to system prompts" : "fault applies to user prompts");
    if (blank(prompt.text)) throw Error(Errc::EmptyPrompt, "prompt text is empty");
}

void check_marker(const PromptDoc& prompt, const InjectionContext& ctx) {
    if (ctx.markers && ctx.markers->injected(ctx.spec_id, prompt.text))
        throw Error(Errc::AlreadyInjected, "spec '" + ctx.spec_id + "' already applied to this prompt");
}

PromptDoc commit(const PromptDoc& in, std::string out_text, FaultType type, InjectionMode mode, const InjectionContext& ctx) {
    PromptDoc out = in;
    out.text = std::move(out_text);
    if (ctx.markers) ctx.markers->mark(ctx.spec_id, out.text);
    if (ctx.sink) {
        TraceEvent ev;
        ev.kind = EventKind::FaultInjected;
        if (!ctx.spec_id.empty()) ev.spec_id = ctx.spec_id;
        ev.agent_id = ctx.agent_id;
        ev.point = in.role == PromptRole::SystemPrompt ? InterceptionPoint::SystemPromptInit : InterceptionPoint::UserPromptIngress;
        ev.payload_digest = sha256_hex(out.text);
        ev.detail = {{"fault_type", fault_type_name(type)},
                     {"mode", mode_name(mode)},
                     {"offline_fallback", mode == InjectionMode::Deterministic && is_semantic(type)},
                     {"input_digest", sha256_hex(in.text)}};
        ctx.sink->record(std::move(ev));
    }
    return out;
}

std::string additive(const std::string& original, const std::string& block) {
    return original + default_templates().prompt("separator") + block;
}

std::string_view rtrim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    return rtrim(s);
}

bool terminal(char c) { return c == '.' || c == '!' || c == '?'; }

std::string delegated(FaultType type, const PromptDoc& prompt, InjectorClient& injector, std::uint64_t seed,
                      const InjectionContext& ctx) {
    return injector.mutate(type, prompt.text, seed, ctx.spec_id, ctx.agent_id, ctx.sink);
}

void verify_fallback(FaultType type, std::string_view original, std::string_view mutated) {
    auto verdict = check_integrity(original, mutated, default_templates().for_fault(type).integrity_rules);
    if (!verdict.pass)
        throw Error(Errc::NotApplicable, std::string(fault_type_name(type)) + " offline fallback does not apply to this prompt");
}

bool has_digit(std::string_view w) {
    for (unsigned char c : w) {
        if (std::isdigit(c)) return true;
    }
    return false;
}

}  // namespace

bool InjectionMarkers::injected(const std::string& spec_id, std::string_view text) const {
    std::lock_guard lock(mu_);
    auto it = produced_.find(spec_id);
    return it != produced_.end() && it->second.contains(sha256_hex(text));
}

void InjectionMarkers::mark(const std::string& spec_id, std::string_view text) {
    std::lock_guard lock(mu_);
    produced_[spec_id].insert(sha256_hex(text));
}

PromptDoc inject_role_ambiguity(const PromptDoc& prompt, std::string_view secondary_role, const InjectionContext& ctx) {
    if (blank(secondary_role)) throw Error(Errc::EmptyRole, "secondary_role is empty");
    require_target(prompt, PromptRole::SystemPrompt);
    check_marker(prompt, ctx);
    const auto block = fill(default_templates().prompt("role_ambiguity"), "secondary_role", secondary_role);
    return commit(prompt, additive(prompt.text, block), FaultType::RoleAmbiguity, InjectionMode::Deterministic, ctx);
}

PromptDoc inject_blind_trust(const PromptDoc& prompt, std::string_view trusted_agent, const InjectionContext& ctx) {
    if (blank(trusted_agent)) throw Error(Errc::EmptyAgentId, "trusted_agent is empty");
    require_target(prompt, PromptRole::SystemPrompt);
    check_marker(prompt, ctx);
    const auto block = fill(default_templates().prompt("blind_trust"), "trusted_agent", trusted_agent);
    return commit(prompt, additive(prompt.text, block), FaultType::BlindTrust, InjectionMode::Deterministic, ctx);
}

PromptDoc conflict_instruction(const PromptDoc& prompt, InjectorClient& injector, std::uint64_t seed,
                               const InjectionContext& ctx) {
    require_target(prompt, PromptRole::UserPrompt);
    check_marker(prompt, ctx);
    auto text = delegated(FaultType::InstructionLogicConflict, prompt, injector, seed, ctx);
    return commit(prompt, std::move(text), FaultType::InstructionLogicConflict, InjectionMode::Delegated, ctx);
}

PromptDoc ambiguate_instruction(const PromptDoc& prompt, InjectorClient& injector, std::uint64_t seed,
                                const InjectionContext& ctx) {
    require_target(prompt, PromptRole::UserPrompt);
    check_marker(prompt, ctx);
    auto text = delegated(FaultType::InstructionAmbiguity, prompt, injector, seed, ctx);
    return commit(prompt, std::move(text), FaultType::InstructionAmbiguity, InjectionMode::Delegated, ctx);
}

PromptDoc conflict_instruction_offline(const PromptDoc& prompt, const InjectionContext& ctx) {
    require_target(prompt, PromptRole::UserPrompt);
    check_marker(prompt, ctx);
    // First imperative: the leading clause up to the first clause or sentence break.
    const auto body = trim(prompt.text);
    auto clause = body.substr(0, body.find_first_of(".;!?\n"));
    if (auto comma = clause.find(", "); comma != std::string_view::npos) clause = clause.substr(0, comma);
    clause = trim(clause);
    std::string negated = "do not " + std::string(clause);
    if (clause.size() > 1 && !(std::isupper(static_cast<unsigned char>(clause[1])))) {
        negated[7] = static_cast<char>(std::tolower(static_cast<unsigned char>(negated[7])));
    }

    std::string head(rtrim(prompt.text));
    char end = 0;
    if (!head.empty() && terminal(head.back())) {
        end = head.back();
        head.pop_back();
    }
    auto text = head + fill(default_templates().prompt("conflict_fallback"), "negated", negated);
    if (end) text += end;
    verify_fallback(FaultType::InstructionLogicConflict, prompt.text, text);
    return commit(prompt, std::move(text), FaultType::InstructionLogicConflict, InjectionMode::Deterministic, ctx);
}

PromptDoc ambiguate_instruction_offline(const PromptDoc& prompt, const InjectionContext& ctx) {
    require_target(prompt, PromptRole::UserPrompt);
    check_marker(prompt, ctx);

    // Tokenize keeping separators so the rewrite only touches chosen words.
    struct Tok {
        std::string text;
        bool word;
    };
    std::vector<Tok> toks;
    for (std::size_t i = 0; i < prompt.text.size();) {
        const bool ws = std::isspace(static_cast<unsigned char>(prompt.text[i]));
        std::size_t j = i;
        while (j < prompt.text.size() && static_cast<bool>(std::isspace(static_cast<unsigned char>(prompt.text[j]))) == ws) ++j;
        toks.push_back({prompt.text.substr(i, j - i), !ws});
        i = j;
    }

    bool changed = false;
    // Quantities first: any token carrying a digit.
    for (auto& t : toks) {
        if (t.word && has_digit(t.text)) {
            std::size_t e = t.text.size();
            while (e > 0 && std::ispunct(static_cast<unsigned char>(t.text[e - 1])) && t.text[e - 1] != '%') --e;
            t.text = "an appropriate value" + t.text.substr(e);
            changed = true;
        }
    }
    if (!changed) {
        // Otherwise the last content word of each sentence.
        std::optional<std::size_t> last;
        auto flush = [&] {
            if (!last) return;
            auto& w = toks[*last].text;
            std::size_t e = w.size();
            while (e > 0 && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
            w = "appropriately" + w.substr(e);
            last.reset();
            changed = true;
        };
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (!toks[i].word) continue;
            if (!content_words(toks[i].text).empty()) last = i;
            if (terminal(toks[i].text.back())) flush();
        }
        flush();
    }
    std::string text;
    for (const auto& t : toks) text += t.text;
    verify_fallback(FaultType::InstructionAmbiguity, prompt.text, text);
    return commit(prompt, std::move(text), FaultType::InstructionAmbiguity, InjectionMode::Deterministic, ctx);
}

PromptDoc apply_prompt_fault(const FaultSpec& spec, const PromptDoc& prompt, InjectorClient* injector,
                             const InjectionContext& ctx) {
    auto param = [&](const char* key) -> std::string {
        auto it = spec.params.find(key);
        return it != spec.params.end() && it->is_string() ? it->get<std::string>() : std::string();
    };
    auto need_injector = [&]() -> InjectorClient& {
        if (!injector) throw Error(Errc::InjectorUnavailable, "spec '" + spec.id + "' is delegated but no injector is configured");
        return *injector;
    };
    switch (spec.fault_type) {
        case FaultType::RoleAmbiguity:
            return inject_role_ambiguity(prompt, param("secondary_role"), ctx);
        case FaultType::BlindTrust:
            return inject_blind_trust(prompt, param("trusted_agent"), ctx);
        case FaultType::InstructionLogicConflict:
            return spec.mode == InjectionMode::Delegated ? conflict_instruction(prompt, need_injector(), spec.seed, ctx)
                                                         : conflict_instruction_offline(prompt, ctx);
        case FaultType::InstructionAmbiguity:
            return spec.mode == InjectionMode::Delegated ? ambiguate_instruction(prompt, need_injector(), spec.seed, ctx)
                                                         : ambiguate_instruction_offline(prompt, ctx);
        default:
            throw Error(Errc::KindMismatch, std::string(fault_type_name(spec.fault_type)) + " is not a prompt fault");
    }
}

}  // namespace masfire
