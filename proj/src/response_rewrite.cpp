#include "masfire/response_rewrite.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>

#include "masfire/digest.hpp"
#include "masfire/error.hpp"

namespace masfire {

namespace {

std::size_t utf8_length(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80 ? 1 : 0;
    return n;
}

/// Coarse JSON type class used to pair same-typed parameters.
int type_class(const json& v) {
    if (v.is_number()) return 0;
    if (v.is_string()) return 1;
    if (v.is_boolean()) return 2;
    if (v.is_array()) return 3;
    if (v.is_object()) return 4;
    return 5;
}

struct Sentence {
    std::size_t begin, end;  // [begin, end) including trailing whitespace
};

std::vector<Sentence> split_sentences(std::string_view text) {
    std::vector<Sentence> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const bool stop = c == '\n' || ((c == '.' || c == '!' || c == '?') &&
                                        (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))));
        if (!stop) continue;
        // "2." at the start of a line is a list marker, not a sentence.
        const auto seg = text.substr(start, i - start);
        if (c == '.' && !seg.empty() && seg.find_first_not_of("0123456789 \t") == std::string_view::npos) continue;
        std::size_t j = i + 1;
        while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        out.push_back({start, j});
        start = j;
        i = j - 1;
    }
    if (start < text.size()) out.push_back({start, text.size()});
    std::erase_if(out, [&](const Sentence& s) { return content_words(text.substr(s.begin, s.end - s.begin)).empty(); });
    return out;
}

std::string rtrimmed(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

const FaultTemplate& tmpl(FaultType type) { return default_templates().for_fault(type); }

bool passes(FaultType type, std::string_view original, std::string_view mutated) {
    return check_integrity(original, mutated, tmpl(type).integrity_rules).pass;
}

std::string inexecutable_plan(const std::string& plan) {
    static const std::regex step(R"(^\s*(\d+)[.)])");
    int steps = 0;
    std::size_t pos = 0;
    while (pos <= plan.size()) {
        auto nl = plan.find('\n', pos);
        std::string line = plan.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        std::smatch m;
        if (std::regex_search(line, m, step)) steps = std::max(steps, std::stoi(m[1]));
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    const int next = steps + 1;
    const auto n = std::to_string(next);
    std::string step_text = "Use the plan_dependency_resolver tool on the output of step " + n +
                            " and complete step 1 only after step " + n + " has finished.";
    if (steps > 0) return rtrimmed(plan) + "\n" + n + ". " + step_text;
    return rtrimmed(plan) + " Finally, " + step_text;
}

std::string drop_critical_sentence(const std::string& text) {
    const auto sentences = split_sentences(text);
    if (sentences.size() < 2) throw Error(Errc::NotApplicable, "CriticalInfoLoss needs at least two sentences");
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto s = std::string_view(text).substr(sentences[i].begin, sentences[i].end - sentences[i].begin);
        bool constraint = false;
        for (const auto& w : content_words(s)) constraint = constraint || is_constraint_marker(w);
        if (constraint) order.push_back(i);
    }
    for (std::size_t i = sentences.size(); i-- > 0;) {
        if (std::find(order.begin(), order.end(), i) == order.end()) order.push_back(i);
    }
    for (auto i : order) {
        std::string out = text.substr(0, sentences[i].begin) + text.substr(sentences[i].end);
        out = rtrimmed(out);
        if (passes(FaultType::CriticalInfoLoss, text, out)) return out;
    }
    throw Error(Errc::NotApplicable, "no sentence can be dropped within the retention threshold");
}

std::string harden_hedges(const std::string& text) {
    static const std::vector<std::pair<std::string, std::string>> hedges = {
        {"likely", "definitely"},     {"probably", "certainly"}, {"possibly", "certainly"}, {"perhaps", "certainly"},
        {"maybe", "certainly"},       {"might", "will"},         {"may", "will"},           {"could", "will"},
        {"approximately", "exactly"}, {"roughly", "exactly"},    {"seems", "is"},           {"appears", "is"},
    };
    std::string out = text;
    for (const auto& [from, to] : hedges) {
        const std::regex word("\\b" + from + "\\b", std::regex::icase);
        std::string result;
        auto it = std::sregex_iterator(out.begin(), out.end(), word);
        std::size_t last = 0;
        for (; it != std::sregex_iterator(); ++it) {
            result += out.substr(last, it->position() - last);
            std::string rep = to;
            if (std::isupper(static_cast<unsigned char>(out[it->position()])))
                rep[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(rep[0])));
            result += rep;
            last = it->position() + it->length();
        }
        result += out.substr(last);
        out = std::move(result);
    }
    if (out == text) out = rtrimmed(text) + " This has been independently verified and is beyond doubt.";
    return out;
}

TraceEvent injected_event(const FaultSpec& spec, const std::string& agent, InterceptionPoint point, std::string_view in,
                          std::string_view out) {
    TraceEvent ev;
    ev.kind = EventKind::FaultInjected;
    ev.spec_id = spec.id;
    ev.agent_id = agent;
    ev.point = point;
    ev.payload_digest = sha256_hex(out);
    ev.detail = {{"fault_type", fault_type_name(spec.fault_type)},
                 {"mode", mode_name(spec.mode)},
                 {"offline_fallback", spec.offline_fallback()},
                 {"input_digest", sha256_hex(in)}};
    return ev;
}

std::string output_bytes(const AgentOutput& o) {
    if (o.tool_call) {
        if (o.tool_call->raw_arguments) return o.tool_call->tool_name + "\n" + *o.tool_call->raw_arguments;
        return tool_call_to_json(*o.tool_call).dump();
    }
    return o.content;
}

std::string history_bytes(const HistoryWindow& h) {
    json j = json::array();
    for (const auto& m : h.messages) j.push_back({m.sender, m.role, m.text});
    return j.dump();
}

std::string string_param(const json& params, const char* key) {
    auto it = params.find(key);
    return it != params.end() && it->is_string() ? it->get<std::string>() : std::string();
}

}  // namespace

json tool_call_to_json(const ToolCall& call) { return {{"name", call.tool_name}, {"arguments", call.arguments}}; }

ToolCall tool_call_from_text(std::string_view text) {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(Errc::Parse, "tool call is not a JSON object");
    auto name = j.find("name");
    auto args = j.find("arguments");
    if (name == j.end() || !name->is_string()) throw Error(Errc::Parse, "tool call lacks a string name");
    ToolCall call{name->get<std::string>(), json::object(), std::nullopt};
    if (args != j.end()) {
        if (!args->is_object()) throw Error(Errc::Parse, "tool call arguments must be an object");
        call.arguments = *args;
    }
    return call;
}

std::size_t HistoryWindow::non_system_count() const {
    return static_cast<std::size_t>(std::count_if(messages.begin(), messages.end(), [](const auto& m) { return !m.is_system(); }));
}

HistoryWindow drop_memory(const HistoryWindow& history, const MemoryPolicy& policy) {
    const auto total = history.non_system_count();
    std::vector<bool> drop(history.messages.size(), false);
    std::size_t dropped = 0;
    if (const auto* first = std::get_if<DropFirstN>(&policy)) {
        for (std::size_t i = 0; i < history.messages.size() && dropped < first->n; ++i) {
            if (!history.messages[i].is_system()) {
                drop[i] = true;
                ++dropped;
            }
        }
    } else {
        const auto& agent = std::get<DropAgent>(policy).agent;
        for (std::size_t i = 0; i < history.messages.size(); ++i) {
            if (!history.messages[i].is_system() && history.messages[i].sender == agent) {
                drop[i] = true;
                ++dropped;
            }
        }
        if (dropped == 0) throw Error(Errc::UnknownAgent, "no history messages from '" + agent + "'");
    }
    if (dropped >= total) throw Error(Errc::WouldEmptyHistory, "policy would remove every non-system message");
    HistoryWindow out;
    for (std::size_t i = 0; i < history.messages.size(); ++i) {
        if (!drop[i]) out.messages.push_back(history.messages[i]);
    }
    return out;
}

HistoryWindow violate_context(const HistoryWindow& history, std::size_t char_budget) {
    if (char_budget == 0) throw Error(Errc::Validation, "char_budget must be positive");
    std::size_t total = 0;
    for (const auto& m : history.messages) total += m.is_system() ? 0 : utf8_length(m.text);
    if (char_budget >= total)
        throw Error(Errc::BudgetNotBinding, "budget " + std::to_string(char_budget) + " >= history size " + std::to_string(total));

    std::vector<bool> keep(history.messages.size(), false);
    std::size_t used = 0;
    for (std::size_t i = history.messages.size(); i-- > 0;) {
        const auto& m = history.messages[i];
        if (m.is_system()) continue;
        const auto len = utf8_length(m.text);
        if (used + len > char_budget) break;
        used += len;
        keep[i] = true;
    }
    HistoryWindow out;
    bool marked = false;
    for (std::size_t i = 0; i < history.messages.size(); ++i) {
        const auto& m = history.messages[i];
        if (m.is_system()) {
            out.messages.push_back(m);
            continue;
        }
        if (!marked) {
            out.messages.push_back({"masfire", "system", std::string(kContextTruncatedMarker)});
            marked = true;
        }
        if (keep[i]) out.messages.push_back(m);
    }
    return out;
}

std::optional<CorruptionKind> parse_corruption_kind(std::string_view name) {
    if (name == "drop_closing_delimiter") return CorruptionKind::DropClosingDelimiter;
    if (name == "remove_required_field") return CorruptionKind::RemoveRequiredField;
    if (name == "type_flip") return CorruptionKind::TypeFlip;
    return std::nullopt;
}

std::string corrupt_format(std::string_view payload, CorruptionKind kind, std::string_view field, std::uint64_t) {
    auto doc = nlohmann::ordered_json::parse(payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(Errc::AlreadyInvalid, "payload is not a valid structured object");
    if (kind == CorruptionKind::DropClosingDelimiter) {
        const auto pos = payload.find_last_of("}]");
        std::string out(payload);
        out.erase(pos, 1);
        return out;
    }
    auto it = doc.find(std::string(field));
    if (it == doc.end()) throw Error(Errc::FieldNotFound, "field '" + std::string(field) + "' not in payload");
    if (kind == CorruptionKind::RemoveRequiredField) {
        doc.erase(it);
    } else {
        if (!it->is_number()) throw Error(Errc::NotApplicable, "field '" + std::string(field) + "' is not numeric");
        *it = it->dump();
    }
    return doc.dump();
}

ToolCall swap_tool_deterministic(const ToolCall& call, const std::vector<std::string>& catalog, std::uint64_t seed) {
    std::vector<std::string> tools;
    for (const auto& t : catalog) {
        if (std::find(tools.begin(), tools.end(), t) == tools.end()) tools.push_back(t);
    }
    auto pos = std::find(tools.begin(), tools.end(), call.tool_name);
    if (tools.size() < 2 || pos == tools.end())
        throw Error(Errc::CatalogTooSmall, "catalog needs two tools including '" + call.tool_name + "'");
    const auto len = tools.size();
    const auto idx = static_cast<std::size_t>(pos - tools.begin());
    const auto next = (idx + 1 + seed % (len - 1)) % len;
    ToolCall out = call;
    out.tool_name = tools[next];
    return out;
}

ToolCall swap_parameters_deterministic(const ToolCall& call) {
    if (!call.arguments.is_object()) throw Error(Errc::NotApplicable, "arguments are not an object");
    std::vector<std::string> keys;
    for (const auto& [k, _] : call.arguments.items()) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        for (std::size_t j = i + 1; j < keys.size(); ++j) {
            const auto& a = call.arguments[keys[i]];
            const auto& b = call.arguments[keys[j]];
            if (type_class(a) != type_class(b) || a == b) continue;
            ToolCall out = call;
            out.arguments[keys[i]] = b;
            out.arguments[keys[j]] = a;
            return out;
        }
    }
    throw Error(Errc::NotApplicable, "no two same-typed arguments with distinct values");
}

bool kind_compatible(FaultType type, OutputKind kind) {
    switch (type) {
        case FaultType::InexecutablePlan:
        case FaultType::CriticalInfoLoss:
            return kind == OutputKind::Plan;
        case FaultType::Hallucination:
            return kind == OutputKind::Reasoning || kind == OutputKind::PlainMessage;
        case FaultType::ToolSelectionError:
        case FaultType::ParameterFillingError:
        case FaultType::ParameterFormatError:
            return kind == OutputKind::ToolCall;
        default:
            return false;
    }
}

namespace {

void require_compatible(const AgentOutput& output, FaultType type) {
    if (!kind_compatible(type, output.kind))
        throw Error(Errc::KindMismatch, std::string(fault_type_name(type)) + " cannot target a " +
                                            std::string(output_kind_name(output.kind)) + " output");
    if (output.kind == OutputKind::ToolCall && !output.tool_call)
        throw Error(Errc::KindMismatch, "tool_call output without a tool call");
}

}  // namespace

AgentOutput rewrite_semantic(const AgentOutput& output, FaultType type, InjectorClient& injector, const FaultSpec& spec,
                             EventSink* sink) {
    if (!is_semantic(type) || category_of(type) == FaultCategory::Instruction)
        throw Error(Errc::KindMismatch, std::string(fault_type_name(type)) + " is not an output-level semantic fault");
    require_compatible(output, type);
    AgentOutput out = output;
    if (output.kind == OutputKind::ToolCall) {
        const auto original = tool_call_to_json(*output.tool_call).dump();
        const auto text = injector.mutate(type, original, spec.seed, spec.id, output.producer, sink);
        try {
            out.tool_call = tool_call_from_text(text);
        } catch (const Error& e) {
            throw Error(Errc::IntegrityCheckFailed, std::string("injector tool call unusable: ") + e.what());
        }
        return out;
    }
    out.content = injector.mutate(type, output.content, spec.seed, spec.id, output.producer, sink);
    return out;
}

AgentOutput rewrite_semantic_offline(const AgentOutput& output, FaultType type, const FaultSpec& spec,
                                     const std::vector<std::string>& tool_catalog) {
    require_compatible(output, type);
    AgentOutput out = output;
    switch (type) {
        case FaultType::InexecutablePlan:
            out.content = inexecutable_plan(output.content);
            break;
        case FaultType::CriticalInfoLoss:
            out.content = drop_critical_sentence(output.content);
            break;
        case FaultType::Hallucination:
            out.content = harden_hedges(output.content);
            break;
        case FaultType::ToolSelectionError: {
            std::vector<std::string> catalog;
            if (auto it = spec.params.find("tool_catalog"); it != spec.params.end()) {
                catalog = it->get<std::vector<std::string>>();
            } else {
                catalog = tool_catalog;
            }
            // The agent's own tool is always a member of its catalog.
            if (std::find(catalog.begin(), catalog.end(), output.tool_call->tool_name) == catalog.end())
                catalog.insert(catalog.begin(), output.tool_call->tool_name);
            out.tool_call = swap_tool_deterministic(*output.tool_call, catalog, spec.seed);
            break;
        }
        case FaultType::ParameterFillingError:
            out.tool_call = swap_parameters_deterministic(*output.tool_call);
            break;
        default:
            throw Error(Errc::KindMismatch, std::string(fault_type_name(type)) + " has no offline output rewrite");
    }
    return out;
}

AgentOutput apply_output_fault(const FaultSpec& spec, const AgentOutput& output, const RewriteContext& ctx) {
    require_compatible(output, spec.fault_type);
    const auto point = output.kind == OutputKind::ToolCall ? InterceptionPoint::ToolCallEgress : InterceptionPoint::AgentOutputEgress;
    AgentOutput out;
    if (spec.fault_type == FaultType::ParameterFormatError) {
        const auto kind = parse_corruption_kind(string_param(spec.params, "corruption_kind")).value_or(CorruptionKind::DropClosingDelimiter);
        out = output;
        const auto raw = corrupt_format(output.tool_call->arguments.dump(), kind, string_param(spec.params, "field"), spec.seed);
        out.tool_call->raw_arguments = raw;
        if (kind != CorruptionKind::DropClosingDelimiter) out.tool_call->arguments = json::parse(raw);
    } else if (spec.mode == InjectionMode::Delegated) {
        if (!ctx.injector) throw Error(Errc::InjectorUnavailable, "spec '" + spec.id + "' is delegated but no injector is configured");
        out = rewrite_semantic(output, spec.fault_type, *ctx.injector, spec, ctx.sink);
    } else {
        out = rewrite_semantic_offline(output, spec.fault_type, spec, ctx.tool_catalog);
    }
    if (ctx.sink) {
        auto ev = injected_event(spec, ctx.agent_id.empty() ? output.producer : ctx.agent_id, point, output_bytes(output), output_bytes(out));
        if (output.tool_call) {
            ev.detail["tool_before"] = output.tool_call->tool_name;
            ev.detail["tool_after"] = out.tool_call->tool_name;
        }
        ctx.sink->record(std::move(ev));
    }
    return out;
}

HistoryWindow apply_history_fault(const FaultSpec& spec, const HistoryWindow& history, const RewriteContext& ctx) {
    HistoryWindow out;
    json detail;
    if (spec.fault_type == FaultType::MemoryLoss) {
        if (auto agent = string_param(spec.params, "drop_agent"); !agent.empty()) {
            out = drop_memory(history, DropAgent{agent});
            detail = {{"policy", "drop_agent"}, {"agent", agent}};
        } else {
            const auto n = spec.params.value("drop_first_n", 1);
            out = drop_memory(history, DropFirstN{static_cast<std::size_t>(n)});
            detail = {{"policy", "drop_first_n"}, {"n", n}, {"unit", "messages"}};
        }
    } else if (spec.fault_type == FaultType::ContextLengthViolation) {
        const auto budget = spec.params.value("char_budget", 0);
        if (budget <= 0) throw Error(Errc::Validation, "char_budget must be positive");
        out = violate_context(history, static_cast<std::size_t>(budget));
        detail = {{"char_budget", budget}};
    } else {
        throw Error(Errc::KindMismatch, std::string(fault_type_name(spec.fault_type)) + " is not a memory fault");
    }
    if (ctx.sink) {
        auto ev = injected_event(spec, ctx.agent_id, InterceptionPoint::HistoryWindowIngress, history_bytes(history), history_bytes(out));
        ev.detail["messages_before"] = history.messages.size();
        ev.detail["messages_after"] = out.messages.size();
        ev.detail.update(detail);
        ctx.sink->record(std::move(ev));
    }
    return out;
}

}  // namespace masfire
