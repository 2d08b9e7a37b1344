#include "masfire/annotator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <thread>

#include "json_util.hpp"
#include "masfire/error.hpp"
#include "masfire/resources.hpp"

namespace masfire {

namespace {

constexpr std::array<std::string_view, 4> kTierKeys = {"mechanism", "rule", "prompt", "reasoning"};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string signature_text(const TierSignature& sig) {
    std::string out;
    for (std::size_t i = 0; i < 4; ++i) {
        if (i) out += ' ';
        std::string key = lower(tier_name(kAllTiers[i]));
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::toupper(c); });
        out += key + "=" + outcome_letter(sig[i]);
    }
    return out;
}

}  // namespace

char outcome_letter(TierOutcome o) noexcept {
    switch (o) {
        case TierOutcome::Success: return 'S';
        case TierOutcome::Failure: return 'F';
        case TierOutcome::Inactive: return 'I';
    }
    return '?';
}

std::optional<TierOutcome> parse_outcome_letter(char c) noexcept {
    switch (c) {
        case 'S': return TierOutcome::Success;
        case 'F': return TierOutcome::Failure;
        case 'I': return TierOutcome::Inactive;
        default: return std::nullopt;
    }
}

json tag_to_json(const BehaviorTag& tag) {
    json tiers = json::object();
    for (std::size_t i = 0; i < 4; ++i) tiers[std::string(tier_name(kAllTiers[i]))] = std::string(1, outcome_letter(tag.tiers[i]));
    return {{"tiers", tiers}, {"label", tag.label ? json(*tag.label) : json(nullptr)}, {"provenance", tag.provenance}};
}

BehaviorTag tag_from_json(const json& j) {
    if (!j.is_object() || !j.contains("tiers") || !j["tiers"].is_object()) throw Error(Errc::Schema, "behavior tag needs a tiers object");
    BehaviorTag tag;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string key(tier_name(kAllTiers[i]));
        const auto& v = j["tiers"].value(key, json());
        std::optional<TierOutcome> o;
        if (v.is_string() && v.get<std::string>().size() == 1) o = parse_outcome_letter(v.get<std::string>()[0]);
        if (!o) throw Error(Errc::Schema, "behavior tag: tier " + key + " must be S, F or I");
        tag.tiers[i] = *o;
    }
    if (auto it = j.find("label"); it != j.end() && it->is_string()) tag.label = it->get<std::string>();
    if (auto it = j.find("provenance"); it != j.end()) tag.provenance = *it;
    return tag;
}

// ---- catalog ----

const BehaviorGroup* BehaviorCatalog::for_fault(FaultType type) const {
    const bool action = std::find(action_members.begin(), action_members.end(), type) != action_members.end();
    const std::string name = action ? "ActionFault" : std::string(fault_type_name(type));
    for (const auto& g : groups)
        if (g.name == name) return &g;
    return nullptr;
}

BehaviorCatalog parse_behavior_catalog(const json& j) {
    detail::require_keys_subset(j, {"schema_version", "catalog_version", "action_fault_members", "groups"}, "behavior catalog");
    if (detail::require(j, "schema_version", "behavior catalog") != 1) throw Error(Errc::Schema, "behavior catalog: unsupported schema_version");
    BehaviorCatalog c;
    c.version = detail::required_string(j, "catalog_version", "behavior catalog");

    std::set<FaultType> members;
    for (const auto& m : detail::require(j, "action_fault_members", "behavior catalog")) {
        auto t = m.is_string() ? parse_fault_type(m.get<std::string>()) : std::nullopt;
        if (!t || category_of(*t) != FaultCategory::Action) throw Error(Errc::Schema, "behavior catalog: bad action member " + m.dump());
        c.action_members.push_back(*t);
        members.insert(*t);
    }
    std::size_t n_action = 0;
    for (auto t : kAllFaultTypes) n_action += category_of(t) == FaultCategory::Action;
    if (members.size() != n_action) throw Error(Errc::Schema, "behavior catalog: action_fault_members must list every Action fault once");

    std::set<std::string> seen;
    for (const auto& gj : detail::require(j, "groups", "behavior catalog")) {
        detail::require_keys_subset(gj, {"group", "behaviors"}, "behavior group");
        BehaviorGroup g;
        g.name = detail::required_string(gj, "group", "behavior group");
        const bool known = g.name == "ActionFault" || (parse_fault_type(g.name) && !members.contains(*parse_fault_type(g.name)));
        if (!known) throw Error(Errc::Schema, "behavior catalog: unknown group " + g.name);
        if (!seen.insert(g.name).second) throw Error(Errc::Schema, "behavior catalog: duplicate group " + g.name);
        std::set<std::string> labels;
        for (const auto& bj : detail::require(gj, "behaviors", g.name)) {
            detail::require_keys_subset(bj, {"label", "mechanism", "rule", "prompt", "reasoning"}, g.name + " behavior");
            CatalogBehavior b;
            b.label = detail::required_string(bj, "label", g.name + " behavior");
            if (b.label.empty() || !labels.insert(lower(b.label)).second)
                throw Error(Errc::Schema, "behavior catalog: empty or duplicate label in " + g.name);
            b.signature.fill(TierOutcome::Inactive);
            for (std::size_t i = 0; i < 4; ++i) {
                const std::string key(kTierKeys[i]);
                if (!bj.contains(key)) continue;
                const auto& v = bj[key];
                // a cell is a single S or F; both at once is not encodable, and I is the absence of a key
                if (!v.is_string() || (v != "S" && v != "F"))
                    throw Error(Errc::Schema, "behavior catalog: " + g.name + " / " + b.label + ": " + key + " must be \"S\" or \"F\"");
                b.signature[i] = *parse_outcome_letter(v.get<std::string>()[0]);
            }
            g.behaviors.push_back(std::move(b));
        }
        if (g.behaviors.empty()) throw Error(Errc::Schema, "behavior catalog: group " + g.name + " is empty");
        c.groups.push_back(std::move(g));
    }
    for (auto t : kAllFaultTypes)
        if (!c.for_fault(t)) throw Error(Errc::Schema, "behavior catalog: no group covers " + std::string(fault_type_name(t)));
    return c;
}

const BehaviorCatalog& default_behavior_catalog() {
    static const BehaviorCatalog catalog = parse_behavior_catalog(json::parse(resources::behavior_catalog()));
    return catalog;
}

// ---- rule-based ----

BehaviorTag annotate_rule_based(const std::vector<TraceEvent>& events, std::optional<FaultType> fault_type, const BehaviorCatalog& catalog) {
    std::array<int, 4> triggered{};
    std::array<int, 4> fixed{};
    for (const auto& e : events) {
        if (e.kind != EventKind::FtTriggered && e.kind != EventKind::FtFixed) continue;
        if (!e.tier) throw Error(Errc::CorruptTrace, "event " + std::to_string(e.seq) + " has no tier");
        const auto t = static_cast<std::size_t>(*e.tier);
        if (e.kind == EventKind::FtTriggered) {
            ++triggered[t];
        } else {
            if (fixed[t] >= triggered[t]) throw Error(Errc::CorruptTrace, "event " + std::to_string(e.seq) + ": ft_fixed before ft_triggered");
            ++fixed[t];
        }
    }
    BehaviorTag tag;
    for (std::size_t i = 0; i < 4; ++i) {
        if (triggered[i] == 0) continue;
        tag.tiers[i] = fixed[i] > 0 ? TierOutcome::Success : TierOutcome::Failure;
    }
    tag.provenance = {{"annotator", "rule"}};
    if (fault_type) {
        if (const auto* g = catalog.for_fault(*fault_type)) {
            const CatalogBehavior* match = nullptr;
            int n = 0;
            for (const auto& b : g->behaviors) {
                if (b.signature == tag.tiers) {
                    match = &b;
                    ++n;
                }
            }
            if (n == 1) tag.label = match->label;
        }
    }
    return tag;
}

// ---- judge ----

std::string event_line(const TraceEvent& e) {
    std::string line = "#" + std::to_string(e.seq) + " " + std::string(event_kind_name(e.kind)) + " agent=" + e.agent_id;
    if (e.tier) line += " tier=" + std::string(tier_name(*e.tier));
    if (e.spec_id) line += " spec=" + *e.spec_id;
    if (e.point) line += " point=" + std::string(point_name(*e.point));
    if (e.success) line += std::string(" success=") + (*e.success ? "true" : "false");
    if (!e.detail.empty()) line += " " + e.detail.dump();
    return line;
}

Transcript render_transcript(const std::vector<TraceEvent>& events, std::size_t budget, std::size_t last_k) {
    Transcript t;
    t.events_total = events.size();
    std::vector<std::string> lines;
    for (const auto& e : events) lines.push_back(event_line(e));
    auto join = [&](std::size_t from) {
        std::string out;
        for (std::size_t i = from; i < lines.size(); ++i) out += lines[i] + '\n';
        return out;
    };
    std::size_t from = 0;
    t.text = join(0);
    if (t.text.size() > budget) {
        from = lines.size() > last_k ? lines.size() - last_k : 0;
        t.text = join(from);
        // drop further events from the front until it fits
        while (t.text.size() > budget && from < lines.size()) t.text = join(++from);
    }
    t.events_kept = lines.size() - from;
    return t;
}

ChatRequest build_judge_request(const Transcript& transcript, std::optional<FaultType> fault_type, const BehaviorCatalog& catalog,
                                const JudgeOptions& options, int attempt) {
    std::string sys =
        "You label how a multi-agent system reacted to an injected fault, using four tiers of fault-tolerant behavior.\n"
        "Mechanism: the system's architecture or redundancy absorbed the fault (shared memory, repeated steps, retries).\n"
        "Rule: explicit procedures or heuristics caught it (filters, deduplication, loop guards, validation).\n"
        "Prompt: wording in the user or system prompt kept the agents on track.\n"
        "Reasoning: an agent noticed the problem by reflecting on its input and tried to correct it.\n"
        "For each tier answer S if the tier activated and mitigated the fault, F if it activated but failed, I if it never activated.\n";
    if (fault_type) {
        sys += "\nInjected fault: " + std::string(fault_type_name(*fault_type)) + ". Known behaviors for it:\n";
        if (const auto* g = catalog.for_fault(*fault_type))
            for (const auto& b : g->behaviors) sys += "- " + b.label + ": " + signature_text(b.signature) + "\n";
    }
    sys +=
        "\nAnswer with exactly one line and nothing else:\n"
        "MECHANISM=<S|F|I> RULE=<S|F|I> PROMPT=<S|F|I> REASONING=<S|F|I> LABEL=<one behavior name from the list, or omit>\n";
    std::string user = "Transcript";
    if (transcript.truncated())
        user += " (last " + std::to_string(transcript.events_kept) + " of " + std::to_string(transcript.events_total) + " events)";
    user += ":\n" + transcript.text;
    return {options.model, {{"system", sys}, {"user", user}}, options.seed + static_cast<std::uint64_t>(attempt)};
}

std::optional<BehaviorTag> parse_verdict(std::string_view text, const BehaviorGroup* group) {
    static const std::regex line_re(R"(^\s*MECHANISM=([SFI])\s+RULE=([SFI])\s+PROMPT=([SFI])\s+REASONING=([SFI])(?:\s+LABEL=(.*?))?\s*$)");
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    lines.push_back(cur);
    std::optional<BehaviorTag> found;
    for (const auto& l : lines) {
        std::smatch m;
        if (!std::regex_match(l, m, line_re)) continue;
        if (found) return std::nullopt;  // two verdicts is ambiguous
        BehaviorTag tag;
        for (std::size_t i = 0; i < 4; ++i) tag.tiers[i] = *parse_outcome_letter(m[i + 1].str()[0]);
        if (m[5].matched && !m[5].str().empty()) {
            const auto label = m[5].str();
            if (group) {
                auto it = std::find_if(group->behaviors.begin(), group->behaviors.end(),
                                       [&](const CatalogBehavior& b) { return lower(b.label) == lower(label); });
                if (it == group->behaviors.end()) return std::nullopt;
                tag.label = it->label;
            } else {
                tag.label = label;
            }
        }
        found = std::move(tag);
    }
    return found;
}

BehaviorTag annotate_llm(const std::vector<TraceEvent>& events, std::optional<FaultType> fault_type, const BehaviorCatalog& catalog,
                         InjectorEndpoint& judge, const JudgeOptions& options) {
    const auto transcript = render_transcript(events, options.context_budget, options.last_k);
    const BehaviorGroup* group = fault_type ? catalog.for_fault(*fault_type) : nullptr;
    bool any_reply = false;
    std::string last_error;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        std::string reply;
        try {
            reply = judge.complete(build_judge_request(transcript, fault_type, catalog, options, attempt));
        } catch (const Error& e) {
            last_error = e.what();
            continue;
        }
        any_reply = true;
        if (auto tag = parse_verdict(reply, group)) {
            tag->provenance = {{"annotator", "llm"},
                               {"judge", judge.identity()},
                               {"attempts", attempt + 1},
                               {"events_total", transcript.events_total},
                               {"events_kept", transcript.events_kept},
                               {"truncated", transcript.truncated()},
                               {"transcript_chars", transcript.text.size()}};
            return *tag;
        }
        last_error = "no verdict line in reply";
    }
    const auto tries = std::to_string(options.max_retries + 1);
    if (!any_reply) throw Error(Errc::JudgeUnavailable, judge.identity() + " failed " + tries + " attempts: " + last_error);
    throw Error(Errc::UnparseableVerdict, "judge gave no parseable verdict in " + tries + " attempts");
}

// ---- agreement ----

double cohen_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() && b.empty()) throw Error(Errc::EmptyInput, "kappa needs at least one item");
    if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "kappa sequences differ in length");
    const auto n = static_cast<double>(a.size());
    std::map<std::string, double> fa, fb;
    double agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++fa[a[i]];
        ++fb[b[i]];
        agree += a[i] == b[i];
    }
    const double p_o = agree / n;
    double p_e = 0;
    for (const auto& [label, ca] : fa) {
        auto it = fb.find(label);
        if (it != fb.end()) p_e += (ca / n) * (it->second / n);
    }
    if (p_e >= 1.0) return 1.0;  // both raters used one identical label throughout
    return (p_o - p_e) / (1.0 - p_e);
}

KappaReport tag_agreement(const std::vector<BehaviorTag>& a, const std::vector<BehaviorTag>& b) {
    if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "tag sequences differ in length");
    if (a.empty()) throw Error(Errc::EmptyInput, "no tags to compare");
    KappaReport r;
    std::vector<std::string> pa, pb;
    for (std::size_t t = 0; t < 4; ++t) {
        std::vector<std::string> ta, tb;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ta.emplace_back(1, outcome_letter(a[i].tiers[t]));
            tb.emplace_back(1, outcome_letter(b[i].tiers[t]));
        }
        r.per_tier[t] = cohen_kappa(ta, tb);
        // pooled labels keep the tier so S on Rule never matches S on Prompt
        for (std::size_t i = 0; i < ta.size(); ++i) {
            pa.push_back(std::to_string(t) + ta[i]);
            pb.push_back(std::to_string(t) + tb[i]);
        }
    }
    r.pooled = cohen_kappa(pa, pb);
    return r;
}

// ---- campaign ----

json annotate_campaign(const std::filesystem::path& dir, const std::string& annotator_name, const TaskAnnotator& annotate, unsigned in_flight) {
    const auto path = dir / "manifest.json";
    json manifest;
    {
        std::ifstream in(path);
        if (!in) throw Error(Errc::Io, "cannot read " + path.string());
        manifest = json::parse(in, nullptr, false);
        if (manifest.is_discarded() || !manifest.contains("runs")) throw Error(Errc::CorruptTrace, path.string() + ": not a campaign manifest");
    }
    struct Job {
        std::string run_id;
        std::string task_id;
        std::filesystem::path file;
        std::optional<FaultType> fault_type;
    };
    std::vector<Job> jobs;
    for (const auto& run : manifest["runs"]) {
        std::optional<FaultType> type;
        if (run.contains("fault_type") && run["fault_type"].is_string()) type = parse_fault_type(run["fault_type"].get<std::string>());
        for (const auto& t : run["tasks"])
            jobs.push_back({run["run_id"].get<std::string>(), t["task_id"].get<std::string>(), dir / t["file"].get<std::string>(), type});
    }

    std::vector<json> tags(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const auto rp = replay(jobs[i].file);
                auto j = tag_to_json(annotate(rp, jobs[i].fault_type));
                j["run_id"] = jobs[i].run_id;
                j["task_id"] = jobs[i].task_id;
                tags[i] = std::move(j);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(in_flight, static_cast<unsigned>(std::max<std::size_t>(jobs.size(), 1))));
    {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    json ann = {{"annotator", annotator_name}, {"catalog_version", default_behavior_catalog().version}, {"tasks", tags}};
    manifest["annotations"] = ann;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    return ann;
}

}  // namespace masfire
