#include "masfire/sim.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "masfire/digest.hpp"
#include "masfire/error.hpp"
#include "masfire/prompt_mod.hpp"
#include "masfire/response_rewrite.hpp"

namespace masfire {

namespace {

const std::string kUser = "user";

bool not_applicable(Errc c) {
    switch (c) {
        case Errc::NotApplicable:
        case Errc::KindMismatch:
        case Errc::WouldEmptyHistory:
        case Errc::BudgetNotBinding:
        case Errc::UnknownAgent:
        case Errc::CatalogTooSmall:
        case Errc::FieldNotFound:
        case Errc::AlreadyInvalid:
        case Errc::EmptyPrompt:
        case Errc::WrongPromptRole:
            return true;
        default:
            return false;
    }
}

std::string tool_payload(const ToolCall& call) {
    if (call.raw_arguments) return R"({"name":)" + json(call.tool_name).dump() + R"(,"arguments":)" + *call.raw_arguments + "}";
    return tool_call_to_json(call).dump();
}

struct Produced {
    std::string payload;
    OutputKind kind = OutputKind::PlainMessage;
    std::optional<Taint> taint;
};

struct Assessment {
    std::optional<Taint> taint;
    bool detected = false;
    bool fixed = false;
};

class Runner {
public:
    Runner(const Scenario& scenario, const TaskDescriptor& task, const std::vector<FaultSpec>& plan, const RunContext& ctx)
        : sc_(scenario), task_(task), plan_(plan), ctx_(ctx), trace_(task.id, ctx.run_id),
          outcome_rng_(derive_seed(ctx.seed, "outcome")) {
        for (const auto& a : sc_.agents) {
            ids_.push_back(a.id);
            agents_.emplace(a.id, AgentState{&a, Rng(derive_seed(ctx.seed, "agent", a.id)), {}, {}, {}, {}, {}, a.system_prompt, 0});
        }
        for (auto& spec : plan_) spec.seed = ctx.seed;
    }

    TaskRun run() {
        validate_scenario(sc_);
        init_prompts();
        bool ok = false;
        switch (sc_.topology) {
            case Topology::LinearPipeline: ok = run_linear(); break;
            case Topology::CriticRefineLoop: ok = run_critic(); break;
            case Topology::BilateralNegotiation: ok = run_bilateral(); break;
        }
        Rng base(derive_seed(ctx_.baseline_seed, "baseline_ok"));
        const bool baseline_ok = base.bernoulli(sc_.baseline_success);
        bool applicable = true;
        for (const auto& s : plan_) applicable = applicable && fired_.contains(s.id);
        trace_.finish(ok && baseline_ok, applicable);
        TaskRun r{std::move(trace_), {}, stats_};
        r.outcome = *r.trace.outcome();
        return r;
    }

private:
    struct AgentState {
        const ScriptedAgent* def;
        Rng rng;
        std::vector<Delivery> inbox;
        std::vector<HistoryMessage> seen;
        std::set<std::string> dedup;
        std::optional<Taint> prompt_taint;
        std::optional<std::string> trusts;
        std::string system_prompt;
        int acts = 0;
    };

    AgentState& agent(const std::string& id) { return agents_.at(id); }

    TraceEvent event(EventKind kind, const std::string& agent_id, std::string digest, json detail = json::object()) {
        TraceEvent e;
        e.kind = kind;
        e.agent_id = agent_id;
        e.payload_digest = std::move(digest);
        e.detail = std::move(detail);
        return e;
    }

    void ft(EventKind kind, FtTier tier, const std::string& agent_id, const std::optional<Taint>& taint, const char* why) {
        auto e = event(kind, agent_id, sha256_hex(""), {{"cause", why}});
        e.tier = tier;
        if (taint) {
            e.spec_id = taint->spec_id;
            e.detail["fault_type"] = fault_type_name(taint->fault_type);
        }
        trace_.emit(std::move(e));
    }

    void init_prompts() {
        for (const auto& id : ids_) {
            auto& st = agent(id);
            for (const auto& spec : plan_) {
                if (spec.target.kind != TargetSelector::Kind::Point || spec.target.point != InterceptionPoint::SystemPromptInit) continue;
                if (!spec.target.matches_agent(id, st.def->role)) continue;
                try {
                    InjectionContext ic{spec.id, id, &trace_, nullptr};
                    st.system_prompt = apply_prompt_fault(spec, {PromptRole::SystemPrompt, st.system_prompt, id}, ctx_.injector, ic).text;
                } catch (const Error& e) {
                    if (!not_applicable(e.code())) throw;
                    continue;
                }
                fired_.insert(spec.id);
                st.prompt_taint = Taint{spec.id, spec.fault_type};
                if (spec.fault_type == FaultType::BlindTrust) st.trusts = spec.params.value("trusted_agent", std::string("*"));
            }
        }
    }

    /// Task input delivered to the entry agent, after any user-prompt fault.
    void send_task(const std::string& entry) {
        std::string text = task_.input;
        std::optional<Taint> taint;
        for (const auto& spec : plan_) {
            if (spec.target.kind != TargetSelector::Kind::Point || spec.target.point != InterceptionPoint::UserPromptIngress) continue;
            if (fired_.contains(spec.id) || !spec.target.matches_agent(entry, agent(entry).def->role)) continue;
            try {
                InjectionContext ic{spec.id, entry, &trace_, nullptr};
                text = apply_prompt_fault(spec, {PromptRole::UserPrompt, text, kUser}, ctx_.injector, ic).text;
            } catch (const Error& e) {
                if (!not_applicable(e.code())) throw;
                continue;
            }
            fired_.insert(spec.id);
            taint = Taint{spec.id, spec.fault_type};
        }
        send(kUser, {entry}, text, OutputKind::PlainMessage, taint);
    }

    // ---- bus ----

    void send(const std::string& sender, const std::vector<std::string>& to, const std::string& payload, OutputKind kind,
              const std::optional<Taint>& taint) {
        const auto id = next_msg_++;
        trace_.emit(event(EventKind::MsgSent, sender, sha256_hex(payload), {{"msg_id", id}, {"to", to}, {"hop", 0}}));
        if (sc_.shared_pool) pool_.push_back({sender, sender == kUser ? "user" : "assistant", payload});
        for (const auto& r : to) {
            Delivery d{id, sender, r, payload, kind, 1, taint, false, false, {}};
            for (auto& x : route(d)) enqueue(std::move(x));
        }
    }

    std::vector<Delivery> route(const Delivery& d) {
        for (const auto& spec : plan_) {
            if (spec.target.kind != TargetSelector::Kind::BusEdge || fired_.contains(spec.id)) continue;
            if (!spec.target.matches_edge(d.sender, d.recipient)) continue;
            fired_.insert(spec.id);
            auto out = apply_routing_fault(spec, d, ids_);
            std::vector<std::string> targets;
            for (const auto& x : out) targets.push_back(x.recipient);
            auto e = event(EventKind::FaultInjected, d.sender, sha256_hex(d.payload),
                           {{"fault_type", fault_type_name(spec.fault_type)},
                            {"mode", mode_name(spec.mode)},
                            {"offline_fallback", false},
                            {"edge_from", d.sender},
                            {"edge_to", d.recipient},
                            {"deliveries", targets}});
            e.spec_id = spec.id;
            trace_.emit(std::move(e));
            return out;
        }
        return {d};
    }

    void enqueue(Delivery d) {
        ++stats_.enqueued;
        queue_.push_back(std::move(d));
    }

    void filtered(const Delivery& d, const char* reason) {
        ++stats_.filtered;
        trace_.emit(event(EventKind::MsgFiltered, d.recipient, sha256_hex(d.payload),
                          {{"msg_id", d.msg_id}, {"from", d.sender}, {"reason", reason}}));
        if (d.fault_copy) {
            ft(EventKind::FtTriggered, FtTier::Rule, d.recipient, d.taint, reason);
            ft(EventKind::FtFixed, FtTier::Rule, d.recipient, d.taint, reason);
        }
    }

    void repair(const Delivery& d) {
        for (const auto& r : d.intended) {
            Delivery x = d;
            x.recipient = r;
            x.hop = 1;
            x.captured = false;
            x.taint.reset();
            x.intended.clear();
            trace_.emit(event(EventKind::MsgSent, d.sender, sha256_hex(d.payload),
                              {{"msg_id", d.msg_id}, {"to", {r}}, {"hop", 0}, {"repair", true}}));
            enqueue(std::move(x));
        }
    }

    void drain() {
        while (!queue_.empty()) {
            Delivery d = std::move(queue_.front());
            queue_.pop_front();
            auto& st = agent(d.recipient);
            const auto& f = st.def->filters;
            if (d.captured) {
                const int guard = f.loop_guard_max_hops;
                if (guard > 0 && d.hop > guard) {
                    ++stats_.dropped;
                    trace_.emit(event(EventKind::LoopDetected, d.sender, sha256_hex(d.payload),
                                      {{"msg_id", d.msg_id}, {"guard", "agent"}, {"max_hops", guard}, {"hop", d.hop}}));
                    ft(EventKind::FtTriggered, FtTier::Rule, d.sender, d.taint, "loop_guard");
                    repair(d);
                    ft(EventKind::FtFixed, FtTier::Rule, d.sender, d.taint, "loop_guard");
                    continue;
                }
                if (guard == 0 && d.hop > kBusHopCap) {
                    ++stats_.dropped;
                    trace_.emit(event(EventKind::LoopDetected, d.sender, sha256_hex(d.payload),
                                      {{"msg_id", d.msg_id}, {"guard", "bus_cap"}, {"max_hops", kBusHopCap}, {"hop", d.hop}}));
                    continue;
                }
                ++stats_.processed;
                trace_.emit(event(EventKind::MsgReceived, d.recipient, sha256_hex(d.payload),
                                  {{"msg_id", d.msg_id}, {"from", d.sender}, {"hop", d.hop}, {"self", true}}));
                if (guard == 0 && d.hop == 1 && st.rng.bernoulli(st.def->policy.p_detect)) {
                    // Without a guard the sender may still notice its own message coming back.
                    ft(EventKind::FtTriggered, st.def->tier_label, d.sender, d.taint, "self_delivery");
                    if (st.rng.bernoulli(st.def->policy.p_fix)) {
                        repair(d);
                        ft(EventKind::FtFixed, st.def->tier_label, d.sender, d.taint, "self_delivery");
                        fixer_ = &st;
                        continue;
                    }
                }
                Delivery next = d;
                ++next.hop;
                trace_.emit(event(EventKind::MsgSent, d.sender, sha256_hex(d.payload),
                                  {{"msg_id", d.msg_id}, {"to", {d.sender}}, {"hop", d.hop}}));
                enqueue(std::move(next));
                continue;
            }
            if (f.dedup && !st.dedup.insert(sha256_hex(d.sender + '\x1f' + d.payload)).second) {
                filtered(d, "dedup");
                continue;
            }
            if (!f.subscriptions.empty() && !f.subscriptions.contains(d.sender)) {
                filtered(d, "subscription");
                continue;
            }
            ++stats_.processed;
            trace_.emit(event(EventKind::MsgReceived, d.recipient, sha256_hex(d.payload),
                              {{"msg_id", d.msg_id}, {"from", d.sender}, {"hop", d.hop}}));
            st.seen.push_back({d.sender, d.sender == kUser ? "user" : "assistant", d.payload});
            st.inbox.push_back(std::move(d));
        }
    }

    // ---- agents ----

    std::vector<Delivery> take(AgentState& st) { return std::exchange(st.inbox, {}); }

    static bool has_from(const std::vector<Delivery>& in, const std::string& sender) {
        return std::any_of(in.begin(), in.end(), [&](const Delivery& d) { return d.sender == sender; });
    }

    Assessment assess(AgentState& st, const std::vector<Delivery>& inputs, bool try_fix) {
        std::vector<const Delivery*> bad;
        for (const auto& d : inputs) {
            if (d.taint) bad.push_back(&d);
        }
        if (bad.empty()) return {};
        if (sc_.shared_pool) {
            auto loss = std::find_if(bad.begin(), bad.end(), [](const Delivery* d) { return is_loss_fault(d->taint->fault_type); });
            if (loss != bad.end()) {
                // The pool still holds the full context; the reader restores it.
                ft(EventKind::FtTriggered, FtTier::Mechanism, st.def->id, (*loss)->taint, "shared_pool");
                ft(EventKind::FtFixed, FtTier::Mechanism, st.def->id, (*loss)->taint, "shared_pool");
                std::erase_if(bad, [](const Delivery* d) { return is_loss_fault(d->taint->fault_type); });
                if (bad.empty()) return {};
            }
        }
        Assessment a;
        a.taint = bad.front()->taint;
        const bool blind = st.trusts && std::any_of(bad.begin(), bad.end(), [&](const Delivery* d) {
                               return *st.trusts == "*" || *st.trusts == d->sender;
                           });
        const double p_detect = blind ? 0.0 : st.def->policy.p_detect;
        if (!st.rng.bernoulli(p_detect)) return a;
        a.detected = true;
        ft(EventKind::FtTriggered, st.def->tier_label, st.def->id, a.taint, "input_check");
        if (!try_fix) return a;
        if (st.rng.bernoulli(st.def->policy.p_fix)) {
            ft(EventKind::FtFixed, st.def->tier_label, st.def->id, a.taint, "input_check");
            a.fixed = true;
            a.taint.reset();
            fixer_ = &st;
        }
        return a;
    }

    std::string base_payload(const AgentState& st, const std::string& from, OutputKind kind) const {
        const auto n = std::to_string(st.acts);
        switch (kind) {
            case OutputKind::Plan:
                return "1. Restate the request from " + from + " for task " + task_.id + " (revision " + n +
                       ").\n2. Break the work into steps; the design must not exceed the stated scope.\n"
                       "3. Hand the plan to the next role.";
            case OutputKind::Reasoning:
                return "Checked the input from " + from + " for task " + task_.id + " (pass " + n +
                       "). The result is likely consistent with every stated constraint.";
            case OutputKind::PlainMessage:
            case OutputKind::ToolCall:
                break;
        }
        return "Reviewed the work from " + from + " for task " + task_.id + " (round " + n + "); no blocking issues remain.";
    }

    ToolCall base_tool_call(const AgentState& st) const {
        const auto& tools = st.def->tools;
        const auto pick = derive_seed(0, task_.id, st.def->id) % tools.size();
        return {tools[pick], {{"query", task_.input.substr(0, 48)}, {"limit", 5}, {"offset", 0}}, std::nullopt};
    }

    HistoryWindow window(const AgentState& st) const {
        HistoryWindow h;
        h.messages.push_back({st.def->id, "system", st.system_prompt});
        const auto& src = sc_.shared_pool ? pool_ : st.seen;
        h.messages.insert(h.messages.end(), src.begin(), src.end());
        return h;
    }

    bool spec_targets(const FaultSpec& spec, InterceptionPoint point, const AgentState& st) const {
        return spec.target.kind == TargetSelector::Kind::Point && spec.target.point == point && !fired_.contains(spec.id) &&
               spec.target.matches_agent(st.def->id, st.def->role);
    }

    Produced produce(AgentState& st, const std::string& from, std::optional<Taint> carried) {
        ++st.acts;
        RewriteContext rc{st.def->id, &trace_, ctx_.injector, st.def->tools};
        std::optional<Taint> taint = carried ? carried : st.prompt_taint;

        for (const auto& spec : plan_) {
            if (!spec_targets(spec, InterceptionPoint::HistoryWindowIngress, st)) continue;
            try {
                apply_history_fault(spec, window(st), rc);
            } catch (const Error& e) {
                if (!not_applicable(e.code())) throw;
                continue;
            }
            fired_.insert(spec.id);
            Taint t{spec.id, spec.fault_type};
            if (sc_.shared_pool) {
                ft(EventKind::FtTriggered, FtTier::Mechanism, st.def->id, t, "shared_pool");
                ft(EventKind::FtFixed, FtTier::Mechanism, st.def->id, t, "shared_pool");
            } else if (!taint) {
                taint = t;
            }
        }

        const bool tool_agent = st.def->output_kind == OutputKind::ToolCall && !st.def->tools.empty();
        AgentOutput out;
        out.producer = st.def->id;
        if (tool_agent) {
            out.kind = OutputKind::ToolCall;
            out.tool_call = base_tool_call(st);
            out.content = tool_payload(*out.tool_call);
        } else {
            out.kind = st.def->output_kind == OutputKind::ToolCall ? OutputKind::PlainMessage : st.def->output_kind;
            out.content = base_payload(st, from, out.kind);
        }
        const auto point = out.kind == OutputKind::ToolCall ? InterceptionPoint::ToolCallEgress : InterceptionPoint::AgentOutputEgress;
        for (const auto& spec : plan_) {
            if (!spec_targets(spec, point, st)) continue;
            try {
                out = apply_output_fault(spec, out, rc);
            } catch (const Error& e) {
                if (!not_applicable(e.code())) throw;
                continue;
            }
            fired_.insert(spec.id);
            taint = Taint{spec.id, spec.fault_type};
            if (out.tool_call) out.content = tool_payload(*out.tool_call);
        }
        return {out.content, out.kind, taint};
    }

    bool settle(std::optional<Taint> final_taint, AgentState& last) {
        if (final_taint) return outcome_rng_.bernoulli(last.def->policy.p_succ_given_unfixed);
        if (fixer_) return outcome_rng_.bernoulli(fixer_->def->policy.p_succ_given_fix);
        return true;
    }

    // ---- topologies ----

    bool run_linear() {
        send_task(ids_.front());
        drain();
        std::optional<Taint> final_taint;
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            auto& st = agent(ids_[i]);
            const auto& pred = i == 0 ? kUser : ids_[i - 1];
            if (!has_from(st.inbox, pred)) return false;  // stalled: input never arrived
            const auto in = take(st);
            const auto a = assess(st, in, true);
            auto out = produce(st, pred, a.taint);
            if (i + 1 < ids_.size()) {
                send(st.def->id, {ids_[i + 1]}, out.payload, out.kind, out.taint);
                drain();
            } else {
                final_taint = out.taint;
            }
        }
        // A tainted final artifact fails outright in a pipeline; nobody downstream can repair it.
        if (final_taint) return false;
        return settle(std::nullopt, agent(ids_.back()));
    }

    bool run_critic() {
        auto& gen = agent(ids_[0]);
        auto& judge = agent(ids_[1]);
        auto& refiner = agent(ids_[2]);
        send_task(gen.def->id);
        drain();
        if (!has_from(gen.inbox, kUser)) return false;
        {
            const auto in = take(gen);
            const auto a = assess(gen, in, true);
            auto out = produce(gen, kUser, a.taint);
            send(gen.def->id, {judge.def->id}, out.payload, out.kind, out.taint);
            drain();
        }
        for (int iter = 1; iter <= sc_.max_iterations; ++iter) {
            if (judge.inbox.empty()) return false;
            const auto in = take(judge);
            const auto from = in.back().sender;
            const auto a = assess(judge, in, false);
            auto verdict = produce(judge, from, std::nullopt);
            if (!a.detected) {
                send(judge.def->id, {}, verdict.payload, verdict.kind, verdict.taint);
                return settle(a.taint ? a.taint : verdict.taint, judge);
            }
            send(judge.def->id, {refiner.def->id}, verdict.payload, verdict.kind, verdict.taint);
            drain();
            if (refiner.inbox.empty()) return false;
            take(refiner);
            // Repair odds belong to the critic: the refiner only executes its critique.
            std::optional<Taint> candidate = a.taint;
            if (judge.rng.bernoulli(judge.def->policy.p_fix)) {
                ft(EventKind::FtFixed, judge.def->tier_label, judge.def->id, a.taint, "critic_refine");
                candidate.reset();
                fixer_ = &judge;
            }
            auto revised = produce(refiner, judge.def->id, candidate);
            send(refiner.def->id, {judge.def->id}, revised.payload, revised.kind, revised.taint);
            drain();
        }
        return false;  // never accepted within max_iterations
    }

    bool run_bilateral() {
        AgentState* speaker = &agent(ids_[0]);
        AgentState* other = &agent(ids_[1]);
        AgentState& assistant = agent(ids_[1]);
        send_task(speaker->def->id);
        drain();
        int turns = 0;
        int productive = 0;
        std::string from = kUser;
        while (turns < sc_.turn_limit) {
            if (speaker->inbox.empty()) return false;
            const auto in = take(*speaker);
            const auto a = assess(*speaker, in, true);
            turns += a.fixed ? 2 : 1;  // a repair needs a clarification exchange
            if (turns > sc_.turn_limit) return false;
            auto out = produce(*speaker, from, a.taint);
            if (speaker == &assistant && ++productive == sc_.goal_turns) {
                send(speaker->def->id, {}, out.payload, out.kind, out.taint);
                return settle(out.taint, *speaker);
            }
            send(speaker->def->id, {other->def->id}, out.payload, out.kind, out.taint);
            drain();
            from = speaker->def->id;
            std::swap(speaker, other);
        }
        return false;
    }

    const Scenario& sc_;
    const TaskDescriptor& task_;
    std::vector<FaultSpec> plan_;
    RunContext ctx_;
    TaskTrace trace_;
    Rng outcome_rng_;
    std::vector<std::string> ids_;
    std::map<std::string, AgentState> agents_;
    std::deque<Delivery> queue_;
    std::vector<HistoryMessage> pool_;
    std::set<std::string> fired_;
    BusStats stats_;
    std::uint64_t next_msg_ = 0;
    AgentState* fixer_ = nullptr;
};

}  // namespace

bool is_loss_fault(FaultType type) {
    return type == FaultType::CriticalInfoLoss || type == FaultType::MemoryLoss || type == FaultType::ContextLengthViolation;
}

std::vector<Delivery> apply_routing_fault(const FaultSpec& spec, const Delivery& delivery, const std::vector<std::string>& agents) {
    const Taint taint{spec.id, spec.fault_type};
    std::vector<Delivery> out;
    switch (spec.fault_type) {
        case FaultType::MessageStorm: {
            const int k = spec.params.value("replication_factor", 3);
            for (int i = 0; i < k; ++i) {
                Delivery d = delivery;
                if (i > 0) {
                    d.fault_copy = true;
                    d.taint = taint;
                }
                out.push_back(std::move(d));
            }
            break;
        }
        case FaultType::MessageCycle: {
            Delivery d = delivery;
            d.intended = {delivery.recipient};
            d.recipient = delivery.sender;
            d.captured = true;
            d.taint = taint;
            out.push_back(std::move(d));
            break;
        }
        case FaultType::MessageBroadcastAmplification: {
            out.push_back(delivery);
            for (const auto& a : agents) {
                if (a == delivery.recipient) continue;
                Delivery d = delivery;
                d.recipient = a;
                d.fault_copy = true;
                d.taint = taint;
                out.push_back(std::move(d));
            }
            break;
        }
        default:
            throw Error(Errc::KindMismatch, std::string(fault_type_name(spec.fault_type)) + " is not a routing fault");
    }
    return out;
}

TaskRun run_task(const Scenario& scenario, const TaskDescriptor& task, const std::vector<FaultSpec>& plan, const RunContext& ctx) {
    return Runner(scenario, task, plan, ctx).run();
}

namespace {

struct RunPlan {
    std::string run_id;
    std::optional<FaultSpec> spec;
};

json manifest_json(const CampaignConfig& config, const CampaignOptions& options, const std::vector<RunResult>& runs,
                   std::string_view status) {
    json m = {{"schema_version", 1},
              {"campaign_seed", config.campaign_seed},
              {"hash_algo", kHashAlgo},
              {"config_digest", sha256_hex(serialize_campaign(config))},
              {"scenario", topology_name(config.simulator->scenario.topology)},
              {"status", status},
              {"injector", options.injector ? json(options.injector->endpoint().identity()) : json(nullptr)},
              {"applicable_only", config.applicable_only},
              {"runs", json::array()}};
    for (const auto& r : runs) {
        json run = {{"run_id", r.run_id},
                    {"fault_type", r.fault_type ? json(fault_type_name(*r.fault_type)) : json(nullptr)},
                    {"offline_fallback", r.offline_fallback},
                    {"tasks", json::array()}};
        for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
            json t = {{"task_id", r.outcomes[i].task_id},
                      {"success", r.outcomes[i].success},
                      {"applicable", r.outcomes[i].applicable}};
            if (i < r.trace_files.size()) {
                t["file"] = r.trace_files[i];
                t["digest"] = r.trace_digests[i];
            }
            run["tasks"].push_back(std::move(t));
        }
        m["runs"].push_back(std::move(run));
    }
    return m;
}

void write_manifest(const std::filesystem::path& dir, const json& m) {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << '\n';
}

}  // namespace

CampaignResult run_campaign(const CampaignConfig& config, const CampaignOptions& options) {
    if (!config.simulator) throw Error(Errc::Config, "campaign has no simulator target");
    const auto& scenario = config.simulator->scenario;
    validate_scenario(scenario);
    if (options.out_dir) {
        if (std::filesystem::exists(*options.out_dir / "manifest.json") && !options.force)
            throw Error(Errc::Config, (*options.out_dir / "manifest.json").string() + " exists (use --force)");
        std::filesystem::create_directories(*options.out_dir);
    }

    std::vector<RunPlan> plans{{kBaselineRun, std::nullopt}};
    for (const auto& s : config.fault_specs) plans.push_back({s.id, s});
    const std::size_t n_tasks = config.tasks.size();
    const std::size_t n_jobs = plans.size() * n_tasks;

    std::vector<RunResult> runs(plans.size());
    for (std::size_t r = 0; r < plans.size(); ++r) {
        runs[r].run_id = plans[r].run_id;
        if (plans[r].spec) {
            runs[r].fault_type = plans[r].spec->fault_type;
            runs[r].offline_fallback = plans[r].spec->offline_fallback();
        }
        runs[r].outcomes.resize(n_tasks);
        if (options.out_dir) {
            runs[r].trace_files.resize(n_tasks);
            runs[r].trace_digests.resize(n_tasks);
        }
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (;;) {
            const auto job = next.fetch_add(1);
            if (job >= n_jobs) return;
            {
                std::lock_guard lock(failure_mu);
                if (failure) return;
            }
            const auto r = job / n_tasks;
            const auto t = job % n_tasks;
            const auto& task = config.tasks[t];
            try {
                RunContext ctx;
                ctx.run_id = plans[r].run_id;
                ctx.baseline_seed = baseline_task_seed(config.campaign_seed, task.id);
                ctx.seed = plans[r].spec ? task_seed(*plans[r].spec, task.id) : ctx.baseline_seed;
                ctx.injector = options.injector;
                std::vector<FaultSpec> plan;
                if (plans[r].spec) plan.push_back(*plans[r].spec);
                auto result = run_task(scenario, task, plan, ctx);
                runs[r].outcomes[t] = result.outcome;
                if (options.out_dir) {
                    const auto rel = std::filesystem::path("traces") / safe_file_stem(plans[r].run_id) /
                                     (safe_file_stem(task.id) + ".jsonl");
                    std::filesystem::create_directories((*options.out_dir / rel).parent_path());
                    TraceHeader header;
                    header.campaign_seed = config.campaign_seed;
                    header.task_id = task.id;
                    header.run_id = plans[r].run_id;
                    if (plans[r].spec) header.fault_type = plans[r].spec->fault_type;
                    runs[r].trace_digests[t] = write_trace(*options.out_dir / rel, header, result.trace);
                    runs[r].trace_files[t] = rel.generic_string();
                }
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const unsigned n_threads = std::max(1u, std::min<unsigned>(options.parallel, static_cast<unsigned>(std::max<std::size_t>(n_jobs, 1))));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }

    if (failure) {
        if (options.out_dir) write_manifest(*options.out_dir, manifest_json(config, options, runs, "failed"));
        std::rethrow_exception(failure);
    }

    CampaignResult out;
    out.manifest = manifest_json(config, options, runs, "complete");
    if (options.out_dir) write_manifest(*options.out_dir, out.manifest);
    out.baseline = std::move(runs.front());
    out.injected.assign(std::make_move_iterator(runs.begin() + 1), std::make_move_iterator(runs.end()));
    return out;
}

}  // namespace masfire
