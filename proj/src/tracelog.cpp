#include "masfire/tracelog.hpp"

#include <algorithm>
#include <sstream>

#include "json_util.hpp"
#include "masfire/digest.hpp"
#include "masfire/error.hpp"

namespace masfire {

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 9> kKindNames = {{
    {EventKind::MsgSent, "msg_sent"},
    {EventKind::MsgReceived, "msg_received"},
    {EventKind::MsgFiltered, "msg_filtered"},
    {EventKind::LoopDetected, "loop_detected"},
    {EventKind::FaultInjected, "fault_injected"},
    {EventKind::InjectionAttempt, "injection_attempt"},
    {EventKind::FtTriggered, "ft_triggered"},
    {EventKind::FtFixed, "ft_fixed"},
    {EventKind::TaskResult, "task_result"},
}};

std::size_t tier_index(FtTier t) { return static_cast<std::size_t>(t); }

[[noreturn]] void violation(const std::string& msg) { throw Error(Errc::InvariantViolation, msg); }

}  // namespace

std::string_view event_kind_name(EventKind kind) noexcept {
    for (const auto& [k, n] : kKindNames) {
        if (k == kind) return n;
    }
    return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view name) noexcept {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    return std::nullopt;
}

json event_to_json(const TraceEvent& e) {
    json j = {{"seq", e.seq},
              {"task_id", e.task_id},
              {"agent_id", e.agent_id},
              {"kind", event_kind_name(e.kind)},
              {"payload_digest", e.payload_digest},
              {"detail", e.detail}};
    if (e.spec_id) j["spec_id"] = *e.spec_id;
    if (e.tier) j["tier"] = tier_name(*e.tier);
    if (e.success) j["success"] = *e.success;
    if (e.point) j["point"] = point_name(*e.point);
    return j;
}

TraceEvent event_from_json(const json& j) {
    constexpr std::string_view where = "event";
    detail::require_keys_subset(j, {"seq", "task_id", "spec_id", "agent_id", "kind", "tier", "success", "point",
                                    "payload_digest", "detail"},
                                where);
    TraceEvent e;
    e.seq = detail::required_field<std::uint64_t>(j, "seq", where);
    e.task_id = detail::required_string(j, "task_id", where);
    e.agent_id = detail::required_string(j, "agent_id", where);
    const auto kind = detail::required_string(j, "kind", where);
    auto k = parse_event_kind(kind);
    if (!k) throw Error(Errc::Schema, "unknown event kind '" + kind + "'");
    e.kind = *k;
    e.payload_digest = detail::required_string(j, "payload_digest", where);
    e.detail = detail::require(j, "detail", where);
    if (!e.detail.is_object()) throw Error(Errc::Schema, "event detail must be an object");
    if (j.contains("spec_id")) e.spec_id = detail::required_string(j, "spec_id", where);
    if (j.contains("tier")) {
        auto t = parse_tier(detail::required_string(j, "tier", where));
        if (!t) throw Error(Errc::Schema, "unknown tier");
        e.tier = *t;
    }
    if (j.contains("success")) e.success = detail::required_field<bool>(j, "success", where);
    if (j.contains("point")) {
        auto p = parse_point(detail::required_string(j, "point", where));
        if (!p) throw Error(Errc::Schema, "unknown interception point");
        e.point = *p;
    }
    return e;
}

std::string event_to_line(const TraceEvent& event) { return event_to_json(event).dump(); }

bool TaskOutcome::any_triggered() const {
    return std::any_of(ft_summary.begin(), ft_summary.end(), [](const TierCounts& c) { return c.triggered > 0; });
}

bool TaskOutcome::any_fixed() const {
    return std::any_of(ft_summary.begin(), ft_summary.end(), [](const TierCounts& c) { return c.fixed > 0; });
}

json summary_to_json(const FtSummary& summary) {
    json j = json::object();
    for (auto t : kAllTiers) {
        const auto& c = summary[tier_index(t)];
        j[std::string(tier_name(t))] = {{"triggered", c.triggered}, {"fixed", c.fixed}};
    }
    return j;
}

FtSummary summary_from_json(const json& j) {
    detail::require_keys_subset(j, {"Mechanism", "Rule", "Prompt", "Reasoning"}, "ft_summary");
    FtSummary s{};
    for (auto t : kAllTiers) {
        const auto& c = detail::require(j, tier_name(t), "ft_summary");
        detail::require_keys_subset(c, {"triggered", "fixed"}, "ft_summary tier");
        s[tier_index(t)] = {detail::required_field<int>(c, "triggered", "ft_summary"), detail::required_field<int>(c, "fixed", "ft_summary")};
    }
    return s;
}

FtSummary summarize(const std::vector<TraceEvent>& events) {
    FtSummary s{};
    for (const auto& e : events) {
        if (!e.tier) continue;
        if (e.kind == EventKind::FtTriggered) ++s[tier_index(*e.tier)].triggered;
        if (e.kind == EventKind::FtFixed) ++s[tier_index(*e.tier)].fixed;
    }
    return s;
}

std::string outcome_digest(const TaskOutcome& o) {
    const json j = {{"task_id", o.task_id},
                    {"run_id", o.run_id},
                    {"success", o.success},
                    {"applicable", o.applicable},
                    {"ft_summary", summary_to_json(o.ft_summary)}};
    return sha256_hex(j.dump());
}

void TraceValidator::accept(const TraceEvent& e) {
    if (closed_) violation("event after task_result in task '" + task_id_ + "'");
    if (e.task_id != task_id_) violation("event for task '" + e.task_id + "' in trace of '" + task_id_ + "'");
    if (last_seq_ && e.seq <= *last_seq_) {
        violation("seq " + std::to_string(e.seq) + " not greater than " + std::to_string(*last_seq_));
    }
    switch (e.kind) {
        case EventKind::FtTriggered:
        case EventKind::FtFixed: {
            if (!e.tier) violation(std::string(event_kind_name(e.kind)) + " without tier");
            auto& open = open_triggers_[tier_index(*e.tier)];
            if (e.kind == EventKind::FtFixed) {
                if (open == 0) violation("ft_fixed(" + std::string(tier_name(*e.tier)) + ") without prior ft_triggered");
                --open;
            } else {
                ++open;
            }
            break;
        }
        case EventKind::TaskResult:
            if (!e.success) violation("task_result without success flag");
            break;
        default: break;
    }
    last_seq_ = e.seq;
    if (e.kind == EventKind::TaskResult) closed_ = true;
}

TaskTrace::TaskTrace(std::string task_id, std::string run_id)
    : task_id_(std::move(task_id)), run_id_(std::move(run_id)), validator_(task_id_) {}

const TraceEvent& TaskTrace::emit(TraceEvent event) {
    event.seq = events_.empty() ? 0 : events_.back().seq + 1;
    if (event.task_id.empty()) event.task_id = task_id_;
    validator_.accept(event);
    events_.push_back(std::move(event));
    return events_.back();
}

const TraceEvent& TaskTrace::finish(bool success, bool applicable, const std::string& agent_id) {
    TaskOutcome o;
    o.task_id = task_id_;
    o.run_id = run_id_;
    o.success = success;
    o.applicable = applicable;
    o.ft_summary = summarize(events_);
    const auto digest = outcome_digest(o);
    TraceEvent e;
    e.agent_id = agent_id;
    e.kind = EventKind::TaskResult;
    e.success = success;
    if (run_id_ != kBaselineRun) e.spec_id = run_id_;
    e.payload_digest = digest;
    e.detail = {{"applicable", applicable}, {"ft_summary", summary_to_json(o.ft_summary)}, {"outcome_digest", digest}};
    const auto& stored = emit(std::move(e));
    outcome_ = o;
    return stored;
}

std::optional<TaskOutcome> TaskTrace::outcome() const { return outcome_; }

std::size_t TaskTrace::count(EventKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(events_.begin(), events_.end(), [kind](const TraceEvent& e) { return e.kind == kind; }));
}

json header_to_json(const TraceHeader& h) {
    json j = {{"schema_version", h.schema_version},
              {"campaign_seed", h.campaign_seed},
              {"hash_algo", h.hash_algo},
              {"task_id", h.task_id},
              {"run_id", h.run_id}};
    if (h.fault_type) j["fault_type"] = fault_type_name(*h.fault_type);
    return j;
}

TraceHeader header_from_json(const json& j) {
    constexpr std::string_view where = "trace header";
    detail::require_keys_subset(j, {"schema_version", "campaign_seed", "hash_algo", "task_id", "run_id", "fault_type"}, where);
    TraceHeader h;
    h.schema_version = detail::required_field<int>(j, "schema_version", where);
    h.campaign_seed = detail::required_field<std::uint64_t>(j, "campaign_seed", where);
    h.hash_algo = detail::required_string(j, "hash_algo", where);
    h.task_id = detail::required_string(j, "task_id", where);
    h.run_id = detail::required_string(j, "run_id", where);
    if (j.contains("fault_type")) {
        auto t = parse_fault_type(detail::required_string(j, "fault_type", where));
        if (!t) throw Error(Errc::Schema, "unknown fault_type in header");
        h.fault_type = *t;
    }
    if (h.schema_version != 1) throw Error(Errc::Schema, "unsupported trace schema_version");
    if (h.hash_algo != kHashAlgo) throw Error(Errc::Schema, "unsupported hash_algo '" + h.hash_algo + "'");
    return h;
}

TraceWriter::TraceWriter(const std::filesystem::path& path, const TraceHeader& header)
    : path_(path), validator_(header.task_id) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(Errc::Io, "cannot open trace file " + path.string());
    out_ << header_to_json(header).dump() << '\n';
}

TraceWriter::~TraceWriter() {
    if (out_.is_open()) out_.flush();
}

void TraceWriter::append(const TraceEvent& event) {
    validator_.accept(event);
    out_ << event_to_line(event) << '\n';
    if (!out_) throw Error(Errc::Io, "write failed on " + path_.string());
}

void TraceWriter::flush() {
    out_.flush();
    if (!out_) throw Error(Errc::Io, "flush failed on " + path_.string());
}

std::string write_trace(const std::filesystem::path& path, const TraceHeader& header, const TaskTrace& trace) {
    {
        TraceWriter w(path, header);
        for (const auto& e : trace.events()) w.append(e);
        w.flush();
    }
    return file_sha256(path);
}

Replay replay_text(std::string_view text, std::string_view source) {
    auto corrupt = [&](std::size_t line, const std::string& why) -> Error {
        return Error(Errc::CorruptTrace, std::string(source) + ":" + std::to_string(line) + ": " + why);
    };
    Replay r;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    std::optional<TraceValidator> validator;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        ++line_no;
        if (nl == std::string_view::npos) throw corrupt(line_no, "truncated line (no terminating newline)");
        const auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw corrupt(line_no, std::string("malformed record: ") + e.what());
        }
        try {
            if (!have_header) {
                r.header = header_from_json(j);
                validator.emplace(r.header.task_id);
                have_header = true;
                continue;
            }
            auto e = event_from_json(j);
            validator->accept(e);
            r.events.push_back(std::move(e));
        } catch (const Error& e) {
            throw corrupt(line_no, e.what());
        }
    }
    if (!have_header) throw corrupt(line_no, "missing header");

    if (!r.events.empty() && r.events.back().kind == EventKind::TaskResult) {
        const auto& stored = r.events.back();
        TaskOutcome o;
        o.task_id = r.header.task_id;
        o.run_id = r.header.run_id;
        o.success = *stored.success;
        o.applicable = stored.detail.value("applicable", true);
        std::vector<TraceEvent> prior(r.events.begin(), r.events.end() - 1);
        o.ft_summary = summarize(prior);
        const auto stored_digest = stored.detail.value("outcome_digest", std::string{});
        FtSummary stored_summary{};
        try {
            stored_summary = summary_from_json(stored.detail.at("ft_summary"));
        } catch (const std::exception&) {
            throw corrupt(line_no, "OutcomeMismatch: task_result lacks ft_summary");
        }
        if (stored_summary != o.ft_summary || stored_digest != outcome_digest(o)) {
            throw corrupt(line_no, "OutcomeMismatch: stored task_result disagrees with the event stream");
        }
        r.outcome = o;
    }
    return r;
}

Replay replay(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::CorruptTrace, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return replay_text(os.str(), path.string());
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return sha256_hex(os.str());
}

std::string safe_file_stem(std::string_view id) {
    std::string out;
    bool escaped = id.empty();
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        out.push_back(ok ? c : '_');
        escaped |= !ok;
    }
    if (out.front() == '.') {
        out.front() = '_';
        escaped = true;
    }
    if (escaped) out += "-" + sha256_hex(id).substr(0, 8);
    return out;
}

TraceStore::TraceStore(std::filesystem::path dir, std::uint64_t campaign_seed, std::string run_id)
    : dir_(std::move(dir)), campaign_seed_(campaign_seed), run_id_(std::move(run_id)) {}

void TraceStore::commit(const std::string& task_id, std::vector<TraceEvent> events) {
    std::lock_guard lock(mu_);
    auto it = writers_.find(task_id);
    if (it == writers_.end()) {
        TraceHeader h;
        h.campaign_seed = campaign_seed_;
        h.task_id = task_id;
        h.run_id = run_id_;
        auto path = dir_ / (safe_file_stem(task_id) + ".jsonl");
        it = writers_.emplace(task_id, std::make_unique<TraceWriter>(path, h)).first;
    }
    auto& w = *it->second;
    std::uint64_t next = w.last_seq() ? *w.last_seq() + 1 : 0;
    auto probe = w.validator();
    for (auto& e : events) {
        e.seq = next++;
        e.task_id = task_id;
        probe.accept(e);
    }
    next = w.last_seq() ? *w.last_seq() + 1 : 0;
    for (auto& e : events) {
        e.seq = next++;
        e.task_id = task_id;
        w.append(e);
        ++total_;
    }
    w.flush();
}

void TraceStore::flush_all() {
    std::lock_guard lock(mu_);
    for (auto& [_, w] : writers_) w->flush();
}

std::vector<std::filesystem::path> TraceStore::files() const {
    std::lock_guard lock(mu_);
    std::vector<std::filesystem::path> out;
    for (const auto& [_, w] : writers_) out.push_back(w->path());
    return out;
}

std::size_t TraceStore::total_events() const {
    std::lock_guard lock(mu_);
    return total_;
}

}  // namespace masfire
