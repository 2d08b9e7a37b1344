#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/taxonomy.hpp"
#include "masfire/tier.hpp"

namespace masfire {

enum class EventKind {
    MsgSent,
    MsgReceived,
    MsgFiltered,
    LoopDetected,
    FaultInjected,
    InjectionAttempt,
    FtTriggered,
    FtFixed,
    TaskResult,
};

std::string_view event_kind_name(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view name) noexcept;

struct TraceEvent {
    std::uint64_t seq = 0;
    std::string task_id;
    std::optional<std::string> spec_id;
    std::string agent_id;
    EventKind kind = EventKind::MsgSent;
    std::optional<FtTier> tier;       // ft_triggered / ft_fixed
    std::optional<bool> success;      // task_result
    std::optional<InterceptionPoint> point;
    std::string payload_digest;
    json detail = json::object();

    bool operator==(const TraceEvent&) const = default;
};

json event_to_json(const TraceEvent& event);
TraceEvent event_from_json(const json& j);
std::string event_to_line(const TraceEvent& event);

struct TierCounts {
    int triggered = 0;
    int fixed = 0;
    bool operator==(const TierCounts&) const = default;
};

using FtSummary = std::array<TierCounts, 4>;  // indexed by FtTier

inline const std::string kBaselineRun = "baseline";

struct TaskOutcome {
    std::string task_id;
    std::string run_id = kBaselineRun;  // spec id or "baseline"
    bool success = false;
    /// False when the fault could not be applied to this task (e.g. no tool call).
    bool applicable = true;
    FtSummary ft_summary{};

    bool any_triggered() const;
    bool any_fixed() const;
    bool operator==(const TaskOutcome&) const = default;
};

json summary_to_json(const FtSummary& summary);
FtSummary summary_from_json(const json& j);
FtSummary summarize(const std::vector<TraceEvent>& events);
std::string outcome_digest(const TaskOutcome& outcome);

/// Enforces the per-task ordering rules: strictly increasing seq, ft_fixed
/// paired with an earlier unmatched ft_triggered of the same tier, and a
/// single task_result that closes the stream.
class TraceValidator {
public:
    explicit TraceValidator(std::string task_id) : task_id_(std::move(task_id)) {}

    /// Throws Error{InvariantViolation}; on success the event is accounted.
    void accept(const TraceEvent& event);
    bool closed() const { return closed_; }
    std::optional<std::uint64_t> last_seq() const { return last_seq_; }

private:
    std::string task_id_;
    std::optional<std::uint64_t> last_seq_;
    std::array<int, 4> open_triggers_{};
    bool closed_ = false;
};

/// Destination for events produced by mutators and executors.
class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void record(TraceEvent event) = 0;
};

/// Collects events without validation; used to stage a batch before commit.
class EventBuffer : public EventSink {
public:
    void record(TraceEvent event) override { events.push_back(std::move(event)); }
    std::vector<TraceEvent> events;
};

/// In-memory recorder for one task: assigns seq numbers and validates each event.
class TaskTrace : public EventSink {
public:
    TaskTrace(std::string task_id, std::string run_id);

    void record(TraceEvent event) override { emit(std::move(event)); }

    const TraceEvent& emit(TraceEvent event);
    /// Appends the task_result event; ft_summary and digest are derived from the stream.
    const TraceEvent& finish(bool success, bool applicable, const std::string& agent_id = "system");

    const std::string& task_id() const { return task_id_; }
    const std::string& run_id() const { return run_id_; }
    const std::vector<TraceEvent>& events() const { return events_; }
    std::optional<TaskOutcome> outcome() const;
    std::size_t count(EventKind kind) const;

private:
    std::string task_id_;
    std::string run_id_;
    TraceValidator validator_;
    std::vector<TraceEvent> events_;
    std::optional<TaskOutcome> outcome_;
};

struct TraceHeader {
    int schema_version = 1;
    std::uint64_t campaign_seed = 0;
    std::string hash_algo = "sha256";
    std::string task_id;
    std::string run_id = kBaselineRun;
    std::optional<FaultType> fault_type;
    bool operator==(const TraceHeader&) const = default;
};

json header_to_json(const TraceHeader& header);
TraceHeader header_from_json(const json& j);

/// Append-only line-delimited writer for one task file. Each append is
/// validated against the events already written.
class TraceWriter {
public:
    TraceWriter(const std::filesystem::path& path, const TraceHeader& header);
    TraceWriter(const TraceWriter&) = delete;
    TraceWriter& operator=(const TraceWriter&) = delete;
    ~TraceWriter();

    void append(const TraceEvent& event);
    void flush();
    std::optional<std::uint64_t> last_seq() const { return validator_.last_seq(); }
    const TraceValidator& validator() const { return validator_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    TraceValidator validator_;
};

/// Writes a complete in-memory trace to `path`; returns the file's sha256.
std::string write_trace(const std::filesystem::path& path, const TraceHeader& header, const TaskTrace& trace);

struct Replay {
    TraceHeader header;
    std::vector<TraceEvent> events;
    /// Absent for open traces without a task_result (gateway traces).
    std::optional<TaskOutcome> outcome;
};

/// Throws Error{CorruptTrace} with a 1-based line number for malformed lines,
/// ordering violations, or a stored outcome that does not match the events.
Replay replay(const std::filesystem::path& path);
Replay replay_text(std::string_view text, std::string_view source = "<memory>");

std::string file_sha256(const std::filesystem::path& path);

/// File-system safe stem for a task or run id; ids that need escaping get a
/// digest suffix so distinct ids never collide.
std::string safe_file_stem(std::string_view id);

/// Serialized appender shared by concurrent request handlers: one writer per
/// task, seq numbers assigned at commit time.
class TraceStore {
public:
    TraceStore(std::filesystem::path dir, std::uint64_t campaign_seed, std::string run_id);

    /// Commits a batch atomically with respect to other commits on the same task.
    void commit(const std::string& task_id, std::vector<TraceEvent> events);
    void flush_all();
    std::vector<std::filesystem::path> files() const;
    std::size_t total_events() const;

private:
    std::filesystem::path dir_;
    std::uint64_t campaign_seed_;
    std::string run_id_;
    mutable std::mutex mu_;
    std::map<std::string, std::unique_ptr<TraceWriter>> writers_;
    std::size_t total_ = 0;
};

}  // namespace masfire
