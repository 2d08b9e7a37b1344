#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "masfire/injector.hpp"
#include "masfire/scenario.hpp"
#include "masfire/taxonomy.hpp"
#include "masfire/tracelog.hpp"

namespace masfire {

/// mt19937_64 with a fixed 53-bit double conversion, so draws match across
/// standard libraries (std::uniform_real_distribution is not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

/// Marks a payload as carrying the effect of a fault.
struct Taint {
    std::string spec_id;
    FaultType fault_type = FaultType::MessageStorm;
    bool operator==(const Taint&) const = default;
};

/// Lost-context faults a shared message pool can repair.
bool is_loss_fault(FaultType type);

struct Delivery {
    std::uint64_t msg_id = 0;
    std::string sender;
    std::string recipient;
    std::string payload;
    OutputKind kind = OutputKind::PlainMessage;
    int hop = 0;
    std::optional<Taint> taint;
    /// Extra copy created by a routing fault (storm duplicate, broadcast stray).
    bool fault_copy = false;
    /// Cycle-captured: the message bounces back to its sender until guarded.
    bool captured = false;
    std::vector<std::string> intended;  // original recipients of a captured message
};

/// Deliveries produced for one outgoing message under a routing fault.
/// `agents` lists every agent on the bus in declaration order.
std::vector<Delivery> apply_routing_fault(const FaultSpec& spec, const Delivery& delivery, const std::vector<std::string>& agents);

struct BusStats {
    std::size_t enqueued = 0;
    std::size_t processed = 0;
    std::size_t filtered = 0;
    std::size_t dropped = 0;
    bool conserved() const { return enqueued == processed + filtered + dropped; }
};

/// Hard cap on bounces for captured messages when the sender has no loop guard.
inline constexpr int kBusHopCap = 32;

struct RunContext {
    std::string run_id = kBaselineRun;
    std::uint64_t seed = 0;           // stream seed for this (run, task)
    std::uint64_t baseline_seed = 0;  // shared baseline draw for the task
    InjectorClient* injector = nullptr;
};

struct TaskRun {
    TaskTrace trace;
    TaskOutcome outcome;
    BusStats stats;
};

/// Executes one task through the scenario's step machine. Every spec in the
/// plan fires at most once per agent prompt (prompt faults) or once per task.
TaskRun run_task(const Scenario& scenario, const TaskDescriptor& task, const std::vector<FaultSpec>& plan, const RunContext& ctx);

struct CampaignOptions {
    /// When set, traces and the manifest are written here.
    std::optional<std::filesystem::path> out_dir;
    unsigned parallel = 1;
    bool force = false;
    InjectorClient* injector = nullptr;
};

struct RunResult {
    std::string run_id;
    std::optional<FaultType> fault_type;
    bool offline_fallback = false;
    std::vector<TaskOutcome> outcomes;      // in task order
    std::vector<std::string> trace_digests;  // empty unless traces were written
    std::vector<std::string> trace_files;    // relative to out_dir
};

struct CampaignResult {
    RunResult baseline;
    std::vector<RunResult> injected;  // in fault_specs order
    json manifest;
};

/// Baseline pass over all tasks, then one pass per fault spec.
CampaignResult run_campaign(const CampaignConfig& config, const CampaignOptions& options = {});

}  // namespace masfire
