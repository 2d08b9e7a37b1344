#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/taxonomy.hpp"
#include "masfire/tracelog.hpp"

namespace masfire {

/// Fraction of baseline-successful tasks that still succeed under the fault.
/// Injected outcomes are matched to baseline tasks by task id; with several
/// specs of one fault type, each (spec, task) pair counts once.
double robustness_score(const std::vector<TaskOutcome>& baseline, const std::vector<TaskOutcome>& injected);

struct ProcessMetrics {
    double o = 0.0;
    std::optional<double> l;  // undefined when nothing triggered
    std::optional<double> s;
    std::size_t n_total = 0;
    std::size_t n_trigger = 0;
    std::size_t n_fixed = 0;
    std::size_t n_final_success = 0;
};

ProcessMetrics process_metrics(const std::vector<TaskOutcome>& injected);

struct FaultMetrics {
    FaultType fault_type = FaultType::InexecutablePlan;
    std::vector<std::string> spec_ids;
    std::optional<double> rs;  // absent only when the baseline had no successes
    ProcessMetrics process;
    std::size_t t_base = 0;
    std::size_t n_success = 0;
    std::size_t n_total_all = 0;  // before applicability filtering
    std::vector<std::string> inapplicable_tasks;
    bool offline_fallback = false;
};

struct MetricsReport {
    bool applicable_only = false;
    std::size_t baseline_tasks = 0;
    std::size_t baseline_successes = 0;
    std::vector<FaultMetrics> faults;  // catalog order
    std::vector<std::string> notes;
};

/// All outcomes of one campaign, grouped by run.
struct CampaignOutcomes {
    std::vector<TaskOutcome> baseline;
    struct Run {
        std::string run_id;
        std::optional<FaultType> fault_type;
        bool offline_fallback = false;
        std::vector<TaskOutcome> outcomes;
    };
    std::vector<Run> injected;
    std::vector<std::string> notes;
};

/// Reads a campaign directory. With a manifest.json, every listed trace is
/// replayed and its digest checked; otherwise all *.jsonl files below the
/// directory are used (gateway traces). Open traces are skipped with a note.
CampaignOutcomes load_outcomes(const std::filesystem::path& dir);

/// Throws EmptyBaseline / MissingInjectedRun from robustness_score when a row
/// cannot be computed; EmptyTraceSet when there are no injected runs at all.
MetricsReport build_report(const CampaignOutcomes& outcomes, bool applicable_only);

enum class ReportFormat { Structured, Table };

json report_to_json(const MetricsReport& report);
std::string render_report(const MetricsReport& report, ReportFormat format);

}  // namespace masfire
