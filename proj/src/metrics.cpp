#include "masfire/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "masfire/error.hpp"

namespace masfire {

namespace {

void check(bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::InvariantViolation, "metrics: " + what);
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct RsCount {
    std::size_t hits = 0;
    std::size_t pairs = 0;
};

/// Counts (run, task) pairs over T_base; `skip` holds "run\x1ftask" keys left out.
RsCount count_rs(const std::set<std::string>& t_base, const std::vector<std::string>& runs, const std::vector<TaskOutcome>& injected,
                 const std::set<std::string>& skip = {}) {
    std::map<std::string, bool> success;
    for (const auto& o : injected) success[o.run_id + '\x1f' + o.task_id] = o.success;
    RsCount c;
    for (const auto& run : runs) {
        for (const auto& t : t_base) {
            const auto key = run + '\x1f' + t;
            if (skip.contains(key)) continue;
            auto it = success.find(key);
            if (it == success.end()) throw Error(Errc::MissingInjectedRun, "run " + run + " has no outcome for task " + t);
            ++c.pairs;
            c.hits += it->second;
        }
    }
    return c;
}

}  // namespace

double robustness_score(const std::vector<TaskOutcome>& baseline, const std::vector<TaskOutcome>& injected) {
    std::set<std::string> t_base;
    for (const auto& o : baseline)
        if (o.success) t_base.insert(o.task_id);
    if (t_base.empty()) throw Error(Errc::EmptyBaseline, "no task succeeded at baseline");
    std::vector<std::string> runs;
    for (const auto& o : injected)
        if (std::find(runs.begin(), runs.end(), o.run_id) == runs.end()) runs.push_back(o.run_id);
    if (runs.empty()) throw Error(Errc::MissingInjectedRun, "no injected outcomes");
    const auto c = count_rs(t_base, runs, injected);
    return static_cast<double>(c.hits) / static_cast<double>(c.pairs);
}

ProcessMetrics process_metrics(const std::vector<TaskOutcome>& injected) {
    if (injected.empty()) throw Error(Errc::EmptyTraceSet, "no injected tasks");
    ProcessMetrics m;
    m.n_total = injected.size();
    for (const auto& o : injected) {
        if (!o.any_triggered()) continue;
        ++m.n_trigger;
        m.n_fixed += o.any_fixed();
        m.n_final_success += o.success;
    }
    check(m.n_fixed <= m.n_trigger, "N_fixed > N_trigger");
    check(m.n_trigger <= m.n_total, "N_trigger > N_total");
    m.o = static_cast<double>(m.n_trigger) / static_cast<double>(m.n_total);
    if (m.n_trigger > 0) {
        m.l = static_cast<double>(m.n_fixed) / static_cast<double>(m.n_trigger);
        m.s = static_cast<double>(m.n_final_success) / static_cast<double>(m.n_trigger);
    }
    return m;
}

MetricsReport build_report(const CampaignOutcomes& outcomes, bool applicable_only) {
    MetricsReport report;
    report.applicable_only = applicable_only;
    report.notes = outcomes.notes;
    report.baseline_tasks = outcomes.baseline.size();
    for (const auto& o : outcomes.baseline) report.baseline_successes += o.success;
    if (report.baseline_successes == 0) throw Error(Errc::EmptyBaseline, "no task succeeded at baseline");
    if (outcomes.injected.empty()) throw Error(Errc::EmptyTraceSet, "campaign has no injected runs");

    for (auto type : kAllFaultTypes) {
        FaultMetrics fm;
        fm.fault_type = type;
        std::vector<TaskOutcome> all;
        for (const auto& run : outcomes.injected) {
            if (run.fault_type != type) continue;
            fm.spec_ids.push_back(run.run_id);
            fm.offline_fallback = fm.offline_fallback || run.offline_fallback;
            all.insert(all.end(), run.outcomes.begin(), run.outcomes.end());
        }
        if (fm.spec_ids.empty()) continue;
        fm.n_total_all = all.size();

        std::set<std::string> dropped;  // tasks excluded from every measure of this row
        std::vector<TaskOutcome> kept;
        for (const auto& o : all) {
            if (!o.applicable) {
                fm.inapplicable_tasks.push_back(o.run_id + "/" + o.task_id);
                if (applicable_only) {
                    dropped.insert(o.run_id + '\x1f' + o.task_id);
                    continue;
                }
            }
            kept.push_back(o);
        }

        std::set<std::string> t_base;
        for (const auto& o : outcomes.baseline)
            if (o.success) t_base.insert(o.task_id);
        const auto c = count_rs(t_base, fm.spec_ids, all, dropped);
        std::set<std::string> counted;
        for (const auto& t : t_base)
            for (const auto& r : fm.spec_ids)
                if (!dropped.contains(r + '\x1f' + t)) counted.insert(t);
        fm.t_base = counted.size();
        fm.n_success = c.hits;
        if (c.pairs > 0) fm.rs = static_cast<double>(c.hits) / static_cast<double>(c.pairs);
        if (!fm.rs) report.notes.push_back(std::string(fault_type_name(type)) + ": no applicable baseline-successful task; RS undefined");
        if (kept.empty()) {
            report.notes.push_back(std::string(fault_type_name(type)) + ": every task was inapplicable");
        } else {
            fm.process = process_metrics(kept);
        }
        if (fm.rs) check(*fm.rs >= 0.0 && *fm.rs <= 1.0, "RS out of range");
        report.faults.push_back(std::move(fm));
    }
    return report;
}

json report_to_json(const MetricsReport& report) {
    json rows = json::array();
    for (const auto& f : report.faults) {
        rows.push_back({{"fault_type", fault_type_name(f.fault_type)},
                        {"category", category_name(category_of(f.fault_type))},
                        {"spec_ids", f.spec_ids},
                        {"offline_fallback", f.offline_fallback},
                        {"rs", opt_number(f.rs)},
                        {"o", f.process.n_total ? json(f.process.o) : json(nullptr)},
                        {"l", opt_number(f.process.l)},
                        {"s", opt_number(f.process.s)},
                        {"counters",
                         {{"t_base", f.t_base},
                          {"n_success", f.n_success},
                          {"n_total", f.process.n_total},
                          {"n_total_all", f.n_total_all},
                          {"n_trigger", f.process.n_trigger},
                          {"n_fixed", f.process.n_fixed},
                          {"n_final_success", f.process.n_final_success}}},
                        {"inapplicable_tasks", f.inapplicable_tasks}});
    }
    return {{"schema_version", 1},
            {"applicable_only", report.applicable_only},
            {"baseline", {{"tasks", report.baseline_tasks}, {"successes", report.baseline_successes}}},
            {"faults", rows},
            {"notes", report.notes}};
}

std::string render_report(const MetricsReport& report, ReportFormat format) {
    if (format == ReportFormat::Structured) return report_to_json(report).dump(2) + "\n";

    auto num = [](const std::optional<double>& v) { return v ? fixed4(*v) : std::string("undef"); };
    std::ostringstream out;
    out << "baseline: " << report.baseline_successes << "/" << report.baseline_tasks << " tasks succeeded"
        << (report.applicable_only ? "  (applicable tasks only)" : "") << "\n\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-30s %-7s %-7s %-7s %-7s %6s %6s %7s %6s %6s %6s %6s\n", "fault_type", "RS", "O", "L", "S", "T_base",
                  "N_succ", "N_total", "N_all", "N_trig", "N_fix", "N_fin");
    out << line;
    for (const auto& f : report.faults) {
        std::string name(fault_type_name(f.fault_type));
        if (f.offline_fallback) name += "*";
        std::snprintf(line, sizeof line, "%-30s %-7s %-7s %-7s %-7s %6zu %6zu %7zu %6zu %6zu %6zu %6zu\n", name.c_str(), num(f.rs).c_str(),
                      f.process.n_total ? fixed4(f.process.o).c_str() : "undef", num(f.process.l).c_str(), num(f.process.s).c_str(),
                      f.t_base, f.n_success, f.process.n_total, f.n_total_all, f.process.n_trigger, f.process.n_fixed,
                      f.process.n_final_success);
        out << line;
    }
    if (std::any_of(report.faults.begin(), report.faults.end(), [](const FaultMetrics& f) { return f.offline_fallback; }))
        out << "\n* deterministic offline fallback used in place of delegated injection\n";
    for (const auto& f : report.faults) {
        if (f.inapplicable_tasks.empty()) continue;
        out << "\n" << fault_type_name(f.fault_type) << ": " << f.inapplicable_tasks.size() << " inapplicable task(s)"
            << (report.applicable_only ? " excluded" : " counted") << ":";
        for (const auto& t : f.inapplicable_tasks) out << ' ' << t;
        out << '\n';
    }
    for (const auto& n : report.notes) out << "note: " << n << '\n';
    return out.str();
}

CampaignOutcomes load_outcomes(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    CampaignOutcomes out;
    std::map<std::string, std::size_t> run_index;
    auto add = [&](const Replay& rp, const fs::path& file, std::optional<bool> offline) {
        if (!rp.outcome) {
            out.notes.push_back("skipped open trace " + file.generic_string() + " (no task_result)");
            return;
        }
        if (rp.header.run_id == kBaselineRun) {
            out.baseline.push_back(*rp.outcome);
            return;
        }
        auto [it, fresh] = run_index.emplace(rp.header.run_id, out.injected.size());
        if (fresh) out.injected.push_back({rp.header.run_id, std::nullopt, false, {}});
        auto& run = out.injected[it->second];
        auto type = rp.header.fault_type;
        if (!type) {
            for (const auto& e : rp.events)
                if (e.kind == EventKind::FaultInjected && e.detail.contains("fault_type"))
                    type = parse_fault_type(e.detail["fault_type"].get<std::string>());
        }
        if (type && run.fault_type && *type != *run.fault_type)
            throw Error(Errc::CorruptTrace, "run " + run.run_id + " mixes fault types");
        if (type) run.fault_type = type;
        if (offline) run.offline_fallback = *offline;
        run.outcomes.push_back(*rp.outcome);
    };

    const auto manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        const auto m = json::parse(in, nullptr, false);
        if (m.is_discarded() || !m.contains("runs")) throw Error(Errc::CorruptTrace, manifest_path.string() + ": not a campaign manifest");
        if (m.value("status", "") != "complete") out.notes.push_back("manifest status is " + m.value("status", std::string("unknown")));
        for (const auto& run : m["runs"]) {
            for (const auto& t : run["tasks"]) {
                if (!t.contains("file")) throw Error(Errc::CorruptTrace, "manifest lists no trace file for " + t.value("task_id", ""));
                const auto file = dir / t["file"].get<std::string>();
                if (file_sha256(file) != t["digest"].get<std::string>())
                    throw Error(Errc::CorruptTrace, file.string() + ": digest does not match the manifest");
                add(replay(file), file, run.value("offline_fallback", false));
            }
        }
    } else {
        if (!fs::is_directory(dir)) throw Error(Errc::Io, dir.string() + " is not a directory");
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) add(replay(f), f, std::nullopt);
    }
    for (const auto& run : out.injected)
        if (!run.fault_type) out.notes.push_back("run " + run.run_id + " has no fault type and is not reported");
    return out;
}

}  // namespace masfire
