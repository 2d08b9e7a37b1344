#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

#include "masfire/annotator.hpp"
#include "masfire/digest.hpp"
#include "masfire/metrics.hpp"
#include "masfire/sim.hpp"

namespace masfire::cli {

namespace fs = std::filesystem;

int exit_code_for(Errc code) noexcept {
    switch (code) {
        case Errc::Parse:
        case Errc::Schema:
        case Errc::Validation:
        case Errc::Config:
            return kUsage;
        case Errc::EmptyBaseline:
        case Errc::MissingInjectedRun:
        case Errc::EmptyTraceSet:
        case Errc::JudgeUnavailable:
        case Errc::UnparseableVerdict:
        case Errc::LengthMismatch:
        case Errc::EmptyInput:
            return kMetric;
        default:
            return kExecution;
    }
}

CampaignConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Config, "cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    ParseOptions opts;
    opts.base_dir = path.has_parent_path() ? path.parent_path().string() : ".";
    return parse_campaign(buf.str(), opts);
}

InjectorHandle make_injector(const CampaignConfig& config, const std::optional<fs::path>& fixtures) {
    InjectorHandle h;
    if (fixtures) {
        h.endpoint = std::make_unique<MockEndpoint>(Fixture::load(*fixtures), "fixture:" + fixtures->filename().string());
    } else if (config.injector && !config.injector->endpoint.empty()) {
        h.endpoint = std::make_unique<HttpEndpoint>(config.injector->endpoint);
    } else {
        return h;
    }
    h.client = std::make_unique<InjectorClient>(
        config.injector ? InjectorClient::from_config(*h.endpoint, *config.injector) : InjectorClient(*h.endpoint));
    return h;
}

int cmd_simulate(const SimulateArgs& args) {
    const auto config = load_config(args.config);
    if (!config.simulator)
        throw Error(Errc::Config, "config has no simulator target" + std::string(config.gateway ? "; gateway campaigns run under `masfire serve`" : ""));
    auto injector = make_injector(config, args.injector_fixtures);
    CampaignOptions opts;
    opts.out_dir = args.out ? *args.out : fs::path(config.output_dir);
    opts.parallel = std::max(1u, args.parallel);
    opts.force = args.force;
    opts.injector = injector.get();
    const auto result = run_campaign(config, opts);

    std::size_t ok = 0;
    for (const auto& o : result.baseline.outcomes) ok += o.success;
    std::cout << "baseline: " << ok << "/" << result.baseline.outcomes.size() << " tasks succeeded\n";
    for (const auto& run : result.injected) {
        ok = 0;
        for (const auto& o : run.outcomes) ok += o.success;
        std::cout << run.run_id << ": " << ok << "/" << run.outcomes.size() << " tasks succeeded"
                  << (run.offline_fallback ? " (offline fallback)" : "") << "\n";
    }
    std::cout << "manifest: " << (*opts.out_dir / "manifest.json").string() << "\n";
    return kOk;
}

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot read " + path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::Parse, path.string() + " is not valid JSON");
    return j;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + path.string());
    out << text;
}

/// Serializes calls into endpoints that are not safe to share (the in-process mock).
class LockedEndpoint : public InjectorEndpoint {
public:
    explicit LockedEndpoint(std::unique_ptr<InjectorEndpoint> inner) : inner_(std::move(inner)) {}
    std::string complete(const ChatRequest& request) override {
        std::lock_guard lock(mu_);
        return inner_->complete(request);
    }
    std::string identity() const override { return inner_->identity(); }

private:
    std::unique_ptr<InjectorEndpoint> inner_;
    std::mutex mu_;
};

std::unique_ptr<InjectorEndpoint> make_judge(const std::string& spec) {
    if (spec.starts_with("fixture:")) {
        const fs::path p = spec.substr(8);
        return std::make_unique<LockedEndpoint>(std::make_unique<MockEndpoint>(Fixture::load(p), "fixture:" + p.filename().string()));
    }
    if (!spec.starts_with("http://") && !spec.starts_with("https://"))
        throw Error(Errc::Config, "--judge must be an http(s) URL or fixture:PATH, got " + spec);
    return std::make_unique<HttpEndpoint>(spec, "MASFIRE_JUDGE_API_KEY");
}

/// Tags keyed by run/task, from either a manifest or a standalone annotations file.
std::map<std::pair<std::string, std::string>, BehaviorTag> load_tags(const fs::path& path) {
    auto doc = read_json(path);
    if (doc.contains("annotations")) doc = doc["annotations"];
    if (!doc.contains("tasks") || !doc["tasks"].is_array()) throw Error(Errc::Schema, path.string() + " holds no annotations");
    std::map<std::pair<std::string, std::string>, BehaviorTag> tags;
    for (const auto& t : doc["tasks"]) {
        if (!t.contains("run_id") || !t.contains("task_id")) throw Error(Errc::Schema, path.string() + ": annotation without run_id/task_id");
        tags[{t["run_id"].get<std::string>(), t["task_id"].get<std::string>()}] = tag_from_json(t);
    }
    return tags;
}

int kappa_command(const fs::path& a_path, const fs::path& b_path) {
    const auto a = load_tags(a_path);
    const auto b = load_tags(b_path);
    if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "annotation files cover different numbers of tasks");
    std::vector<BehaviorTag> ta, tb;
    for (const auto& [key, tag] : a) {
        auto it = b.find(key);
        if (it == b.end()) throw Error(Errc::LengthMismatch, "task " + key.first + "/" + key.second + " is annotated only in " + a_path.string());
        ta.push_back(tag);
        tb.push_back(it->second);
    }
    const auto r = tag_agreement(ta, tb);
    char line[64];
    for (std::size_t i = 0; i < 4; ++i) {
        std::snprintf(line, sizeof line, "%-10s kappa=%.4f\n", std::string(tier_name(kAllTiers[i])).c_str(), r.per_tier[i]);
        std::cout << line;
    }
    std::snprintf(line, sizeof line, "%-10s kappa=%.4f  (n=%zu tasks)\n", "pooled", r.pooled, ta.size());
    std::cout << line;
    return kOk;
}

}  // namespace

int cmd_report(const ReportArgs& args) {
    ReportFormat format;
    if (args.format == "table") format = ReportFormat::Table;
    else if (args.format == "json") format = ReportFormat::Structured;
    else throw Error(Errc::Config, "unknown report format " + args.format);

    auto outcomes = load_outcomes(args.traces);
    if (args.baseline) {
        auto b = load_outcomes(*args.baseline);
        // a gateway baseline session may carry its own run id
        outcomes.baseline = b.baseline;
        if (outcomes.baseline.empty())
            for (const auto& run : b.injected) outcomes.baseline.insert(outcomes.baseline.end(), run.outcomes.begin(), run.outcomes.end());
        for (auto& n : b.notes) outcomes.notes.push_back("baseline: " + n);
    }
    bool applicable_only = args.applicable_only;
    if (fs::exists(args.traces / "manifest.json")) applicable_only = applicable_only || read_json(args.traces / "manifest.json").value("applicable_only", false);

    const auto report = build_report(outcomes, applicable_only);
    const auto out_dir = args.out ? *args.out : args.traces;
    fs::create_directories(out_dir);
    write_file(out_dir / "report.json", render_report(report, ReportFormat::Structured));
    write_file(out_dir / "report.txt", render_report(report, ReportFormat::Table));
    std::cout << render_report(report, format);
    return kOk;
}

int cmd_annotate(const AnnotateArgs& args) {
    if (args.kappa) return kappa_command(args.kappa->first, args.kappa->second);
    if (!args.traces) throw Error(Errc::Config, "annotate needs --traces DIR (or --kappa A B)");

    std::string name;
    TaskAnnotator annotate;
    std::unique_ptr<InjectorEndpoint> judge;
    if (args.mode == "rule") {
        name = "rule";
        annotate = [](const Replay& rp, std::optional<FaultType> type) { return annotate_rule_based(rp.events, type); };
    } else if (args.mode == "judge") {
        if (!args.judge) throw Error(Errc::Config, "judge mode needs --judge URL");
        judge = make_judge(*args.judge);
        name = "judge:" + judge->identity();
        const auto seed = read_json(*args.traces / "manifest.json").value("campaign_seed", std::uint64_t{0});
        annotate = [&, seed](const Replay& rp, std::optional<FaultType> type) {
            JudgeOptions opts;
            opts.model = args.judge_model;
            opts.seed = derive_seed(seed, rp.header.run_id, rp.header.task_id);
            return annotate_llm(rp.events, type, default_behavior_catalog(), *judge, opts);
        };
    } else {
        throw Error(Errc::Config, "unknown annotation mode " + args.mode);
    }

    const auto ann = annotate_campaign(*args.traces, name, annotate, std::max(1u, args.in_flight));
    const auto file = *args.traces / ("annotations-" + args.mode + ".json");
    write_file(file, ann.dump(2) + "\n");
    std::cout << "annotated " << ann["tasks"].size() << " tasks with " << name << "; wrote " << file.string() << "\n";
    return kOk;
}

}  // namespace masfire::cli
