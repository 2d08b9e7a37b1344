#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "masfire/digest.hpp"

using namespace masfire;
using namespace masfire::cli;

namespace {

int cmd_digest(const std::optional<std::string>& request, const std::optional<std::string>& config) {
    if (config) {
        std::cout << sha256_hex(serialize_campaign(load_config(*config))) << "\n";
        return kOk;
    }
    std::ifstream in(*request, std::ios::binary);
    if (!in) throw Error(Errc::Config, "cannot read " + *request);
    std::stringstream buf;
    buf << in.rdbuf();
    const auto body = json::parse(buf.str(), nullptr, false);
    if (body.is_discarded()) throw Error(Errc::Parse, *request + " is not valid JSON");
    std::cout << request_digest(body) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    block_stop_signals();

    CLI::App app{"masfire: fault injection and robustness evaluation for LLM multi-agent systems"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Run a campaign against the scripted simulator");
    simulate->add_option("--config", sim.config, "Campaign config (JSON)")->required();
    simulate->add_option("--out", sim.out, "Output directory (default: config output_dir)");
    simulate->add_option("--parallel", sim.parallel, "Concurrent task simulations")->check(CLI::PositiveNumber);
    simulate->add_flag("--force", sim.force, "Overwrite an existing manifest");
    simulate->add_option("--injector-fixtures", sim.injector_fixtures, "Serve semantic mutations from a fixture file");

    ServeArgs srv;
    auto* serve = app.add_subcommand("serve", "Run the intercepting gateway in front of an upstream endpoint");
    serve->add_option("--config", srv.config, "Campaign config with a gateway target")->required();
    serve->add_option("--listen", srv.listen, "[host:]port (0 picks a free port)");
    serve->add_option("--upstream", srv.upstream, "Upstream base URL");
    serve->add_option("--out", srv.out, "Trace directory (default: config output_dir)");
    serve->add_flag("--force", srv.force, "Reuse a directory holding a previous session");
    serve->add_option("--injector-fixtures", srv.injector_fixtures, "Serve semantic mutations from a fixture file");

    ReportArgs rep;
    auto* report = app.add_subcommand("report", "Compute RS and process metrics from traces");
    report->add_option("--traces", rep.traces, "Campaign or gateway trace directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--baseline", rep.baseline, "Separate baseline trace directory")->check(CLI::ExistingDirectory);
    report->add_option("--format", rep.format, "table or json")->check(CLI::IsMember({"table", "json"}));
    report->add_option("--out", rep.out, "Where report.json and report.txt go (default: --traces)");
    report->add_flag("--applicable-only", rep.applicable_only, "Exclude inapplicable tasks");

    AnnotateArgs ann;
    std::vector<std::string> kappa_files;
    auto* annotate = app.add_subcommand("annotate", "Tag traces with fault-tolerance behaviors, or compare two annotation files");
    annotate->add_option("--traces", ann.traces, "Campaign directory")->check(CLI::ExistingDirectory);
    annotate->add_option("--mode", ann.mode, "rule or judge")->check(CLI::IsMember({"rule", "judge"}));
    annotate->add_option("--judge", ann.judge, "Judge endpoint URL, or fixture:PATH");
    annotate->add_option("--judge-model", ann.judge_model, "Model name sent to the judge");
    annotate->add_option("--in-flight", ann.in_flight, "Concurrent judge calls")->check(CLI::PositiveNumber);
    annotate->add_option("--kappa", kappa_files, "Two annotation files to compare")->expected(2)->check(CLI::ExistingFile);

    MockArgs mk;
    auto* mock = app.add_subcommand("mock", "Serve canned chat completions keyed by request digest");
    mock->add_option("--fixtures", mk.fixtures, "Fixture file")->required()->check(CLI::ExistingFile);
    mock->add_option("--listen", mk.listen, "[host:]port (0 picks a free port)");

    std::optional<std::string> digest_request, digest_config;
    auto* digest = app.add_subcommand("digest", "Print the fixture digest of a request body or the digest of a config");
    auto* req_opt = digest->add_option("--request", digest_request, "Chat request JSON file");
    auto* cfg_opt = digest->add_option("--config", digest_config, "Campaign config");
    req_opt->excludes(cfg_opt);
    digest->require_option(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*serve) return cmd_serve(srv);
        if (*report) return cmd_report(rep);
        if (*annotate) {
            if (!kappa_files.empty()) ann.kappa = std::make_pair(kappa_files[0], kappa_files[1]);
            return cmd_annotate(ann);
        }
        if (*mock) return cmd_mock(mk);
        if (*digest) return cmd_digest(digest_request, digest_config);
    } catch (const Error& e) {
        std::cerr << "masfire: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "masfire: " << e.what() << "\n";
        return kExecution;
    }
    return kUsage;
}
