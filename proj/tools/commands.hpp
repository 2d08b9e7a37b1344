#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "masfire/error.hpp"
#include "masfire/injector.hpp"
#include "masfire/taxonomy.hpp"

namespace masfire::cli {

enum Exit : int { kOk = 0, kUsage = 1, kExecution = 2, kMetric = 3 };

/// The one place error classes become exit codes.
int exit_code_for(Errc code) noexcept;

/// Missing or unreadable config files are config errors, not I/O errors.
CampaignConfig load_config(const std::filesystem::path& path);

/// Owns the endpoint behind an InjectorClient.
struct InjectorHandle {
    std::unique_ptr<InjectorEndpoint> endpoint;
    std::unique_ptr<InjectorClient> client;
    InjectorClient* get() { return client.get(); }
};

/// `fixtures` (offline) wins over the config's endpoint; empty handle when neither is set.
InjectorHandle make_injector(const CampaignConfig& config, const std::optional<std::filesystem::path>& fixtures);

struct SimulateArgs {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    unsigned parallel = 1;
    bool force = false;
    std::optional<std::filesystem::path> injector_fixtures;
};
int cmd_simulate(const SimulateArgs& args);

struct ServeArgs {
    std::filesystem::path config;
    std::optional<std::string> listen;
    std::optional<std::string> upstream;
    std::optional<std::filesystem::path> out;
    bool force = false;
    std::optional<std::filesystem::path> injector_fixtures;
};
int cmd_serve(const ServeArgs& args);

struct ReportArgs {
    std::filesystem::path traces;
    std::optional<std::filesystem::path> baseline;
    std::string format = "table";
    std::optional<std::filesystem::path> out;
    bool applicable_only = false;
};
int cmd_report(const ReportArgs& args);

struct AnnotateArgs {
    std::optional<std::filesystem::path> traces;
    std::string mode = "rule";
    std::optional<std::string> judge;  // URL or fixture:PATH
    std::string judge_model = "judge";
    unsigned in_flight = 1;
    std::optional<std::pair<std::filesystem::path, std::filesystem::path>> kappa;
};
int cmd_annotate(const AnnotateArgs& args);

struct MockArgs {
    std::filesystem::path fixtures;
    std::string listen = "127.0.0.1:0";
};
int cmd_mock(const MockArgs& args);

/// host:port, with host defaulting to 127.0.0.1. Throws Config.
std::pair<std::string, int> parse_listen(const std::string& addr);

/// Blocks SIGINT/SIGTERM for every thread started afterwards; call first in main.
void block_stop_signals();
/// Waits for SIGINT or SIGTERM.
void wait_for_stop_signal();

}  // namespace masfire::cli
