#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "masfire/taxonomy.hpp"
#include "masfire/tracelog.hpp"

namespace masfire {

enum class IntegrityCheck { KeywordsRetained, ConstraintAdded, TermsVagued, SchemaParseable, NameChanged, Changed };

struct IntegrityRule {
    IntegrityCheck check = IntegrityCheck::Changed;
    double min_fraction = 0.0;  // KeywordsRetained only

    std::string id() const;
};

struct IntegrityResult {
    bool pass = true;
    std::vector<std::string> failed;  // rule ids
};

/// Lowercased whitespace-delimited words, edge punctuation stripped, fixed
/// stopword list removed. Single characters are kept as content.
std::vector<std::string> content_words(std::string_view text);
/// Fraction of the original's distinct content words present in the mutation.
/// Negations, modals and limit words counted by the ConstraintAdded check.
bool is_constraint_marker(std::string_view word);
double keyword_retention(std::string_view original, std::string_view mutated);
IntegrityResult check_integrity(std::string_view original, std::string_view mutated, const std::vector<IntegrityRule>& rules);

enum class OutputContract { Plain, StructuredObject };

struct FaultTemplate {
    FaultType fault_type = FaultType::Hallucination;
    std::string instruction_text;
    OutputContract output_contract = OutputContract::Plain;
    std::vector<IntegrityRule> integrity_rules;
};

/// Versioned catalog of injector templates and prompt-mod directive texts.
struct TemplateCatalog {
    std::string version;
    std::map<std::string, std::string> prompt_templates;
    std::map<FaultType, FaultTemplate> fault_templates;

    const FaultTemplate& for_fault(FaultType type) const;
    const std::string& prompt(const std::string& name) const;
};

TemplateCatalog parse_template_catalog(std::string_view text);
const TemplateCatalog& default_templates();

struct ChatMessage {
    std::string role;
    std::string content;
    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    std::uint64_t seed = 0;

    json to_json() const;
};

/// Digest over the canonical {model, messages, seed} document; fixtures are keyed by it.
std::string request_digest(const ChatRequest& request);
std::string request_digest(const json& request_body);

class InjectorEndpoint {
public:
    virtual ~InjectorEndpoint() = default;
    /// Returns the assistant message content. Throws Error{InjectorUnavailable}
    /// on transport failure or a non-success status.
    virtual std::string complete(const ChatRequest& request) = 0;
    virtual std::string identity() const = 0;
};

struct FixtureResponse {
    int status = 200;
    std::string content;
};

/// Canned responses keyed by request digest, loaded from a fixture file.
class Fixture {
public:
    Fixture() = default;
    static Fixture load(const std::filesystem::path& path);
    static Fixture from_json(const json& doc);

    void add(std::string digest, FixtureResponse response);
    const FixtureResponse* find(const std::string& digest) const;
    json to_json() const;
    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::string, FixtureResponse> entries_;
};

/// In-process endpoint over a Fixture; same lookup as the mock server.
class MockEndpoint : public InjectorEndpoint {
public:
    explicit MockEndpoint(Fixture fixture, std::string name = "mock") : fixture_(std::move(fixture)), name_(std::move(name)) {}
    std::string complete(const ChatRequest& request) override;
    std::string identity() const override { return name_; }
    std::size_t calls() const { return calls_; }

private:
    Fixture fixture_;
    std::string name_;
    std::size_t calls_ = 0;
};

/// Chat-completions client. Credentials come from the named environment
/// variable and are sent as a bearer token; they are never logged.
class HttpEndpoint : public InjectorEndpoint {
public:
    explicit HttpEndpoint(std::string base_url, std::string api_key_env = "MASFIRE_INJECTOR_API_KEY", int timeout_s = 60);
    std::string complete(const ChatRequest& request) override;
    std::string identity() const override { return base_url_; }

private:
    std::string base_url_;
    std::string api_key_env_;
    int timeout_s_;
};

/// Builds the request sent for one delegation attempt.
ChatRequest build_injector_request(const FaultTemplate& tmpl, std::string_view original, std::string_view model,
                                   std::uint64_t seed, int attempt);

struct DelegateOptions {
    std::string model = "injector";
    int max_retries = 2;
    std::uint64_t seed = 0;
    std::string spec_id;
    std::string agent_id;
};

/// Sends `original` to the injector until a response passes every integrity
/// rule of the template; at most max_retries + 1 attempts, each recorded as
/// an injection_attempt event.
std::string delegate(std::string_view original, const FaultTemplate& tmpl, InjectorEndpoint& endpoint,
                     const DelegateOptions& options, EventSink* sink);

/// Endpoint plus the catalog and retry policy used by the prompt and
/// response mutators.
class InjectorClient {
public:
    InjectorClient(InjectorEndpoint& endpoint, TemplateCatalog catalog = default_templates(), std::string model = "injector",
                   int max_retries = 2);
    static InjectorClient from_config(InjectorEndpoint& endpoint, const InjectorConfig& config);

    std::string mutate(FaultType type, std::string_view original, std::uint64_t seed, const std::string& spec_id,
                       const std::string& agent_id, EventSink* sink);
    const TemplateCatalog& catalog() const { return catalog_; }
    InjectorEndpoint& endpoint() { return endpoint_; }
    int max_retries() const { return max_retries_; }

private:
    InjectorEndpoint& endpoint_;
    TemplateCatalog catalog_;
    std::string model_;
    int max_retries_;
};

/// Removes a surrounding ``` fence (with optional language tag) and outer whitespace.
std::string strip_code_fence(std::string_view text);

}  // namespace masfire
