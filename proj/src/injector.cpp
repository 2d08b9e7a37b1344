#include "masfire/injector.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "json_util.hpp"
#include "masfire/digest.hpp"
#include "masfire/error.hpp"
#include "masfire/resources.hpp"

namespace masfire {

namespace {

using detail::required_string;
using detail::require_keys_subset;

const std::set<std::string, std::less<>>& stopwords() {
    // Function words only. Negations and modal verbs are content here because
    // constraints hinge on them.
    static const std::set<std::string, std::less<>> words = {
        "an",   "the",  "and",   "or",    "but",  "if",   "then", "of",    "to",     "in",    "on",   "at",
        "by",   "for",  "with",  "from",  "as",   "is",   "are",  "was",   "were",   "be",    "been", "being",
        "it",   "its",  "this",  "that",  "these", "those", "into", "onto", "over",  "under", "so",   "such",
        "do",   "does", "did",   "has",   "have", "had",  "i",    "you",   "we",     "they",  "he",   "she",
        "me",   "my",   "your",  "our",   "their", "them", "his", "her",   "which",  "who",   "whom", "what",
        "there", "here", "also", "very",  "just", "up",   "out",  "about", "than",   "while", "per",  "each",
    };
    return words;
}

const std::set<std::string, std::less<>>& constraint_markers() {
    static const std::set<std::string, std::less<>> words = {
        "must", "not",  "never",  "no",     "cannot",  "exceed",    "exceeds",    "only",     "least",    "most",  "limit",
        "maximum", "minimum", "without", "opposite", "always", "forbidden", "prohibited", "required", "require", "should",
        "ensure",
    };
    return words;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool edge_punct(unsigned char c) { return std::ispunct(c) && c != '$' && c != '%'; }

std::vector<std::string> tokens(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        std::size_t b = 0, e = w.size();
        while (b < e && edge_punct(static_cast<unsigned char>(w[b]))) ++b;
        while (e > b && edge_punct(static_cast<unsigned char>(w[e - 1]))) --e;
        if (b == e) continue;
        out.push_back(lower(std::string_view(w).substr(b, e - b)));
    }
    return out;
}

int marker_count(std::string_view text) {
    int n = 0;
    for (const auto& t : tokens(text)) {
        if (constraint_markers().contains(t) || t.ends_with("n't")) ++n;
    }
    return n;
}

std::optional<json> parse_object(std::string_view text) {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    return j;
}

std::optional<std::string> call_name(const json& j) {
    if (auto it = j.find("name"); it != j.end() && it->is_string()) return it->get<std::string>();
    if (auto it = j.find("function"); it != j.end() && it->is_object()) {
        if (auto n = it->find("name"); n != it->end() && n->is_string()) return n->get<std::string>();
    }
    return std::nullopt;
}

bool rule_passes(const IntegrityRule& rule, std::string_view original, std::string_view mutated) {
    switch (rule.check) {
        case IntegrityCheck::KeywordsRetained:
            return keyword_retention(original, mutated) >= rule.min_fraction;
        case IntegrityCheck::Changed:
            return original != mutated;
        case IntegrityCheck::ConstraintAdded: {
            const auto before = content_words(original);
            const std::set<std::string> seen(before.begin(), before.end());
            bool new_word = false;
            for (const auto& w : content_words(mutated)) {
                if (!seen.contains(w)) {
                    new_word = true;
                    break;
                }
            }
            return new_word && marker_count(mutated) > marker_count(original);
        }
        case IntegrityCheck::TermsVagued: {
            if (original == mutated) return false;
            const auto after_words = content_words(mutated);
            if (after_words.empty()) return false;
            const std::set<std::string> after(after_words.begin(), after_words.end());
            for (const auto& w : content_words(original)) {
                if (!after.contains(w)) return true;
            }
            return false;
        }
        case IntegrityCheck::SchemaParseable: {
            auto m = parse_object(mutated);
            if (!m) return false;
            if (auto o = parse_object(original)) {
                if (call_name(*o) && !call_name(*m)) return false;
                if (o->contains("arguments") && !m->contains("arguments")) return false;
            }
            return true;
        }
        case IntegrityCheck::NameChanged: {
            auto o = parse_object(original);
            auto m = parse_object(mutated);
            if (!o || !m) return false;
            auto a = call_name(*o);
            auto b = call_name(*m);
            return a && b && *a != *b;
        }
    }
    return false;
}

IntegrityCheck parse_check(std::string_view s) {
    if (s == "keywords_retained") return IntegrityCheck::KeywordsRetained;
    if (s == "constraint_added") return IntegrityCheck::ConstraintAdded;
    if (s == "terms_vagued") return IntegrityCheck::TermsVagued;
    if (s == "schema_parseable") return IntegrityCheck::SchemaParseable;
    if (s == "name_changed") return IntegrityCheck::NameChanged;
    if (s == "changed") return IntegrityCheck::Changed;
    throw Error(Errc::Schema, "unknown integrity check '" + std::string(s) + "'");
}

std::string_view check_name(IntegrityCheck c) {
    switch (c) {
        case IntegrityCheck::KeywordsRetained: return "keywords_retained";
        case IntegrityCheck::ConstraintAdded: return "constraint_added";
        case IntegrityCheck::TermsVagued: return "terms_vagued";
        case IntegrityCheck::SchemaParseable: return "schema_parseable";
        case IntegrityCheck::NameChanged: return "name_changed";
        case IntegrityCheck::Changed: return "changed";
    }
    return "?";
}

}  // namespace

std::string IntegrityRule::id() const {
    std::string out(check_name(check));
    if (check == IntegrityCheck::KeywordsRetained) {
        std::ostringstream s;
        s << '(' << min_fraction << ')';
        out += s.str();
    }
    return out;
}

bool is_constraint_marker(std::string_view word) {
    const auto w = lower(word);
    return constraint_markers().contains(w) || w.ends_with("n't");
}

std::vector<std::string> content_words(std::string_view text) {
    std::vector<std::string> out;
    for (auto& t : tokens(text)) {
        if (!stopwords().contains(t)) out.push_back(std::move(t));
    }
    return out;
}

double keyword_retention(std::string_view original, std::string_view mutated) {
    const auto o = content_words(original);
    const std::set<std::string> distinct(o.begin(), o.end());
    if (distinct.empty()) return 1.0;
    const auto m = content_words(mutated);
    const std::set<std::string> present(m.begin(), m.end());
    std::size_t kept = 0;
    for (const auto& w : distinct) kept += present.contains(w) ? 1 : 0;
    return static_cast<double>(kept) / static_cast<double>(distinct.size());
}

IntegrityResult check_integrity(std::string_view original, std::string_view mutated, const std::vector<IntegrityRule>& rules) {
    IntegrityResult r;
    for (const auto& rule : rules) {
        if (!rule_passes(rule, original, mutated)) r.failed.push_back(rule.id());
    }
    r.pass = r.failed.empty();
    return r;
}

const FaultTemplate& TemplateCatalog::for_fault(FaultType type) const {
    auto it = fault_templates.find(type);
    if (it == fault_templates.end())
        throw Error(Errc::Config, "no injector template for " + std::string(fault_type_name(type)));
    return it->second;
}

const std::string& TemplateCatalog::prompt(const std::string& name) const {
    auto it = prompt_templates.find(name);
    if (it == prompt_templates.end()) throw Error(Errc::Config, "no prompt template '" + name + "'");
    return it->second;
}

TemplateCatalog parse_template_catalog(std::string_view text) {
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::Parse, "template catalog is not valid JSON");
    require_keys_subset(doc, {"schema_version", "catalog_version", "prompt_templates", "fault_templates"}, "template catalog");
    if (detail::required_field<int>(doc, "schema_version", "template catalog") != 1)
        throw Error(Errc::Schema, "unsupported template catalog schema_version");

    TemplateCatalog cat;
    cat.version = required_string(doc, "catalog_version", "template catalog");
    for (const auto& [k, v] : detail::require(doc, "prompt_templates", "template catalog").items()) {
        if (!v.is_string()) throw Error(Errc::Schema, "prompt template '" + k + "' must be a string");
        cat.prompt_templates.emplace(k, v.get<std::string>());
    }
    for (const auto& t : detail::require(doc, "fault_templates", "template catalog")) {
        require_keys_subset(t, {"fault_type", "instruction_text", "output_contract", "integrity_rules"}, "fault template");
        FaultTemplate ft;
        const auto name = required_string(t, "fault_type", "fault template");
        auto type = parse_fault_type(name);
        if (!type || !is_semantic(*type)) throw Error(Errc::Schema, "fault template for non-semantic type '" + name + "'");
        ft.fault_type = *type;
        ft.instruction_text = required_string(t, "instruction_text", "fault template");
        const auto contract = required_string(t, "output_contract", "fault template");
        if (contract == "plain") {
            ft.output_contract = OutputContract::Plain;
        } else if (contract == "structured_object") {
            ft.output_contract = OutputContract::StructuredObject;
        } else {
            throw Error(Errc::Schema, "unknown output_contract '" + contract + "'");
        }
        for (const auto& r : detail::require(t, "integrity_rules", "fault template")) {
            require_keys_subset(r, {"check", "min_fraction"}, "integrity rule");
            IntegrityRule rule;
            rule.check = parse_check(required_string(r, "check", "integrity rule"));
            if (rule.check == IntegrityCheck::KeywordsRetained) {
                rule.min_fraction = detail::required_probability(r, "min_fraction", "integrity rule");
                if (rule.min_fraction < 0.0 || rule.min_fraction > 1.0)
                    throw Error(Errc::Schema, "min_fraction must be in [0,1]");
            } else if (r.contains("min_fraction")) {
                throw Error(Errc::Schema, "min_fraction only applies to keywords_retained");
            }
            ft.integrity_rules.push_back(rule);
        }
        if (!cat.fault_templates.emplace(ft.fault_type, ft).second)
            throw Error(Errc::Schema, "duplicate fault template for '" + name + "'");
    }
    for (auto type : kAllFaultTypes) {
        if (is_semantic(type) && !cat.fault_templates.contains(type))
            throw Error(Errc::Schema, "template catalog lacks " + std::string(fault_type_name(type)));
    }
    return cat;
}

const TemplateCatalog& default_templates() {
    static const TemplateCatalog cat = parse_template_catalog(resources::template_catalog());
    return cat;
}

json ChatRequest::to_json() const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", model}, {"messages", msgs}, {"seed", seed}};
}

std::string request_digest(const ChatRequest& request) { return sha256_hex(request.to_json().dump()); }

std::string request_digest(const json& body) {
    if (!body.is_object()) throw Error(Errc::MalformedRequest, "request body must be an object");
    ChatRequest r;
    if (auto it = body.find("model"); it != body.end() && it->is_string()) r.model = it->get<std::string>();
    if (auto it = body.find("seed"); it != body.end() && it->is_number_unsigned()) r.seed = it->get<std::uint64_t>();
    else if (it != body.end() && it->is_number_integer()) r.seed = static_cast<std::uint64_t>(it->get<std::int64_t>());
    auto msgs = body.find("messages");
    if (msgs == body.end() || !msgs->is_array()) throw Error(Errc::MalformedRequest, "messages must be an array");
    for (const auto& m : *msgs) {
        if (!m.is_object() || !m.contains("role") || !m["role"].is_string())
            throw Error(Errc::MalformedRequest, "message needs a string role");
        ChatMessage cm{m["role"].get<std::string>(), {}};
        if (auto c = m.find("content"); c != m.end() && c->is_string()) cm.content = c->get<std::string>();
        r.messages.push_back(std::move(cm));
    }
    return request_digest(r);
}

Fixture Fixture::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open fixture " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    auto doc = json::parse(buf.str(), nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::Parse, "fixture " + path.string() + " is not valid JSON");
    return from_json(doc);
}

Fixture Fixture::from_json(const json& doc) {
    require_keys_subset(doc, {"schema_version", "responses"}, "fixture");
    if (detail::required_field<int>(doc, "schema_version", "fixture") != 1)
        throw Error(Errc::Schema, "unsupported fixture schema_version");
    Fixture f;
    for (const auto& r : detail::require(doc, "responses", "fixture")) {
        require_keys_subset(r, {"digest", "status", "content", "note"}, "fixture response");
        FixtureResponse resp;
        resp.status = detail::optional_field<int>(r, "status", 200, "fixture response");
        resp.content = detail::optional_field<std::string>(r, "content", "", "fixture response");
        f.add(required_string(r, "digest", "fixture response"), std::move(resp));
    }
    return f;
}

void Fixture::add(std::string digest, FixtureResponse response) { entries_[std::move(digest)] = std::move(response); }

const FixtureResponse* Fixture::find(const std::string& digest) const {
    auto it = entries_.find(digest);
    return it == entries_.end() ? nullptr : &it->second;
}

json Fixture::to_json() const {
    json responses = json::array();
    for (const auto& [d, r] : entries_) responses.push_back({{"digest", d}, {"status", r.status}, {"content", r.content}});
    return {{"schema_version", 1}, {"responses", responses}};
}

std::string MockEndpoint::complete(const ChatRequest& request) {
    ++calls_;
    const auto digest = request_digest(request);
    const auto* r = fixture_.find(digest);
    if (!r) throw Error(Errc::InjectorUnavailable, "mock has no response for request " + digest);
    if (r->status < 200 || r->status >= 300)
        throw Error(Errc::InjectorUnavailable, "mock returned status " + std::to_string(r->status));
    return r->content;
}

HttpEndpoint::HttpEndpoint(std::string base_url, std::string api_key_env, int timeout_s)
    : base_url_(std::move(base_url)), api_key_env_(std::move(api_key_env)), timeout_s_(timeout_s) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string HttpEndpoint::complete(const ChatRequest& request) {
    // Split "scheme://host[:port]" from any path prefix.
    const auto scheme_end = base_url_.find("://");
    if (scheme_end == std::string::npos) throw Error(Errc::Config, "injector endpoint must include a scheme: " + base_url_);
    const auto path_start = base_url_.find('/', scheme_end + 3);
    const std::string origin = base_url_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? std::string() : base_url_.substr(path_start);
    if (!path.ends_with("/chat/completions")) path += "/v1/chat/completions";

    httplib::Client cli(origin);
    cli.set_connection_timeout(timeout_s_);
    cli.set_read_timeout(timeout_s_);
    httplib::Headers headers;
    if (const char* key = std::getenv(api_key_env_.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = cli.Post(path, headers, request.to_json().dump(), "application/json");
    if (!res) throw Error(Errc::InjectorUnavailable, "injector " + origin + " unreachable: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw Error(Errc::InjectorUnavailable, "injector returned HTTP " + std::to_string(res->status));
    auto body = json::parse(res->body, nullptr, false);
    try {
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw Error(Errc::InjectorUnavailable, "injector response lacks choices[0].message.content");
    }
}

ChatRequest build_injector_request(const FaultTemplate& tmpl, std::string_view original, std::string_view model,
                                   std::uint64_t seed, int attempt) {
    ChatRequest r;
    r.model = std::string(model);
    r.messages = {{"system", tmpl.instruction_text}, {"user", std::string(original)}};
    r.seed = seed + static_cast<std::uint64_t>(attempt);
    return r;
}

std::string strip_code_fence(std::string_view text) {
    auto trim = [](std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    };
    auto s = trim(text);
    if (s.starts_with("```") && s.size() >= 6 && s.ends_with("```")) {
        s.remove_suffix(3);
        auto nl = s.find('\n');
        s = nl == std::string_view::npos ? s.substr(3) : s.substr(nl + 1);
        s = trim(s);
    }
    return std::string(s);
}

std::string delegate(std::string_view original, const FaultTemplate& tmpl, InjectorEndpoint& endpoint,
                     const DelegateOptions& options, EventSink* sink) {
    if (options.max_retries < 0) throw Error(Errc::Config, "max_retries must be >= 0");
    bool any_response = false;
    std::string last_error;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        const auto req = build_injector_request(tmpl, original, options.model, options.seed, attempt);
        TraceEvent ev;
        ev.kind = EventKind::InjectionAttempt;
        if (!options.spec_id.empty()) ev.spec_id = options.spec_id;
        ev.agent_id = options.agent_id;
        ev.detail = {{"attempt", attempt},
                     {"request_digest", request_digest(req)},
                     {"injector", endpoint.identity()},
                     {"fault_type", fault_type_name(tmpl.fault_type)}};

        std::string text;
        try {
            text = endpoint.complete(req);
        } catch (const Error& e) {
            if (e.code() != Errc::InjectorUnavailable) throw;
            last_error = e.what();
            ev.payload_digest = sha256_hex("");
            ev.detail["outcome"] = "transport_error";
            if (sink) sink->record(std::move(ev));
            continue;
        }
        any_response = true;
        if (tmpl.output_contract == OutputContract::StructuredObject) text = strip_code_fence(text);
        const auto verdict = check_integrity(original, text, tmpl.integrity_rules);
        ev.payload_digest = sha256_hex(text);
        ev.detail["outcome"] = verdict.pass ? "pass" : "integrity_failed";
        if (!verdict.pass) ev.detail["failed_rules"] = verdict.failed;
        if (sink) sink->record(std::move(ev));
        if (verdict.pass) return text;
        last_error = "rules failed: ";
        for (std::size_t i = 0; i < verdict.failed.size(); ++i) last_error += (i ? "," : "") + verdict.failed[i];
    }
    const auto attempts = std::to_string(options.max_retries + 1);
    if (any_response)
        throw Error(Errc::IntegrityCheckFailed, "all " + attempts + " attempts rejected (" + last_error + ")");
    throw Error(Errc::InjectorUnavailable, "no response after " + attempts + " attempts (" + last_error + ")");
}

InjectorClient::InjectorClient(InjectorEndpoint& endpoint, TemplateCatalog catalog, std::string model, int max_retries)
    : endpoint_(endpoint), catalog_(std::move(catalog)), model_(std::move(model)), max_retries_(max_retries) {
    if (max_retries_ < 0) throw Error(Errc::Config, "max_retries must be >= 0");
}

InjectorClient InjectorClient::from_config(InjectorEndpoint& endpoint, const InjectorConfig& config) {
    auto cat = default_templates();
    for (const auto& [name, threshold] : config.keyword_retention) {
        auto type = parse_fault_type(name);
        if (!type || !cat.fault_templates.contains(*type))
            throw Error(Errc::Config, "keyword_retention override for unknown semantic fault '" + name + "'");
        auto& rules = cat.fault_templates[*type].integrity_rules;
        auto it = std::find_if(rules.begin(), rules.end(), [](const IntegrityRule& r) { return r.check == IntegrityCheck::KeywordsRetained; });
        if (it == rules.end()) {
            rules.insert(rules.begin(), IntegrityRule{IntegrityCheck::KeywordsRetained, threshold});
        } else {
            it->min_fraction = threshold;
        }
    }
    return InjectorClient(endpoint, std::move(cat), config.model, config.max_retries);
}

std::string InjectorClient::mutate(FaultType type, std::string_view original, std::uint64_t seed, const std::string& spec_id,
                                   const std::string& agent_id, EventSink* sink) {
    DelegateOptions opts;
    opts.model = model_;
    opts.max_retries = max_retries_;
    opts.seed = seed;
    opts.spec_id = spec_id;
    opts.agent_id = agent_id;
    return delegate(original, catalog_.for_fault(type), endpoint_, opts, sink);
}

}  // namespace masfire
