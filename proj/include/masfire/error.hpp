#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace masfire {

enum class Errc {
    // campaign / config
    Parse,
    Schema,
    Validation,
    Config,
    // prompt-mod
    EmptyPrompt,
    EmptyRole,
    EmptyAgentId,
    WrongPromptRole,
    AlreadyInjected,
    // response-rewrite
    KindMismatch,
    CatalogTooSmall,
    WouldEmptyHistory,
    UnknownAgent,
    BudgetNotBinding,
    FieldNotFound,
    AlreadyInvalid,
    NotApplicable,
    // injector
    InjectorUnavailable,
    IntegrityCheckFailed,
    // tracelog
    InvariantViolation,
    Io,
    CorruptTrace,
    // metrics
    EmptyBaseline,
    MissingInjectedRun,
    EmptyTraceSet,
    // annotator
    JudgeUnavailable,
    UnparseableVerdict,
    LengthMismatch,
    EmptyInput,
    // gateway
    UpstreamUnreachable,
    MalformedRequest,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status without string matching.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace masfire
