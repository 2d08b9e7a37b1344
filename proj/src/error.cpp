#include "masfire/error.hpp"

namespace masfire {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::Parse: return "ParseError";
        case Errc::Schema: return "SchemaError";
        case Errc::Validation: return "ValidationError";
        case Errc::Config: return "ConfigError";
        case Errc::EmptyPrompt: return "EmptyPrompt";
        case Errc::EmptyRole: return "EmptyRole";
        case Errc::EmptyAgentId: return "EmptyAgentId";
        case Errc::WrongPromptRole: return "WrongPromptRole";
        case Errc::AlreadyInjected: return "AlreadyInjected";
        case Errc::KindMismatch: return "KindMismatch";
        case Errc::CatalogTooSmall: return "CatalogTooSmall";
        case Errc::WouldEmptyHistory: return "WouldEmptyHistory";
        case Errc::UnknownAgent: return "UnknownAgent";
        case Errc::BudgetNotBinding: return "BudgetNotBinding";
        case Errc::FieldNotFound: return "FieldNotFound";
        case Errc::AlreadyInvalid: return "AlreadyInvalid";
        case Errc::NotApplicable: return "NotApplicable";
        case Errc::InjectorUnavailable: return "InjectorUnavailable";
        case Errc::IntegrityCheckFailed: return "IntegrityCheckFailed";
        case Errc::InvariantViolation: return "InvariantViolation";
        case Errc::Io: return "IoError";
        case Errc::CorruptTrace: return "CorruptTrace";
        case Errc::EmptyBaseline: return "EmptyBaseline";
        case Errc::MissingInjectedRun: return "MissingInjectedRun";
        case Errc::EmptyTraceSet: return "EmptyTraceSet";
        case Errc::JudgeUnavailable: return "JudgeUnavailable";
        case Errc::UnparseableVerdict: return "UnparseableVerdict";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::UpstreamUnreachable: return "UpstreamUnreachable";
        case Errc::MalformedRequest: return "MalformedRequest";
    }
    return "Unknown";
}

}  // namespace masfire
