#include "masfire/tier.hpp"

namespace masfire {

std::string_view tier_name(FtTier tier) noexcept {
    switch (tier) {
        case FtTier::Mechanism: return "Mechanism";
        case FtTier::Rule: return "Rule";
        case FtTier::Prompt: return "Prompt";
        case FtTier::Reasoning: return "Reasoning";
    }
    return "?";
}

std::optional<FtTier> parse_tier(std::string_view name) noexcept {
    for (auto t : kAllTiers) {
        if (tier_name(t) == name) return t;
    }
    return std::nullopt;
}

}  // namespace masfire
