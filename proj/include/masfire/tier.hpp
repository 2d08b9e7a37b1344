#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace masfire {

/// Source of a fault-tolerant behavior, ordered Mechanism, Rule, Prompt, Reasoning.
enum class FtTier { Mechanism, Rule, Prompt, Reasoning };

inline constexpr std::array<FtTier, 4> kAllTiers = {FtTier::Mechanism, FtTier::Rule, FtTier::Prompt,
                                                    FtTier::Reasoning};

std::string_view tier_name(FtTier tier) noexcept;
std::optional<FtTier> parse_tier(std::string_view name) noexcept;

}  // namespace masfire
