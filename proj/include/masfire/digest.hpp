#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace masfire {

/// Name written into trace headers; every digest in the toolkit uses it.
inline constexpr std::string_view kHashAlgo = "sha256";

std::string sha256_hex(std::string_view data);

/// First 8 bytes of SHA-256 over the parts joined by 0x1f, little-endian.
std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b = {});

}  // namespace masfire
