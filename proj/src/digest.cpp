#include "masfire/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>
#include <stdexcept>

namespace masfire {

namespace {

std::array<unsigned char, 32> sha256_raw(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    std::array<unsigned char, 32> out{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    static constexpr char kHex[] = "0123456789abcdef";
    const auto raw = sha256_raw(data);
    std::string hex;
    hex.reserve(64);
    for (unsigned char c : raw) {
        hex.push_back(kHex[c >> 4]);
        hex.push_back(kHex[c & 0xf]);
    }
    return hex;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b) {
    std::string buf = std::to_string(base);
    buf.push_back('\x1f');
    buf.append(a);
    buf.push_back('\x1f');
    buf.append(b);
    const auto raw = sha256_raw(buf);
    std::uint64_t seed = 0;
    for (int i = 7; i >= 0; --i) seed = (seed << 8) | raw[static_cast<std::size_t>(i)];
    return seed;
}

}  // namespace masfire
