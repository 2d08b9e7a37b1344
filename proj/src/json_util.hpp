#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "masfire/error.hpp"

namespace masfire::detail {

using json = nlohmann::json;

/// Rejects any key outside `allowed`; `where` names the object in messages.
inline void require_keys_subset(const json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
    if (!j.is_object()) throw Error(Errc::Schema, std::string(where) + " must be an object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) throw Error(Errc::Schema, "unknown key '" + key + "' in " + std::string(where));
    }
}

inline const json& require(const json& j, std::string_view key, std::string_view where) {
    auto it = j.find(std::string(key));
    if (it == j.end()) throw Error(Errc::Schema, "missing key '" + std::string(key) + "' in " + std::string(where));
    return *it;
}

template <typename T>
T get_as(const json& v, std::string_view key, std::string_view where) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw Error(Errc::Schema, "wrong type for '" + std::string(key) + "' in " + std::string(where));
    }
}

template <typename T>
T required_field(const json& j, std::string_view key, std::string_view where) {
    return get_as<T>(require(j, key, where), key, where);
}

template <typename T>
T optional_field(const json& j, std::string_view key, T fallback, std::string_view where) {
    auto it = j.find(std::string(key));
    if (it == j.end()) return fallback;
    return get_as<T>(*it, key, where);
}

inline std::string required_string(const json& j, std::string_view key, std::string_view where) {
    const auto& v = require(j, key, where);
    if (!v.is_string()) throw Error(Errc::Schema, "'" + std::string(key) + "' in " + std::string(where) + " must be a string");
    return v.get<std::string>();
}

inline double required_probability(const json& j, std::string_view key, std::string_view where) {
    const auto& v = require(j, key, where);
    if (!v.is_number()) throw Error(Errc::Schema, "'" + std::string(key) + "' in " + std::string(where) + " must be a number");
    return v.get<double>();
}

}  // namespace masfire::detail
