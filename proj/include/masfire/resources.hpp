#pragma once

#include <string_view>

namespace masfire::resources {

// Catalog files shipped under data/ and compiled into the library.
std::string_view template_catalog();
std::string_view behavior_catalog();
/// Empty view for unknown names.
std::string_view scenario_preset(std::string_view name);

}  // namespace masfire::resources
