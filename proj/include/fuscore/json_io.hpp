#pragma once

#include <string>

#include "json.hpp"

namespace fuscore {

using Json = nlohmann::ordered_json;

/// Serializes with every floating-point value printed at 17 significant
/// digits. `indent < 0` gives a single line.
std::string dump_json(const Json& value, int indent = -1);

}  // namespace fuscore
