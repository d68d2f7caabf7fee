#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "brakeorbit/nonlinearity.hpp"

namespace brakeorbit {

/// {"kind": "pure_power", "p": 3} or {"kind": "table", "t": [...], "f": [...], "p": ...}.
nlohmann::json to_json(const Nonlinearity& nl);
/// Also accepts {"kind": "table", "path": "<two-column t,f CSV>"}; relative paths
/// resolve against `base`. Throws ConfigError naming the offending key.
Nonlinearity nonlinearity_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});

/// Writes through a temporary file in the same directory and renames it.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

/// Null for non-finite values.
nlohmann::json finite_or_null(double x);
double number_or(const nlohmann::json& j, double fallback);

}  // namespace brakeorbit
