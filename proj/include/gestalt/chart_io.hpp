#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "gestalt/model.hpp"

namespace gestalt {

inline constexpr int kChartSchemaVersion = 1;

nlohmann::json chart_to_json(const GrowthChart& chart);
/// Throws kSchema on a version mismatch or missing/invalid fields.
GrowthChart chart_from_json(const nlohmann::json& doc);

void save_chart(const GrowthChart& chart, const std::filesystem::path& path);
/// Throws kParse (with byte offset) for malformed JSON, kSchema for a bad
/// document and kLoad when the file cannot be read.
GrowthChart load_chart(const std::filesystem::path& path);

/// Reads a whole file; throws kLoad on failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace gestalt
