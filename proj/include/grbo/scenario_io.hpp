#pragma once

#include "grbo/scenario.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace grbo {

inline constexpr int kScenarioFormatVersion = 1;

/// Thrown for malformed or version-mismatched data files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rounds to 9 significant digits; serialized numbers pass through this so a write, read, write
/// cycle reproduces identical bytes.
double round_sig9(double value);

/// Applies round_sig9 to every stored number so the in-memory scenario equals its parsed file.
void quantize_for_storage(Scenario& scenario);

/// JSON document with top-level format_version and sections map/agents/goals/demo.
std::string serialize_scenarios(const std::vector<Scenario>& scenarios,
                                const std::string& provenance_json = "{}");
std::vector<Scenario> parse_scenarios(const std::string& text);

void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios,
                     const std::string& provenance_json = "{}");
std::vector<Scenario> read_scenarios(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace grbo
