#pragma once

#include "grbo/policy.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace grbo {

inline constexpr int kCheckpointFormatVersion = 1;

/// Checkpoint written by an incompatible format version.
struct CheckpointVersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  PolicyModel model;
  std::optional<OptimizerState> optimizer;
  std::string provenance_json = "{}";
};

/// Structured-text container: vocabulary, feature config, row-major float64 tensors, optimizer.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws CheckpointVersionError on a format_version mismatch, FormatError on malformed content.
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace grbo
