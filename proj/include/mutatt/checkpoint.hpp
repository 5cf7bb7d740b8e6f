#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mutatt/model.hpp"
#include "mutatt/training.hpp"

namespace mutatt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to resume training or evaluate: model (vocabulary and
// parameters by name), optimizer moments and step, and the resolved run
// configuration with its hash.
struct Checkpoint {
  std::string config_text;
  std::uint32_t config_hash = 0;
  Model model;
  AdamState optimizer;
};

// CRC-32 of a string, used for config hashes and file checksums.
std::uint32_t crc32_of(std::string_view bytes);

// Binary layout, little-endian:
//   "MUTATTCK" | u32 version | payload | u32 crc32(everything before it)
// The payload holds the config, vocabulary, dims, then every parameter
// tensor by stable name, then the two Adam moment sets and the step.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Throws ChecksumError on corruption and ConfigError on an unknown version.
// Logs a warning when `expected_config_hash` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint32_t> expected_config_hash = std::nullopt);

}  // namespace mutatt
