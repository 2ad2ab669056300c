#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "GCAPS"                      5-byte magic
//   u32  version                 = kCheckpointVersion
//   u32  config length, bytes    canonical ModelConfig::to_text()
//   u64  training step
//   u64  seed
//   u32  parameter count
//   per parameter:
//     u32 name length, name bytes
//     u32 rank, u64 extents[rank]
//     f64 values[prod(extents)]

#include <cstdint>
#include <optional>
#include <string>

#include "gcaps/capsnet.hpp"

namespace gcaps {

inline constexpr char kCheckpointMagic[5] = {'G', 'C', 'A', 'P', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Parameters params;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

/// Writes atomically (temporary file + rename).
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Throws FormatError on truncation, bad magic, version mismatch or a
/// parameter whose shape disagrees with the stored config. When `expected`
/// is given, a differing config is rejected with a ConfigError naming the
/// first mismatching field.
Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace gcaps
