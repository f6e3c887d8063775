#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "starchnet/tensor.hpp"

namespace starchnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensor table plus JSON metadata.
///
/// On-disk layout (little-endian):
///   "SVCK" | u32 version | u64 metadata length | metadata (UTF-8 JSON)
///   | u64 tensor count | per tensor: u16 name length, name, u8 dtype
///   (0 = f32, 1 = f64), u8 rank, rank x u64 dims, raw values
///   | u32 CRC-32 of every byte after the magic.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);

/// Parses and verifies a serialized checkpoint. Wrong magic, unsupported
/// version, CRC mismatch and truncation raise CheckpointError (version
/// problems as CheckpointVersionError) with the byte offset involved.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace starchnet
