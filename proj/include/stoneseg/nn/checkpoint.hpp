#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stoneseg/nn/model.hpp"

namespace stoneseg::nn {

struct Checkpoint {
  ModelConfig config;
  Parameters<float> parameters;
  std::int64_t training_steps_completed = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout, all integers little-endian:
///   "SSCK" | u32 version | u32 len + JSON {"config":…, "training_steps_completed":…}
///   | u32 tensor count | per tensor: u32 len + name, u32 ndim, u32 dims[ndim], f32 data
std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt);

/// Throws CheckpointError with reason bad_magic, truncated, shape_mismatch
/// or malformed.
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the serialized parameters; used to prove read-only passes.
std::uint64_t parameter_hash(const Parameters<float>& params);

}  // namespace stoneseg::nn
