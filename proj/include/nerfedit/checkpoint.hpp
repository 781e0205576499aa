#pragma once

#include "nerfedit/adam.hpp"
#include "nerfedit/field.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace nerfedit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian): "NEFC", u32 version, grid config (u32 levels,
/// u32 base resolution, f64 growth, u32 table size, u32 features, 6 x f64 bbox),
/// u32 hidden width, u32 geometry features, u32 flags, u32 tensor count, then
/// per tensor u32 name length, name, u32 rank, rank x u32 dims and the f32
/// values in row-major order of dims.
std::vector<std::uint8_t> serialize_checkpoint(const FieldParameters<float>& params);
FieldParameters<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a temporary file in the same directory and renames it into place.
void save_checkpoint(const FieldParameters<float>& params, const std::filesystem::path& path);
FieldParameters<float> load_checkpoint(const std::filesystem::path& path);

/// Optimizer moments for resuming ("NEFA", u32 version, i64 step, u32 count,
/// then per tensor u32 rows, u32 cols and f32 first then second moment).
void save_adam_state(const AdamState<float>& state, const std::filesystem::path& path);
AdamState<float> load_adam_state(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace nerfedit
