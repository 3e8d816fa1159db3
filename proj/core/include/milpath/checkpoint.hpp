#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "milpath/milnet.hpp"

namespace milpath {

// `.milp` layout, little-endian:
//   "MILP" | u32 version | u32 D | per tensor in declaration order:
//   u32 rows | u32 cols | rows·cols × f32 row-major
// A JSON sidecar `<path>.json` carries the model config.
inline constexpr std::array<char, 4> kCheckpointMagic = {'M', 'I', 'L', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const MilParams& params);
/// Decodes tensors against a known config; shapes must agree with it.
MilParams decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig& config);

std::string model_config_json(const ModelConfig& config);
ModelConfig parse_model_config_json(std::string_view text);

std::filesystem::path checkpoint_sidecar_path(const std::filesystem::path& checkpoint);

/// Writes the binary tensors and the JSON sidecar.
void write_checkpoint(const MilParams& params, const std::filesystem::path& path);
MilParams read_checkpoint(const std::filesystem::path& path);

}  // namespace milpath
