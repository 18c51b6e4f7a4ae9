#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "grokforget/model.hpp"

namespace gf::zoo {

// Binary layout, all integers little-endian:
//   "GRKF" | u16 version | u32 tensor_count
//   per tensor: u16 name_len | name | u8 dtype (0 = f32) | u8 ndim |
//               u32 dims[ndim] | u64 byte offset into payload
//   payload: float32 values, little-endian
inline constexpr char kCheckpointMagic[4] = {'G', 'R', 'K', 'F'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::string init_scheme = "fan_in_uniform";
  nlohmann::json trajectory_summary = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& j);
};

struct Checkpoint {
  Params params;
  CheckpointMeta meta;
};

std::vector<std::uint8_t> encode_params(const Params& params);
Params decode_params(std::span<const std::uint8_t> bytes);

// Writes <base>.grkf and the <base>.json sidecar.
void save_checkpoint(const std::filesystem::path& base, const Params& params, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& base);

}  // namespace gf::zoo
