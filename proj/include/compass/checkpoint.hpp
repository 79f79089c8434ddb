#pragma once

// Checkpoint layout: u64 little-endian manifest length, the JSON manifest
// {format_version, meta, tensors: [{name, shape, dtype, byte_offset}]}, then
// one blob of little-endian float32 values in manifest order.

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "compass/policy_net.hpp"

namespace compass {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  nn::ParamSet<float> params;
  nlohmann::json meta = nlohmann::json::object();
};

std::string encode_checkpoint(const nn::ParamSet<float>& params, const nlohmann::json& meta = {});
/// Throws InputError on unknown versions, truncated data, unknown dtypes or
/// non-finite values.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const nn::ParamSet<float>& params,
                     const nlohmann::json& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json net_config_to_json(const nn::NetConfig& cfg);
nn::NetConfig net_config_from_json(const nlohmann::json& j);

}  // namespace compass
