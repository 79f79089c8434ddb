#pragma once

// Flat JSON run configuration. Every key is optional; omitted keys keep the
// defaults below, unknown keys are rejected.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "compass/policy_net.hpp"
#include "compass/simulator.hpp"
#include "compass/trainer.hpp"

namespace compass {

struct RunConfig {
  SimConfig sim;
  nn::NetConfig net;
  PPOConfig ppo;
  std::uint64_t seed = 0;  ///< master seed: evaluation episodes and training streams

  /// Derived fields (net dimensions, shared horizons and seeds) kept in step.
  void sync();
  void validate() const;
};

RunConfig default_config();
/// Throws ConfigError naming the offending key.
RunConfig config_from_json(const nlohmann::json& j);
/// Every key, in a fixed order; config_from_json(config_to_json(c)) == c.
nlohmann::json config_to_json(const RunConfig& c);
/// Throws ConfigError for a missing file or malformed JSON.
RunConfig load_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const RunConfig& c);

}  // namespace compass
