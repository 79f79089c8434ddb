#include "compass/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <vector>

#include "compass/errors.hpp"

namespace compass {
namespace {

using nlohmann::json;

struct Field {
  const char* key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T>
T read(const json& v, const char* key) {
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(std::string(key) + ": expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(std::string(key) + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) return v.get<T>();
      throw ConfigError(std::string(key) + ": must be >= 0");
    }
    return v.get<T>();
  } else {
    if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
    return v.get<T>();
  }
}

#define FIELD(key, member)                                                                   \
  Field {                                                                                    \
    key, [](const RunConfig& c) { return json(c.member); },                                  \
        [](RunConfig& c, const json& v) { c.member = read<decltype(c.member)>(v, key); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FIELD("seed", seed),
      FIELD("K", sim.K),
      FIELD("k_nn", sim.k_nn),
      FIELD("M", sim.M),
      FIELD("N", sim.N),
      FIELD("r_sense", sim.r_sense),
      FIELD("speed_factor", sim.speed_factor),
      FIELD("B", sim.B),
      FIELD("H", sim.history_slots),
      FIELD("stride", sim.stride),
      FIELD("delta", sim.delta),
      FIELD("d_pe", sim.d_pe),
      FIELD("sigma_f2", sim.kernel.amplitude),
      FIELD("ell_s", sim.kernel.spatial_lengthscale),
      FIELD("ell_t", sim.kernel.temporal_lengthscale),
      FIELD("sigma_n2", sim.kernel.noise),
      FIELD("W_max", sim.max_window),
      FIELD("T_horizon", sim.time_horizon),
      FIELD("heading_noise", sim.heading_noise),
      FIELD("waypoint_switch_prob", sim.waypoint_switch_prob),
      FIELD("d_e", net.d_model),
      FIELD("heads", net.heads),
      FIELD("ff_mult", net.ff_mult),
      FIELD("critic_hidden", net.critic_hidden),
      FIELD("spatial_layers", net.spatial_layers),
      Field{"critic", [](const RunConfig& c) { return json(std::string(nn::critic_name(c.net.critic))); },
            [](RunConfig& c, const json& v) { c.net.critic = nn::parse_critic(read<std::string>(v, "critic")); }},
      Field{"variant", [](const RunConfig& c) { return json(std::string(nn::variant_name(c.net.variant))); },
            [](RunConfig& c, const json& v) { c.net.variant = nn::parse_variant(read<std::string>(v, "variant")); }},
      FIELD("clip", ppo.clip),
      FIELD("gamma", ppo.gamma),
      FIELD("lambda", ppo.lambda),
      FIELD("n_env", ppo.n_env),
      FIELD("T", ppo.rollout),
      FIELD("epochs", ppo.epochs),
      FIELD("minibatches", ppo.minibatches),
      FIELD("lr", ppo.lr0),
      FIELD("lr_decay", ppo.lr_decay),
      FIELD("lr_period", ppo.lr_period),
      FIELD("entropy_coef", ppo.entropy_coef),
      FIELD("value_coef", ppo.value_coef),
      FIELD("max_grad_norm", ppo.max_grad_norm),
      FIELD("adam_beta1", ppo.adam_beta1),
      FIELD("adam_beta2", ppo.adam_beta2),
      FIELD("adam_eps", ppo.adam_eps),
      FIELD("total_env_steps", ppo.total_env_steps),
      FIELD("checkpoint_every", ppo.checkpoint_every),
  };
  return f;
}

#undef FIELD

}  // namespace

void RunConfig::sync() {
  sim.seed = seed;
  sim.rollout_horizon = ppo.rollout;
  ppo.seed = seed;
  net = nn::net_config_for(sim, net);
}

void RunConfig::validate() const {
  sim.validate();
  net.validate();
  ppo.validate();
}

RunConfig default_config() {
  RunConfig c;
  c.sync();
  return c;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig c;
  std::set<std::string> known;
  for (const auto& f : fields()) known.insert(f.key);
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key + ": unknown config key");
  }
  for (const auto& f : fields()) {
    if (j.contains(f.key)) f.set(c, j.at(f.key));
  }
  c.sync();
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(c);
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  const std::string text = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace compass
