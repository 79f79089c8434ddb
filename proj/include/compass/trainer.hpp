#pragma once

// PPO with GAE over parallel environments. One forward pass per (env, step)
// serves all M agents: they share the observation, so each record holds M
// transitions.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compass/policy_net.hpp"
#include "compass/simulator.hpp"

namespace compass {

struct PPOConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  int n_env = 16;
  int rollout = 100;  ///< T
  int epochs = 4;
  int minibatches = 4;
  double lr0 = 1e-4;
  double lr_decay = 0.96;
  int lr_period = 64;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t total_env_steps = 160000;  ///< global, counted per env step
  int checkpoint_every = 50;
  std::uint64_t seed = 0;

  int iterations() const;
  void validate() const;
};

/// lr0 * decay^floor(iteration / period)
double lr_at(const PPOConfig& cfg, int iteration);

/// One (env, step) record: the shared observation and M transitions.
struct StepRecord {
  nn::PolicyInput obs;
  std::vector<int> action;         ///< index into the agent's candidate list
  std::vector<float> logp_old;     ///< per agent
  std::vector<float> value;        ///< per agent (equal under a central critic)
  double reward = 0;               ///< shared team reward
  bool done = false;               ///< episode ended after this step
  std::vector<double> advantage;   ///< per agent
  std::vector<double> ret;         ///< per agent
};

struct RolloutBuffer {
  int n_env = 0;
  int steps = 0;
  int agents = 0;
  std::vector<StepRecord> records;         ///< [env * steps + t]
  std::vector<std::vector<float>> bootstrap;  ///< V(s_T) per env, per agent

  StepRecord& at(int env, int t) { return records[static_cast<std::size_t>(env) * steps + t]; }
  const StepRecord& at(int env, int t) const { return records[static_cast<std::size_t>(env) * steps + t]; }
  std::size_t transitions() const { return records.size() * static_cast<std::size_t>(agents); }
};

/// delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t);
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}; returns = A + V.
void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda,
                 std::span<double> advantages, std::span<double> returns);

/// Fills advantage/ret of every record.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

/// In place: mean 0, std 1 (population std, floored at 1e-8).
void normalize_advantages(std::span<double> adv);

/// min(r A, clip(r, 1-eps, 1+eps) A)
double clipped_surrogate(double ratio, double advantage, double eps);

struct LossInputs {
  std::span<const double> logp_new, logp_old, advantage, value, ret, entropy;
};

struct LossResult {
  double loss = 0;
  double surrogate = 0;  ///< mean clipped surrogate (objective, not negated)
  double value_loss = 0;
  double entropy = 0;
  double approx_kl = 0;  ///< mean(logp_old - logp_new)
  double clip_fraction = 0;
  std::vector<double> surrogate_terms;
  std::vector<double> dlogp;   ///< d loss / d logp_new (surrogate part)
  std::vector<double> dvalue;  ///< d loss / d value
};

/// L = -mean(surrogate) + c_v mean((V - R)^2) - c_e mean(entropy).
/// Advantages are used as given. Throws NumericalError naming the transition
/// when a ratio is not finite.
LossResult ppo_loss(const LossInputs& in, const PPOConfig& cfg);

struct AdamState {
  nn::ParamSet<float> m, v;
  std::int64_t step = 0;
};

AdamState adam_init(const nn::ParamSet<float>& params);
void adam_step(nn::ParamSet<float>& params, const nn::ParamSet<float>& grads, AdamState& state,
               double lr, const PPOConfig& cfg);
double grad_norm(const nn::ParamSet<float>& grads);
/// Rescales to max_norm when above it; returns the norm before clipping.
double clip_grad_norm(nn::ParamSet<float>& grads, double max_norm);

struct MinibatchStats {
  double loss = 0, entropy = 0, approx_kl = 0, clip_fraction = 0;
  std::size_t transitions = 0;
};

/// Loss gradient over a set of records (advantages already normalized in
/// `adv`, indexed [record][agent]). Fixed chunking keeps the float sum order
/// independent of `threads`.
nn::ParamSet<float> minibatch_gradients(const nn::ParamSet<float>& params, const nn::NetConfig& net,
                                        const PPOConfig& cfg, std::span<const StepRecord* const> records,
                                        const std::vector<std::vector<double>>& adv, int threads,
                                        MinibatchStats* stats);

struct TrainStats {
  int iteration = 0;
  std::int64_t env_steps = 0;
  double mean_reward = 0;
  double loss = 0;
  double entropy = 0;
  double kl = 0;
  double lr = 0;
  bool aborted = false;
};

class Trainer {
 public:
  Trainer(SimConfig sim, nn::NetConfig net, PPOConfig ppo, int threads = 1);

  const nn::ParamSet<float>& params() const { return params_; }
  nn::ParamSet<float>& params() { return params_; }
  const nn::NetConfig& net() const { return net_; }
  const PPOConfig& ppo() const { return ppo_; }
  int iteration() const { return iteration_; }
  std::int64_t env_steps() const { return env_steps_; }

  /// T steps in every env. `greedy` takes argmax actions instead of sampling.
  RolloutBuffer collect(bool greedy = false);
  /// GAE plus `epochs` passes of minibatch Adam steps.
  TrainStats update(RolloutBuffer& buffer);
  /// collect + update, advancing the iteration counter.
  TrainStats iterate();

  /// Runs all iterations; writes train_log.csv and checkpoints into `out`.
  /// `header` is the metadata line written first in every output file.
  void run(const std::filesystem::path& out, const std::string& header, const nlohmann::json& meta,
           const std::function<void(const TrainStats&)>& on_iteration = {});

 private:
  struct Env {
    SimState state;
    Rng rng;
    std::int64_t episodes = 0;
    int index = 0;
  };
  void reset_env(Env& env);

  SimConfig sim_;
  nn::NetConfig net_;
  PPOConfig ppo_;
  int threads_;
  nn::ParamSet<float> params_;
  AdamState adam_;
  std::vector<Env> envs_;
  int iteration_ = 0;
  std::int64_t env_steps_ = 0;
};

}  // namespace compass
