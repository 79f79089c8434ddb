#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <vector>

#include "compass/gp_belief.hpp"
#include "compass/matrix.hpp"
#include "compass/rng.hpp"
#include "compass/world_graph.hpp"

namespace compass {

enum class EpisodeMode { evaluation, training };

struct SimConfig {
  int K = 200;
  int k_nn = 10;
  int M = 3;
  int N = 8;
  double r_sense = 0.1;
  double speed_factor = 0.6;
  int B = 30;
  int history_slots = 5;  ///< H, pooled slots
  int stride = 2;         ///< s
  int delta = 1;          ///< future-prediction horizon in steps
  int d_pe = 8;
  std::uint64_t seed = 0;
  EpisodeMode mode = EpisodeMode::evaluation;
  int rollout_horizon = 100;  ///< T, used in training mode

  KernelParams kernel;
  int max_window = 200;
  int time_horizon = 50;

  double heading_noise = 0.2;          ///< rad
  double waypoint_switch_prob = 0.05;  ///< per step

  int raw_history() const { return history_slots * stride; }
  int feature_width() const { return 4 * N + 3; }
  void validate() const;
};

struct TargetState {
  Point position;
  Point waypoint;
};

struct AgentState {
  int node = 0;
  std::vector<int> trajectory;
  double distance_traveled_this_step = 0;
};

/// Temporally pooled node features, laid out [node][slot][feature].
struct PooledFeatures {
  int nodes = 0;
  int slots = 0;
  int width = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> valid;  ///< per slot

  double at(int v, int slot, int f) const {
    return data[(static_cast<std::size_t>(v) * slots + slot) * width + f];
  }
};

/// Ring buffer of raw per-step node feature rows (K x (4N+3) each).
/// Row layout per node: (mu_j, var_j) at t for each target, then at t+delta,
/// then the presence flag and the node's x, y.
class NodeFeatureHistory {
 public:
  NodeFeatureHistory() = default;
  NodeFeatureHistory(int nodes, int targets, int capacity);

  int nodes() const { return nodes_; }
  int width() const { return 4 * targets_ + 3; }
  int capacity() const { return capacity_; }
  int length() const { return static_cast<int>(rows_.size()); }
  void push(Matrix<double> row);
  const Matrix<double>& latest() const { return rows_.back(); }
  const std::deque<Matrix<double>>& rows() const { return rows_; }

  /// Average-pools the raw rows into `slots` windows of `stride` steps,
  /// aligned so the last slot ends at the newest row. Slots with no rows are
  /// zero and marked invalid.
  PooledFeatures pooled(int slots, int stride) const;

 private:
  int nodes_ = 0;
  int targets_ = 0;
  int capacity_ = 0;
  std::deque<Matrix<double>> rows_;
};

struct SimState {
  SimConfig config;
  std::shared_ptr<const WorldGraph> graph;
  std::vector<TargetState> targets;
  std::vector<AgentState> agents;
  std::vector<TargetBelief> beliefs;
  NodeFeatureHistory history;
  Matrix<double> node_mean;  ///< N x K at the current step
  Matrix<double> node_var;   ///< N x K at the current step
  std::vector<Observation> last_observations;
  int step = 0;
  int actions_taken = 0;  ///< per agent
  Rng rng;

  std::vector<int> agent_nodes() const;
  std::vector<std::uint8_t> presence() const;
  /// Graph distance from each node to the closest agent.
  std::vector<double> distance_to_nearest_agent() const;
};

/// Builds the graph from the config seed and places targets and agents.
SimState init_episode(const SimConfig& config);
/// Same, on an existing graph (must have config.K nodes).
SimState init_episode(const SimConfig& config, std::shared_ptr<const WorldGraph> graph);

void step_targets(SimState& state);

/// One observation per (agent, target), forwarded to the beliefs.
std::vector<Observation> sense(SimState& state);

/// Moves every agent along one edge. Throws ContractError for a non-adjacent
/// action or a wrong action count.
void apply_actions(SimState& state, std::span<const int> actions);

/// Prunes and refactors every belief at the current step.
void refresh_beliefs(SimState& state);

/// Evaluates all posteriors at every node for t and t+delta and appends the
/// feature row; also refreshes node_mean / node_var.
void update_node_history(SimState& state);

bool episode_done(const SimState& state);

}  // namespace compass
