#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "compass/planners.hpp"
#include "compass/reward.hpp"
#include "compass/simulator.hpp"

namespace compass {

/// Everything metrics need from one episode, one entry per decision step
/// after sensing (steps 1..B).
struct EpisodeLog {
  std::shared_ptr<const WorldGraph> graph;
  double amplitude = 1.0;
  double r_sense = 0.1;
  int targets = 0;
  std::vector<Matrix<double>> node_vars;   ///< N x K per step
  std::vector<Matrix<double>> node_means;  ///< N x K per step
  std::vector<std::vector<Point>> target_positions;
  std::vector<std::vector<Observation>> observations;
  std::vector<std::vector<int>> agent_nodes;
  std::vector<RewardTerms> reward_terms;
};

struct StepOutcome {
  std::vector<Observation> observations;
  RewardTerms terms;
};

/// init_episode followed by the initial feature row (prior beliefs).
SimState reset_episode(const SimConfig& config);
SimState reset_episode(const SimConfig& config, std::shared_ptr<const WorldGraph> graph);

/// One decision step: move agents, move targets, sense, refresh beliefs and
/// features, and compute the reward terms.
StepOutcome advance_step(SimState& state, std::span<const int> actions);

void record_step(EpisodeLog& log, const SimState& state, const StepOutcome& outcome);

/// Runs `planner` until the budget is spent. `on_step` (optional) sees the
/// state after each step.
EpisodeLog run_episode(const SimConfig& config, Planner& planner,
                       const std::function<void(const SimState&, const StepOutcome&)>& on_step = {});

/// One JSON-lines record: {step, agent_nodes, target_positions, observations,
/// reward_terms}.
nlohmann::json step_trace_record(const SimState& state, const StepOutcome& outcome);

}  // namespace compass
