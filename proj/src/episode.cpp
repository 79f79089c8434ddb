#include "compass/episode.hpp"

namespace compass {

SimState reset_episode(const SimConfig& config) {
  SimState s = init_episode(config);
  update_node_history(s);
  return s;
}

SimState reset_episode(const SimConfig& config, std::shared_ptr<const WorldGraph> graph) {
  SimState s = init_episode(config, std::move(graph));
  update_node_history(s);
  return s;
}

StepOutcome advance_step(SimState& state, std::span<const int> actions) {
  apply_actions(state, actions);
  step_targets(state);
  StepOutcome out;
  out.observations = sense(state);
  refresh_beliefs(state);
  const Matrix<double> prev_vars = state.node_var;
  update_node_history(state);
  const double amp = state.config.kernel.amplitude;
  out.terms.information_gain = information_gain(prev_vars, state.node_var, amp);
  out.terms.coverage_penalty = coverage_penalty(out.observations, prev_vars, amp);
  out.terms.path_penalty = path_penalty(state.agents);
  return out;
}

void record_step(EpisodeLog& log, const SimState& state, const StepOutcome& outcome) {
  log.node_vars.push_back(state.node_var);
  log.node_means.push_back(state.node_mean);
  std::vector<Point> pos;
  pos.reserve(state.targets.size());
  for (const auto& t : state.targets) pos.push_back(t.position);
  log.target_positions.push_back(std::move(pos));
  log.observations.push_back(outcome.observations);
  log.agent_nodes.push_back(state.agent_nodes());
  log.reward_terms.push_back(outcome.terms);
}

EpisodeLog run_episode(const SimConfig& config, Planner& planner,
                       const std::function<void(const SimState&, const StepOutcome&)>& on_step) {
  SimState state = reset_episode(config);
  planner.reset(state);
  EpisodeLog log;
  log.graph = state.graph;
  log.amplitude = config.kernel.amplitude;
  log.r_sense = config.r_sense;
  log.targets = config.N;
  while (!episode_done(state)) {
    const std::vector<int> actions = planner.select(state);
    const StepOutcome outcome = advance_step(state, actions);
    record_step(log, state, outcome);
    if (on_step) on_step(state, outcome);
  }
  return log;
}

nlohmann::json step_trace_record(const SimState& state, const StepOutcome& outcome) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : state.targets) targets.push_back({t.position.x, t.position.y});
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : outcome.observations) {
    obs.push_back({{"agent", o.agent}, {"node", o.node}, {"target", o.target_id}, {"y", o.y}});
  }
  return {{"step", state.step},
          {"agent_nodes", state.agent_nodes()},
          {"target_positions", targets},
          {"observations", obs},
          {"reward_terms",
           {{"information_gain", outcome.terms.information_gain},
            {"coverage_penalty", outcome.terms.coverage_penalty},
            {"path_penalty", outcome.terms.path_penalty}}}};
}

}  // namespace compass
