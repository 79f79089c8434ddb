#include "compass/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "compass/errors.hpp"

namespace compass {
namespace {

Point random_point(Rng& rng) {
  const double x = uniform01(rng);
  const double y = uniform01(rng);
  return {x, y};
}

void require(bool cond, const char* key, const std::string& what) {
  if (!cond) throw ConfigError(std::string(key) + ": " + what);
}

}  // namespace

void SimConfig::validate() const {
  require(K >= 2, "K", "must be >= 2");
  require(k_nn >= 1 && k_nn < K, "k_nn", "must satisfy 1 <= k_nn < K");
  require(M >= 1, "M", "must be >= 1");
  require(M <= K, "M", "must not exceed K");
  require(N >= 1, "N", "must be >= 1");
  require(r_sense > 0 && std::isfinite(r_sense), "r_sense", "must be > 0");
  require(speed_factor >= 0 && std::isfinite(speed_factor), "speed_factor", "must be >= 0");
  require(B >= 1, "B", "must be >= 1");
  require(history_slots >= 1, "H", "must be >= 1");
  require(stride >= 1, "stride", "must be >= 1");
  require(delta >= 0, "delta", "must be >= 0");
  require(d_pe >= 1 && d_pe < K, "d_pe", "must satisfy 1 <= d_pe < K");
  require(rollout_horizon >= 1, "T", "must be >= 1");
  require(max_window >= 1, "W_max", "must be >= 1");
  require(time_horizon >= 0, "T_horizon", "must be >= 0");
  require(heading_noise >= 0, "heading_noise", "must be >= 0");
  require(waypoint_switch_prob >= 0 && waypoint_switch_prob <= 1, "waypoint_switch_prob",
          "must be in [0, 1]");
  kernel.validate();
}

NodeFeatureHistory::NodeFeatureHistory(int nodes, int targets, int capacity)
    : nodes_(nodes), targets_(targets), capacity_(capacity) {}

void NodeFeatureHistory::push(Matrix<double> row) {
  if (row.rows() != nodes_ || row.cols() != width()) {
    throw InputError("feature row has shape " + std::to_string(row.rows()) + "x" +
                     std::to_string(row.cols()));
  }
  rows_.push_back(std::move(row));
  while (static_cast<int>(rows_.size()) > capacity_) rows_.pop_front();
}

PooledFeatures NodeFeatureHistory::pooled(int slots, int stride) const {
  PooledFeatures out;
  out.nodes = nodes_;
  out.slots = slots;
  out.width = width();
  out.data.assign(static_cast<std::size_t>(nodes_) * slots * out.width, 0.0);
  out.valid.assign(slots, 0);
  const int n = length();
  for (int s = 0; s < slots; ++s) {
    const int hi = n - (slots - 1 - s) * stride;
    const int lo = std::max(0, hi - stride);
    if (hi <= 0 || lo >= hi) continue;
    out.valid[s] = 1;
    const double inv = 1.0 / (hi - lo);
    for (int r = lo; r < hi; ++r) {
      const Matrix<double>& row = rows_[r];
      for (int v = 0; v < nodes_; ++v) {
        double* dst = out.data.data() + (static_cast<std::size_t>(v) * slots + s) * out.width;
        simd::axpy(inv, row.row_ptr(v), dst, static_cast<std::size_t>(out.width));
      }
    }
  }
  return out;
}

std::vector<int> SimState::agent_nodes() const {
  std::vector<int> out;
  out.reserve(agents.size());
  for (const auto& a : agents) out.push_back(a.node);
  return out;
}

std::vector<std::uint8_t> SimState::presence() const {
  std::vector<std::uint8_t> p(graph->size(), 0);
  for (const auto& a : agents) p[a.node] = 1;
  return p;
}

std::vector<double> SimState::distance_to_nearest_agent() const {
  std::vector<double> d(graph->size(), std::numeric_limits<double>::infinity());
  for (int v = 0; v < graph->size(); ++v) {
    for (const auto& a : agents) d[v] = std::min(d[v], graph->distance(v, a.node));
  }
  return d;
}

SimState init_episode(const SimConfig& config) {
  config.validate();
  auto graph = std::make_shared<const WorldGraph>(build_knn_graph(
      sample_nodes(config.K, stream_seed(config.seed, 0)), config.k_nn, config.d_pe, config.seed));
  return init_episode(config, std::move(graph));
}

SimState init_episode(const SimConfig& config, std::shared_ptr<const WorldGraph> graph) {
  config.validate();
  if (!graph || graph->size() != config.K) throw ConfigError("K: graph size does not match config");
  SimState s;
  s.config = config;
  s.graph = std::move(graph);
  s.rng.seed(stream_seed(config.seed, 1));

  s.targets.resize(config.N);
  for (auto& t : s.targets) {
    t.position = random_point(s.rng);
    t.waypoint = random_point(s.rng);
  }

  std::vector<int> perm(config.K);
  std::iota(perm.begin(), perm.end(), 0);
  for (int m = 0; m < config.M; ++m) {
    const int j = m + uniform_index(s.rng, config.K - m);
    std::swap(perm[m], perm[j]);
  }
  s.agents.resize(config.M);
  for (int m = 0; m < config.M; ++m) {
    s.agents[m].node = perm[m];
    s.agents[m].trajectory = {perm[m]};
  }

  s.beliefs.reserve(config.N);
  for (int j = 0; j < config.N; ++j) {
    s.beliefs.emplace_back(j, config.kernel, static_cast<std::size_t>(config.max_window),
                           config.time_horizon);
  }
  s.history = NodeFeatureHistory(config.K, config.N, config.raw_history());
  s.node_mean = Matrix<double>(config.N, config.K, 0.0);
  s.node_var = Matrix<double>(config.N, config.K, config.kernel.amplitude);
  return s;
}

void step_targets(SimState& state) {
  const double step_len = state.config.speed_factor * state.graph->mean_edge_length();
  for (auto& t : state.targets) {
    const double noise = normal(state.rng, 1.0) * state.config.heading_noise;
    const double redraw_roll = uniform01(state.rng);
    const double heading =
        std::atan2(t.waypoint.y - t.position.y, t.waypoint.x - t.position.x) + noise;
    Point next{t.position.x + step_len * std::cos(heading),
               t.position.y + step_len * std::sin(heading)};
    bool clamped = false;
    if (next.x < 0.0 || next.x > 1.0 || next.y < 0.0 || next.y > 1.0) {
      next.x = std::clamp(next.x, 0.0, 1.0);
      next.y = std::clamp(next.y, 0.0, 1.0);
      clamped = true;
    }
    if (step_len > 0.0) t.position = next;
    const bool arrived = distance(t.position, t.waypoint) <= step_len;
    if (arrived || clamped || redraw_roll < state.config.waypoint_switch_prob) {
      t.waypoint = random_point(state.rng);
    }
  }
}

std::vector<Observation> sense(SimState& state) {
  std::vector<Observation> obs;
  obs.reserve(state.agents.size() * state.targets.size());
  for (int m = 0; m < static_cast<int>(state.agents.size()); ++m) {
    const int v = state.agents[m].node;
    const Point p = state.graph->node(v);
    for (int j = 0; j < static_cast<int>(state.targets.size()); ++j) {
      const int y = distance(state.targets[j].position, p) <= state.config.r_sense ? 1 : 0;
      obs.push_back({p, state.step, y, j, v, m});
    }
  }
  for (const auto& o : obs) state.beliefs[o.target_id].add_observation(o);
  state.last_observations = obs;
  return obs;
}

void apply_actions(SimState& state, std::span<const int> actions) {
  if (actions.size() != state.agents.size()) {
    throw ContractError("expected " + std::to_string(state.agents.size()) + " actions, got " +
                        std::to_string(actions.size()));
  }
  for (std::size_t m = 0; m < actions.size(); ++m) {
    if (!state.graph->adjacent(state.agents[m].node, actions[m])) {
      throw ContractError("agent " + std::to_string(m) + " at node " +
                          std::to_string(state.agents[m].node) + " cannot move to node " +
                          std::to_string(actions[m]));
    }
  }
  for (std::size_t m = 0; m < actions.size(); ++m) {
    auto& a = state.agents[m];
    a.distance_traveled_this_step = state.graph->edge_length(a.node, actions[m]);
    a.node = actions[m];
    a.trajectory.push_back(a.node);
  }
  ++state.step;
  ++state.actions_taken;
}

void refresh_beliefs(SimState& state) {
  for (auto& b : state.beliefs) b.prune_and_refresh(state.step);
}

void update_node_history(SimState& state) {
  const int K = state.graph->size();
  const int N = static_cast<int>(state.beliefs.size());
  std::vector<SpaceTime> queries;
  queries.reserve(2 * K);
  for (int v = 0; v < K; ++v) queries.push_back({state.graph->node(v), double(state.step)});
  for (int v = 0; v < K; ++v) {
    queries.push_back({state.graph->node(v), double(state.step + state.config.delta)});
  }

  Matrix<double> row(K, state.history.width());
  for (int j = 0; j < N; ++j) {
    auto& belief = state.beliefs[j];
    belief.refresh();
    const Posterior post = belief.posterior(queries);
    for (int v = 0; v < K; ++v) {
      row(v, 2 * j) = post.mean[v];
      row(v, 2 * j + 1) = post.variance[v];
      row(v, 2 * N + 2 * j) = post.mean[K + v];
      row(v, 2 * N + 2 * j + 1) = post.variance[K + v];
      state.node_mean(j, v) = post.mean[v];
      state.node_var(j, v) = post.variance[v];
    }
  }
  const auto presence = state.presence();
  for (int v = 0; v < K; ++v) {
    row(v, 4 * N) = presence[v];
    row(v, 4 * N + 1) = state.graph->node(v).x;
    row(v, 4 * N + 2) = state.graph->node(v).y;
  }
  state.history.push(std::move(row));
}

bool episode_done(const SimState& state) {
  if (state.config.mode == EpisodeMode::training) return state.step >= state.config.rollout_horizon;
  return state.actions_taken >= state.config.B;
}

}  // namespace compass
