#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "compass/matrix.hpp"
#include "compass/rng.hpp"
#include "compass/simulator.hpp"

namespace compass {

/// Common interface for action selectors: one neighbor node per agent.
class Planner {
 public:
  virtual ~Planner() = default;
  virtual std::string_view name() const = 0;
  /// Called once per episode, after init_episode.
  virtual void reset(const SimState& state) = 0;
  virtual std::vector<int> select(const SimState& state) = 0;
};

/// Neighbor of `from` on a shortest path to `to`: minimizes
/// edge(from,u) + dist(u,to), ties to the lower id.
int next_hop(const WorldGraph& graph, int from, int to);

std::vector<int> random_step(const SimState& state, Rng& rng);

// -- coverage ---------------------------------------------------------------

std::vector<int> nearest_neighbor_tour(const WorldGraph& graph, int start = 0);
/// Closed-tour length under graph shortest-path distances.
double tour_length(const WorldGraph& graph, const std::vector<int>& tour);
/// 2-opt until no improving move or `max_passes` passes. Returns passes run.
int two_opt(const WorldGraph& graph, std::vector<int>& tour, int max_passes = 10);
/// Splits a tour into `parts` contiguous, non-empty segments of near-equal
/// path length.
std::vector<std::vector<int>> split_tour(const WorldGraph& graph, const std::vector<int>& tour,
                                         int parts);
/// Global tour (nearest neighbor from node 0 plus 2-opt) split among M agents.
std::vector<std::vector<int>> coverage_build_route(const WorldGraph& graph, int M);

/// Per-agent progress along a coverage segment. A route node counts as
/// visited once it has been within r_sense of its agent.
struct CoverageRoutes {
  std::vector<std::vector<int>> segments;
  std::vector<std::vector<std::uint8_t>> visited;
  std::vector<int> cursor;

  static CoverageRoutes start(const WorldGraph& graph, std::vector<std::vector<int>> segments,
                              const std::vector<int>& agent_nodes);
  /// Route node agent m is currently heading for.
  int target(int m) const;
};

std::vector<int> coverage_step(const SimState& state, CoverageRoutes& routes);

// -- auction ----------------------------------------------------------------

/// Greedy best-bid-first matching over an M x N bid matrix: repeatedly awards
/// the target with the highest remaining bid to its highest bidder (ties to
/// lower target id, then lower agent id). Returns the target per agent or -1.
std::vector<int> auction_assign(const Matrix<double>& bids);

/// Estimated location of each target: argmax of its current posterior mean
/// over nodes. Ties (e.g. a target never detected, mean 0 everywhere) go to
/// the higher posterior variance, then the lower id.
std::vector<int> estimated_target_nodes(const SimState& state);

std::vector<int> auction_step(const SimState& state, Rng& rng);

// -- greedy -----------------------------------------------------------------

inline constexpr double kGreedyClaimDiscount = 0.5;

/// Uncertainty a visit to v would address: sum over nodes u and targets j of
/// rho(u,v)^2 * var_j(u), with rho the spatial Matern correlation.
double footprint_score(const SimState& state, int v);

/// Agents in id order move to the neighbor with the highest footprint score
/// (ties to the lower id); a node already claimed this step scores half.
std::vector<int> greedy_step(const SimState& state);

/// Baseline planner by name: random, coverage, auction, greedy.
std::unique_ptr<Planner> make_baseline_planner(std::string_view name, std::uint64_t seed);

}  // namespace compass
