#include "compass/planners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "compass/errors.hpp"

namespace compass {

int next_hop(const WorldGraph& graph, int from, int to) {
  int best = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& nb : graph.neighbors(from)) {
    const double cost = nb.length + graph.distance(nb.node, to);
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best = nb.node;
    }
  }
  if (best < 0) throw ContractError("node " + std::to_string(from) + " has no neighbors");
  return best;
}

std::vector<int> random_step(const SimState& state, Rng& rng) {
  std::vector<int> actions;
  actions.reserve(state.agents.size());
  for (const auto& a : state.agents) {
    const auto& nbrs = state.graph->neighbors(a.node);
    actions.push_back(nbrs[uniform_index(rng, static_cast<int>(nbrs.size()))].node);
  }
  return actions;
}

// -- coverage ---------------------------------------------------------------

std::vector<int> nearest_neighbor_tour(const WorldGraph& graph, int start) {
  const int n = graph.size();
  std::vector<std::uint8_t> used(n, 0);
  std::vector<int> tour{start};
  used[start] = 1;
  for (int step = 1; step < n; ++step) {
    const int cur = tour.back();
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int v = 0; v < n; ++v) {
      if (!used[v] && graph.distance(cur, v) < bd) {
        bd = graph.distance(cur, v);
        best = v;
      }
    }
    used[best] = 1;
    tour.push_back(best);
  }
  return tour;
}

double tour_length(const WorldGraph& graph, const std::vector<int>& tour) {
  if (tour.size() < 2) return 0.0;
  double len = 0;
  for (std::size_t i = 0; i < tour.size(); ++i) {
    len += graph.distance(tour[i], tour[(i + 1) % tour.size()]);
  }
  return len;
}

int two_opt(const WorldGraph& graph, std::vector<int>& tour, int max_passes) {
  const int n = static_cast<int>(tour.size());
  if (n < 4) return 0;
  int passes = 0;
  bool improved = true;
  while (improved && passes < max_passes) {
    improved = false;
    ++passes;
    for (int i = 0; i < n - 1; ++i) {
      for (int j = i + 2; j < n; ++j) {
        if (i == 0 && j == n - 1) continue;  // same pair of edges
        const int a = tour[i], b = tour[i + 1], c = tour[j], d = tour[(j + 1) % n];
        const double delta = graph.distance(a, c) + graph.distance(b, d) - graph.distance(a, b) -
                             graph.distance(c, d);
        if (delta < -1e-12) {
          std::reverse(tour.begin() + i + 1, tour.begin() + j + 1);
          improved = true;
        }
      }
    }
  }
  return passes;
}

std::vector<std::vector<int>> split_tour(const WorldGraph& graph, const std::vector<int>& tour,
                                         int parts) {
  const int n = static_cast<int>(tour.size());
  if (parts < 1 || parts > n) throw ConfigError("M: cannot split a tour of " + std::to_string(n) +
                                                " nodes into " + std::to_string(parts) + " parts");
  std::vector<double> cum(n, 0.0);
  for (int i = 1; i < n; ++i) cum[i] = cum[i - 1] + graph.distance(tour[i - 1], tour[i]);
  const double total = cum.back();

  // Segment m starts at cuts[m]; each cut lands on the node whose cumulative
  // length is closest to m/parts of the path, kept strictly increasing.
  std::vector<int> cuts{0};
  for (int m = 1; m < parts; ++m) {
    const double goal = total * m / parts;
    const int lo = cuts.back() + 1;
    const int hi = n - (parts - m);
    int best = lo;
    for (int i = lo; i <= hi; ++i) {
      if (std::abs(cum[i] - goal) < std::abs(cum[best] - goal)) best = i;
    }
    cuts.push_back(best);
  }
  cuts.push_back(n);
  std::vector<std::vector<int>> segments(parts);
  for (int m = 0; m < parts; ++m) {
    segments[m].assign(tour.begin() + cuts[m], tour.begin() + cuts[m + 1]);
  }
  return segments;
}

std::vector<std::vector<int>> coverage_build_route(const WorldGraph& graph, int M) {
  std::vector<int> tour = nearest_neighbor_tour(graph, 0);
  two_opt(graph, tour, 10);
  // Rotate so the tour still starts at node 0 after 2-opt reversals.
  std::rotate(tour.begin(), std::find(tour.begin(), tour.end(), 0), tour.end());
  return split_tour(graph, tour, M);
}

CoverageRoutes CoverageRoutes::start(const WorldGraph& graph,
                                     std::vector<std::vector<int>> segments,
                                     const std::vector<int>& agent_nodes) {
  CoverageRoutes r;
  r.segments = std::move(segments);
  r.visited.resize(r.segments.size());
  r.cursor.assign(r.segments.size(), 0);
  for (std::size_t m = 0; m < r.segments.size(); ++m) {
    r.visited[m].assign(r.segments[m].size(), 0);
    if (m < agent_nodes.size()) {
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < r.segments[m].size(); ++i) {
        const double d = graph.distance(agent_nodes[m], r.segments[m][i]);
        if (d < bd) {
          bd = d;
          r.cursor[m] = static_cast<int>(i);
        }
      }
    }
  }
  return r;
}

int CoverageRoutes::target(int m) const {
  const auto& seg = segments[m];
  const int n = static_cast<int>(seg.size());
  for (int k = 0; k < n; ++k) {
    const int i = (cursor[m] + k) % n;
    if (!visited[m][i]) return seg[i];
  }
  return seg.front();
}

std::vector<int> coverage_step(const SimState& state, CoverageRoutes& routes) {
  const int M = static_cast<int>(state.agents.size());
  if (static_cast<int>(routes.segments.size()) != M) {
    throw ContractError("coverage routes were built for a different team size");
  }
  std::vector<int> actions(M);
  for (int m = 0; m < M; ++m) {
    const int here = state.agents[m].node;
    auto& seg = routes.segments[m];
    auto& vis = routes.visited[m];
    const Point here_p = state.graph->node(here);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      if (seg[i] == here || distance(state.graph->node(seg[i]), here_p) <= state.config.r_sense) {
        vis[i] = 1;
      }
    }
    if (std::all_of(vis.begin(), vis.end(), [](std::uint8_t v) { return v != 0; })) {
      std::fill(vis.begin(), vis.end(), 0);
      routes.cursor[m] = 0;
    }
    actions[m] = next_hop(*state.graph, here, routes.target(m));
  }
  return actions;
}

// -- auction ----------------------------------------------------------------

std::vector<int> auction_assign(const Matrix<double>& bids) {
  const int M = bids.rows();
  const int N = bids.cols();
  std::vector<int> assignment(M, -1);
  std::vector<std::uint8_t> agent_free(M, 1), target_free(N, 1);
  for (int round = 0; round < std::min(M, N); ++round) {
    int best_t = -1, best_a = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < N; ++j) {
      if (!target_free[j]) continue;
      for (int m = 0; m < M; ++m) {
        if (agent_free[m] && bids(m, j) > best) {
          best = bids(m, j);
          best_t = j;
          best_a = m;
        }
      }
    }
    if (best_t < 0) break;
    assignment[best_a] = best_t;
    agent_free[best_a] = 0;
    target_free[best_t] = 0;
  }
  return assignment;
}

std::vector<int> estimated_target_nodes(const SimState& state) {
  const int N = state.node_mean.rows();
  const int K = state.node_mean.cols();
  std::vector<int> est(N, 0);
  for (int j = 0; j < N; ++j) {
    int best = 0;
    for (int v = 1; v < K; ++v) {
      const double mu = state.node_mean(j, v), mb = state.node_mean(j, best);
      if (mu > mb || (mu == mb && state.node_var(j, v) > state.node_var(j, best))) best = v;
    }
    est[j] = best;
  }
  return est;
}

std::vector<int> auction_step(const SimState& state, Rng& rng) {
  const int M = static_cast<int>(state.agents.size());
  const int N = state.node_mean.rows();
  const std::vector<int> est = estimated_target_nodes(state);
  Matrix<double> bids(M, N);
  for (int j = 0; j < N; ++j) {
    const double sigma = std::sqrt(state.node_var(j, est[j]));
    for (int m = 0; m < M; ++m) {
      bids(m, j) = sigma / (1.0 + state.graph->distance(state.agents[m].node, est[j]));
    }
  }
  const std::vector<int> assignment = auction_assign(bids);
  const std::vector<int> fallback = random_step(state, rng);
  std::vector<int> actions(M);
  for (int m = 0; m < M; ++m) {
    const int j = assignment[m];
    actions[m] = j >= 0 ? next_hop(*state.graph, state.agents[m].node, est[j]) : fallback[m];
  }
  return actions;
}

// -- greedy -----------------------------------------------------------------

double footprint_score(const SimState& state, int v) {
  const WorldGraph& g = *state.graph;
  const double ell = state.config.kernel.spatial_lengthscale;
  const Point pv = g.node(v);
  double score = 0;
  for (int u = 0; u < g.size(); ++u) {
    const double rho = matern52(distance(pv, g.node(u)) / ell);
    double var = 0;
    for (int j = 0; j < state.node_var.rows(); ++j) var += state.node_var(j, u);
    score += rho * rho * var;
  }
  return score;
}

std::vector<int> greedy_step(const SimState& state) {
  std::vector<std::uint8_t> claimed(state.graph->size(), 0);
  std::vector<int> actions;
  actions.reserve(state.agents.size());
  for (const auto& a : state.agents) {
    int best = -1;
    double bs = -std::numeric_limits<double>::infinity();
    for (const auto& nb : state.graph->neighbors(a.node)) {
      const double s =
          footprint_score(state, nb.node) * (claimed[nb.node] ? kGreedyClaimDiscount : 1.0);
      if (s > bs) {
        bs = s;
        best = nb.node;
      }
    }
    claimed[best] = 1;
    actions.push_back(best);
  }
  return actions;
}

// -- planner objects --------------------------------------------------------

namespace {

class RandomPlanner final : public Planner {
 public:
  explicit RandomPlanner(std::uint64_t seed) : seed_(seed) {}
  std::string_view name() const override { return "random"; }
  void reset(const SimState& state) override { rng_.seed(stream_seed(seed_, state.config.seed)); }
  std::vector<int> select(const SimState& state) override { return random_step(state, rng_); }

 private:
  std::uint64_t seed_;
  Rng rng_;
};

class CoveragePlanner final : public Planner {
 public:
  std::string_view name() const override { return "coverage"; }
  void reset(const SimState& state) override {
    routes_ = CoverageRoutes::start(*state.graph,
                                    coverage_build_route(*state.graph, state.config.M),
                                    state.agent_nodes());
  }
  std::vector<int> select(const SimState& state) override { return coverage_step(state, routes_); }

 private:
  CoverageRoutes routes_;
};

class AuctionPlanner final : public Planner {
 public:
  explicit AuctionPlanner(std::uint64_t seed) : seed_(seed) {}
  std::string_view name() const override { return "auction"; }
  void reset(const SimState& state) override { rng_.seed(stream_seed(seed_, state.config.seed)); }
  std::vector<int> select(const SimState& state) override { return auction_step(state, rng_); }

 private:
  std::uint64_t seed_;
  Rng rng_;
};

class GreedyPlanner final : public Planner {
 public:
  std::string_view name() const override { return "greedy"; }
  void reset(const SimState&) override {}
  std::vector<int> select(const SimState& state) override { return greedy_step(state); }
};

}  // namespace

std::unique_ptr<Planner> make_baseline_planner(std::string_view name, std::uint64_t seed) {
  if (name == "random") return std::make_unique<RandomPlanner>(seed);
  if (name == "coverage") return std::make_unique<CoveragePlanner>();
  if (name == "auction") return std::make_unique<AuctionPlanner>(seed);
  if (name == "greedy") return std::make_unique<GreedyPlanner>();
  throw ConfigError("planner: unknown planner '" + std::string(name) + "'");
}

}  // namespace compass
