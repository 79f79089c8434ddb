#include "compass/world_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <set>

#include <Eigen/Eigenvalues>

#include "compass/errors.hpp"
#include "compass/rng.hpp"

namespace compass {
namespace {

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

}  // namespace

std::vector<Point> sample_nodes(int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("K must be at least 2, got " + std::to_string(K));
  Rng rng(seed);
  std::vector<Point> pts(K);
  for (auto& p : pts) {
    p.x = uniform01(rng);
    p.y = uniform01(rng);
  }
  return pts;
}

std::vector<Edge> knn_edges(std::span<const Point> points, int k) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || k >= n) {
    throw ConfigError("k_nn must satisfy 1 <= k < K (k=" + std::to_string(k) +
                      ", K=" + std::to_string(n) + ")");
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (points[i] == points[j]) {
        throw InputError("duplicate points " + std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }

  std::set<Edge> edges;
  std::vector<std::pair<double, int>> cand;
  for (int u = 0; u < n; ++u) {
    cand.clear();
    for (int v = 0; v < n; ++v) {
      if (v != u) cand.emplace_back(distance(points[u], points[v]), v);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int i = 0; i < k; ++i) {
      const int v = cand[i].second;
      edges.emplace(std::min(u, v), std::max(u, v));
    }
  }

  DisjointSets ds(n);
  for (const auto& [u, v] : edges) ds.unite(u, v);
  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    Edge bridge{-1, -1};
    for (int u = 0; u < n; ++u) {
      for (int v = u + 1; v < n; ++v) {
        if (ds.find(u) == ds.find(v)) continue;
        const double d = distance(points[u], points[v]);
        if (d < best) {
          best = d;
          bridge = {u, v};
        }
      }
    }
    if (bridge.first < 0) break;
    edges.insert(bridge);
    ds.unite(bridge.first, bridge.second);
  }
  return {edges.begin(), edges.end()};
}

std::vector<double> all_pairs_shortest_paths(const Adjacency& adjacency) {
  const int n = static_cast<int>(adjacency.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<std::size_t>(n) * n, inf);
  using Item = std::pair<double, int>;
  for (int s = 0; s < n; ++s) {
    double* d = dist.data() + static_cast<std::size_t>(s) * n;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    d[s] = 0;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      const auto [du, u] = pq.top();
      pq.pop();
      if (du > d[u]) continue;
      for (const auto& nb : adjacency[u]) {
        const double alt = du + nb.length;
        if (alt < d[nb.node]) {
          d[nb.node] = alt;
          pq.emplace(alt, nb.node);
        }
      }
    }
    for (int v = 0; v < n; ++v) {
      if (!std::isfinite(d[v])) {
        throw InputError("graph is disconnected: node " + std::to_string(v) +
                         " unreachable from " + std::to_string(s));
      }
    }
  }
  // Dijkstra from u and from v can differ in the last ulp; keep it symmetric.
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      const double m = std::min(dist[static_cast<std::size_t>(u) * n + v],
                                dist[static_cast<std::size_t>(v) * n + u]);
      dist[static_cast<std::size_t>(u) * n + v] = m;
      dist[static_cast<std::size_t>(v) * n + u] = m;
    }
  }
  return dist;
}

Matrix<double> normalized_laplacian(const Adjacency& adjacency) {
  const int n = static_cast<int>(adjacency.size());
  Matrix<double> lap(n, n);
  for (int u = 0; u < n; ++u) {
    lap(u, u) = adjacency[u].empty() ? 0.0 : 1.0;
    for (const auto& nb : adjacency[u]) {
      const double du = static_cast<double>(adjacency[u].size());
      const double dv = static_cast<double>(adjacency[nb.node].size());
      lap(u, nb.node) -= 1.0 / std::sqrt(du * dv);
    }
  }
  return lap;
}

LaplacianPe laplacian_positional_encoding(const Adjacency& adjacency, int d_pe) {
  const int n = static_cast<int>(adjacency.size());
  if (d_pe < 1 || d_pe >= n) {
    throw ConfigError("d_pe must satisfy 1 <= d_pe < K (d_pe=" + std::to_string(d_pe) +
                      ", K=" + std::to_string(n) + ")");
  }
  const Matrix<double> lap = normalized_laplacian(adjacency);
  Eigen::MatrixXd dense(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) dense(i, j) = lap(i, j);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
  if (solver.info() != Eigen::Success) throw NumericalError("Laplacian eigendecomposition failed");

  LaplacianPe pe{Matrix<double>(n, d_pe), {}};
  // Connected graph: exactly one zero eigenvalue, at index 0 after sorting.
  for (int c = 0; c < d_pe; ++c) {
    const int idx = c + 1;
    Eigen::VectorXd v = solver.eigenvectors().col(idx);
    v.normalize();
    int arg = 0;
    for (int i = 1; i < n; ++i) {
      if (std::abs(v(i)) > std::abs(v(arg)) + 1e-12) arg = i;
    }
    if (v(arg) < 0) v = -v;
    for (int i = 0; i < n; ++i) pe.vectors(i, c) = v(i);
    pe.eigenvalues.push_back(solver.eigenvalues()(idx));
  }
  return pe;
}

WorldGraph WorldGraph::from_edges(std::vector<Point> nodes, std::span<const Edge> edges, int d_pe,
                                  std::uint64_t seed, int k) {
  WorldGraph g;
  const int n = static_cast<int>(nodes.size());
  g.adjacency_.assign(n, {});
  double total = 0;
  std::set<Edge> seen;
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n || u == v) {
      throw InputError("invalid edge (" + std::to_string(u) + ", " + std::to_string(v) + ")");
    }
    if (u > v) std::swap(u, v);
    if (!seen.emplace(u, v).second) continue;
    const double len = compass::distance(nodes[u], nodes[v]);
    g.adjacency_[u].push_back({v, len});
    g.adjacency_[v].push_back({u, len});
    total += len;
  }
  for (auto& list : g.adjacency_) {
    std::sort(list.begin(), list.end(),
              [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; });
  }
  g.mean_edge_length_ = seen.empty() ? 0.0 : total / static_cast<double>(seen.size());
  g.nodes_ = std::move(nodes);
  g.dist_ = all_pairs_shortest_paths(g.adjacency_);
  g.pe_ = laplacian_positional_encoding(g.adjacency_, d_pe);
  g.seed_ = seed;
  g.k_ = k;
  return g;
}

std::vector<int> WorldGraph::neighbor_ids(int v) const {
  std::vector<int> ids;
  ids.reserve(adjacency_[v].size());
  for (const auto& nb : adjacency_[v]) ids.push_back(nb.node);
  return ids;
}

bool WorldGraph::adjacent(int u, int v) const {
  if (u < 0 || u >= size()) return false;
  const auto& list = adjacency_[u];
  return std::binary_search(list.begin(), list.end(), Neighbor{v, 0.0},
                            [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; });
}

double WorldGraph::edge_length(int u, int v) const {
  for (const auto& nb : adjacency_.at(u)) {
    if (nb.node == v) return nb.length;
  }
  throw ContractError("nodes " + std::to_string(u) + " and " + std::to_string(v) +
                      " are not adjacent");
}

std::vector<Edge> WorldGraph::edges() const {
  std::vector<Edge> out;
  for (int u = 0; u < size(); ++u) {
    for (const auto& nb : adjacency_[u]) {
      if (u < nb.node) out.emplace_back(u, nb.node);
    }
  }
  return out;
}

int WorldGraph::nearest_node(const Point& p) const {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (int v = 0; v < size(); ++v) {
    const double d = compass::distance(p, nodes_[v]);
    if (d < bd) {
      bd = d;
      best = v;
    }
  }
  return best;
}

WorldGraph build_knn_graph(std::vector<Point> points, int k, int d_pe, std::uint64_t seed) {
  const auto edges = knn_edges(points, k);
  return WorldGraph::from_edges(std::move(points), edges, d_pe, seed, k);
}

nlohmann::json graph_to_json(const WorldGraph& graph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& p : graph.nodes()) nodes.push_back({p.x, p.y});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : graph.edges()) edges.push_back({u, v});
  return {{"nodes", nodes}, {"edges", edges}, {"seed", graph.seed()}, {"k", graph.k()}};
}

WorldGraph graph_from_json(const nlohmann::json& j, int d_pe) {
  try {
    std::vector<Point> nodes;
    for (const auto& p : j.at("nodes")) nodes.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    return WorldGraph::from_edges(std::move(nodes), edges, d_pe, j.value("seed", std::uint64_t{0}),
                                  j.value("k", 0));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed graph JSON: ") + e.what());
  }
}

}  // namespace compass
