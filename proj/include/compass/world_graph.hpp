#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "compass/matrix.hpp"

namespace compass {

struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

using Edge = std::pair<int, int>;

struct Neighbor {
  int node;
  double length;
};

/// Weighted adjacency list; each list sorted by neighbor id.
using Adjacency = std::vector<std::vector<Neighbor>>;

struct LaplacianPe {
  Matrix<double> vectors;            ///< K x d_pe, unit columns
  std::vector<double> eigenvalues;   ///< ascending, all nonzero
};

/// Graph discretization of the unit-square workspace. Immutable once built.
class WorldGraph {
 public:
  /// Builds from explicit nodes and undirected edges; computes edge lengths,
  /// all-pairs shortest paths and the Laplacian encoding. Throws InputError
  /// when the edge set leaves the graph disconnected.
  static WorldGraph from_edges(std::vector<Point> nodes, std::span<const Edge> edges, int d_pe,
                               std::uint64_t seed = 0, int k = 0);

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<Point>& nodes() const { return nodes_; }
  const Point& node(int v) const { return nodes_[v]; }
  const std::vector<Neighbor>& neighbors(int v) const { return adjacency_[v]; }
  std::vector<int> neighbor_ids(int v) const;
  bool adjacent(int u, int v) const;
  /// Length of edge (u, v); throws ContractError when not adjacent.
  double edge_length(int u, int v) const;
  const Adjacency& adjacency() const { return adjacency_; }
  std::vector<Edge> edges() const;

  double distance(int u, int v) const { return dist_[static_cast<std::size_t>(u) * size() + v]; }
  const std::vector<double>& dist_matrix() const { return dist_; }
  const LaplacianPe& lap_pe() const { return pe_; }
  double mean_edge_length() const { return mean_edge_length_; }
  std::uint64_t seed() const { return seed_; }
  int k() const { return k_; }

  /// Node closest to `p` (ties to lower id).
  int nearest_node(const Point& p) const;

 private:
  std::vector<Point> nodes_;
  Adjacency adjacency_;
  std::vector<double> dist_;
  LaplacianPe pe_;
  double mean_edge_length_ = 0;
  std::uint64_t seed_ = 0;
  int k_ = 0;
};

/// K points uniform in [0,1]^2.
std::vector<Point> sample_nodes(int K, std::uint64_t seed);

/// Symmetrized k-NN edge set (u < v in each pair), repaired to a single
/// component by repeatedly adding the shortest inter-component edge.
std::vector<Edge> knn_edges(std::span<const Point> points, int k);

WorldGraph build_knn_graph(std::vector<Point> points, int k, int d_pe = 8, std::uint64_t seed = 0);

/// Dijkstra from every node. Throws InputError if some pair is unreachable.
std::vector<double> all_pairs_shortest_paths(const Adjacency& adjacency);

/// Symmetric-normalized Laplacian I - D^-1/2 A D^-1/2 (unweighted adjacency).
Matrix<double> normalized_laplacian(const Adjacency& adjacency);

/// Eigenvectors of the d_pe smallest nonzero eigenvalues, sign fixed so the
/// largest-magnitude entry of each column is positive.
LaplacianPe laplacian_positional_encoding(const Adjacency& adjacency, int d_pe);

nlohmann::json graph_to_json(const WorldGraph& graph);
WorldGraph graph_from_json(const nlohmann::json& j, int d_pe);

}  // namespace compass
