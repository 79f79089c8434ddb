#pragma once

#include <cstddef>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "compass/world_graph.hpp"

namespace compass {

/// Product Matern-5/2 hyperparameters. Time is measured in decision steps.
struct KernelParams {
  double amplitude = 1.0;             ///< sigma_f^2
  double spatial_lengthscale = 0.2;   ///< workspace units
  double temporal_lengthscale = 5.0;  ///< decision steps
  double noise = 0.01;                ///< sigma_n^2

  void validate() const;
};

struct SpaceTime {
  Point p;
  double t = 0;
};

struct Observation {
  Point p;
  int t = 0;
  int y = 0;  ///< binary detection
  int target_id = 0;
  int node = -1;   ///< node occupied by the observing agent
  int agent = -1;
};

/// Matern nu=5/2 profile: (1 + sqrt5 r + 5r^2/3) exp(-sqrt5 r).
double matern52(double r);

/// sigma_f^2 * m52(|dp|/l_s) * m52(|dt|/l_t)
double matern_kernel(const SpaceTime& a, const SpaceTime& b, const KernelParams& params);

struct Posterior {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// One independent GP per target over binary detections, zero prior mean.
/// The window is bounded by a size cap and a time horizon; the Cholesky factor
/// of (K_XX + sigma_n^2 I) is cached and rebuilt from scratch on change.
class TargetBelief {
 public:
  TargetBelief(int target_id, KernelParams params, std::size_t max_window = 200,
               int time_horizon = 50);

  int target_id() const { return target_id_; }
  const KernelParams& params() const { return params_; }
  const std::deque<Observation>& window() const { return window_; }
  std::size_t max_window() const { return max_window_; }
  bool cache_valid() const { return cache_.has_value(); }

  /// Inserts in time order; evicts the oldest observation beyond the size cap.
  void add_observation(const Observation& obs);

  /// Drops observations with t < now - time_horizon, then rebuilds the factor.
  void prune_and_refresh(int now);

  /// Builds the factor if the cache is stale.
  void refresh();

  /// Posterior mean and variance at each query. Uses the cached factor when
  /// valid, otherwise factorizes into a temporary.
  Posterior posterior(std::span<const SpaceTime> queries) const;

 private:
  struct Factor {
    std::vector<double> chol;   ///< n x n lower-triangular, row-major
    std::vector<double> alpha;  ///< (K + sigma_n^2 I)^-1 y
    std::size_t n = 0;
  };

  Factor factorize() const;

  int target_id_;
  KernelParams params_;
  std::size_t max_window_;
  int time_horizon_;
  std::deque<Observation> window_;
  std::optional<Factor> cache_;
};

/// Rows `node_id,mean,variance` for one target at one step.
void write_belief_snapshot_csv(std::ostream& out, const Posterior& post);

}  // namespace compass
