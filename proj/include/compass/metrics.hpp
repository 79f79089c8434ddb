#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "compass/episode.hpp"

namespace compass {

struct EpisodeMetrics {
  double avg_unc = 0;
  double avg_jsd = 0;
  double min_visits = 0;
  double avg_visits = 0;
  double rmse = 0;
  std::vector<double> unc_trace;  ///< mean normalized std per step
};

/// Mean over (target, node, step) of sigma / sigma_f.
double avg_uncertainty(std::span<const Matrix<double>> node_vars, double amplitude);
/// Per-step mean normalized std.
std::vector<double> uncertainty_trace(std::span<const Matrix<double>> node_vars, double amplitude);

/// Jensen-Shannon divergence in nats; inputs must be normalized.
double jensen_shannon(std::span<const double> p, std::span<const double> q);

/// Belief distribution over nodes from clipped posterior means.
std::vector<double> belief_distribution(std::span<const double> means);
/// Gaussian bump of bandwidth r_sense around the true target position.
std::vector<double> truth_distribution(const WorldGraph& graph, const Point& target, double r_sense);

double avg_jsd(const WorldGraph& graph, std::span<const Matrix<double>> node_means,
               std::span<const std::vector<Point>> target_positions, double r_sense);

struct VisitStats {
  double min_visits = 0;
  double avg_visits = 0;
};

/// visits_j = number of steps where at least one agent detected target j.
VisitStats visit_stats(std::span<const std::vector<Observation>> observation_log, int targets);

double rmse(const WorldGraph& graph, std::span<const Matrix<double>> node_means,
            std::span<const std::vector<Point>> target_positions);

EpisodeMetrics compute_metrics(const EpisodeLog& log);

struct MetricSummary {
  double mean = 0;
  double std = 0;
};

struct EvaluationResult {
  std::string planner;
  std::vector<std::uint64_t> seeds;  ///< per-run episode seed
  std::vector<EpisodeMetrics> runs;
  MetricSummary avg_unc, avg_jsd, min_visits, avg_visits, rmse;
  std::vector<double> trace_mean, trace_std;
};

MetricSummary summarize(std::span<const double> values);

/// Seed of run `index` under a master evaluation seed.
std::uint64_t run_seed(std::uint64_t master, int index);

using PlannerFactory = std::function<std::unique_ptr<Planner>()>;

/// Runs n_runs seeded episodes (parallel across runs when threads > 1) and
/// aggregates. Results do not depend on the thread count.
EvaluationResult evaluate(const std::string& planner_name, const PlannerFactory& factory,
                          const SimConfig& config, int n_runs, std::uint64_t seed, int threads = 1,
                          const std::function<void(int, const SimState&, const StepOutcome&)>&
                              on_step = {});

}  // namespace compass
