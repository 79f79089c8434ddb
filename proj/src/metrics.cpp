#include "compass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "compass/errors.hpp"
#include "compass/parallel.hpp"

namespace compass {
namespace {

constexpr double kBeliefFloor = 1e-6;

double kl_term(double a, double b) { return a > 0.0 ? a * std::log(a / b) : 0.0; }

}  // namespace

double avg_uncertainty(std::span<const Matrix<double>> node_vars, double amplitude) {
  if (node_vars.empty()) throw InputError("avg_uncertainty: empty belief history");
  const auto trace = uncertainty_trace(node_vars, amplitude);
  double s = 0;
  for (double v : trace) s += v;
  return s / static_cast<double>(trace.size());
}

std::vector<double> uncertainty_trace(std::span<const Matrix<double>> node_vars, double amplitude) {
  const double sf = std::sqrt(amplitude);
  std::vector<double> trace;
  trace.reserve(node_vars.size());
  for (const auto& m : node_vars) {
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += std::sqrt(m.data()[i]) / sf;
    trace.push_back(m.empty() ? 0.0 : s / static_cast<double>(m.size()));
  }
  return trace;
}

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("jensen_shannon: size mismatch");
  double js = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double mid = 0.5 * (p[i] + q[i]);
    if (mid <= 0.0) continue;
    js += 0.5 * kl_term(p[i], mid) + 0.5 * kl_term(q[i], mid);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

std::vector<double> belief_distribution(std::span<const double> means) {
  std::vector<double> p(means.size());
  double z = 0;
  for (std::size_t v = 0; v < means.size(); ++v) {
    p[v] = std::max(means[v], kBeliefFloor);
    z += p[v];
  }
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> truth_distribution(const WorldGraph& graph, const Point& target, double r_sense) {
  std::vector<double> q(graph.size());
  const double denom = 2.0 * r_sense * r_sense;
  // Shift by the nearest squared distance so the largest weight is exp(0).
  double dmin = std::numeric_limits<double>::infinity();
  for (int v = 0; v < graph.size(); ++v) {
    const double d = distance(graph.node(v), target);
    dmin = std::min(dmin, d * d);
  }
  double z = 0;
  for (int v = 0; v < graph.size(); ++v) {
    const double d = distance(graph.node(v), target);
    q[v] = std::exp(-(d * d - dmin) / denom);
    z += q[v];
  }
  for (double& x : q) x /= z;
  return q;
}

double avg_jsd(const WorldGraph& graph, std::span<const Matrix<double>> node_means,
               std::span<const std::vector<Point>> target_positions, double r_sense) {
  if (node_means.size() != target_positions.size()) throw InputError("avg_jsd: histories misaligned");
  double total = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < node_means.size(); ++t) {
    const auto& mu = node_means[t];
    for (int j = 0; j < mu.rows(); ++j) {
      const auto p = belief_distribution(mu.row(j));
      const auto q = truth_distribution(graph, target_positions[t][j], r_sense);
      total += jensen_shannon(p, q);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

VisitStats visit_stats(std::span<const std::vector<Observation>> observation_log, int targets) {
  if (targets <= 0) return {};
  std::vector<int> visits(targets, 0);
  std::vector<std::uint8_t> seen(targets);
  for (const auto& step : observation_log) {
    std::fill(seen.begin(), seen.end(), 0);
    for (const auto& o : step) {
      if (o.y == 1 && o.target_id >= 0 && o.target_id < targets) seen[o.target_id] = 1;
    }
    for (int j = 0; j < targets; ++j) visits[j] += seen[j];
  }
  VisitStats s;
  s.min_visits = *std::min_element(visits.begin(), visits.end());
  double sum = 0;
  for (int v : visits) sum += v;
  s.avg_visits = sum / targets;
  return s;
}

double rmse(const WorldGraph& graph, std::span<const Matrix<double>> node_means,
            std::span<const std::vector<Point>> target_positions) {
  if (node_means.size() != target_positions.size()) throw InputError("rmse: histories misaligned");
  double total = 0;
  std::size_t count = 0;
  const int K = graph.size();
  for (std::size_t t = 0; t < node_means.size(); ++t) {
    const auto& mu = node_means[t];
    for (int j = 0; j < mu.rows(); ++j) {
      double wsum = 0, x = 0, y = 0;
      for (int v = 0; v < K; ++v) {
        const double w = std::max(mu(j, v), 0.0);
        wsum += w;
        x += w * graph.node(v).x;
        y += w * graph.node(v).y;
      }
      if (wsum <= 0.0) {
        x = y = 0;
        for (int v = 0; v < K; ++v) {
          x += graph.node(v).x;
          y += graph.node(v).y;
        }
        wsum = K;
      }
      const Point est{x / wsum, y / wsum};
      const double d = distance(est, target_positions[t][j]);
      total += d * d;
      ++count;
    }
  }
  return count == 0 ? 0.0 : std::sqrt(total / static_cast<double>(count));
}

EpisodeMetrics compute_metrics(const EpisodeLog& log) {
  EpisodeMetrics m;
  m.unc_trace = uncertainty_trace(log.node_vars, log.amplitude);
  m.avg_unc = avg_uncertainty(log.node_vars, log.amplitude);
  m.avg_jsd = avg_jsd(*log.graph, log.node_means, log.target_positions, log.r_sense);
  const VisitStats vs = visit_stats(log.observations, log.targets);
  m.min_visits = vs.min_visits;
  m.avg_visits = vs.avg_visits;
  m.rmse = rmse(*log.graph, log.node_means, log.target_positions);
  return m;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

std::uint64_t run_seed(std::uint64_t master, int index) {
  return stream_seed(master, static_cast<std::uint64_t>(index) + 1000);
}

EvaluationResult evaluate(const std::string& planner_name, const PlannerFactory& factory,
                          const SimConfig& config, int n_runs, std::uint64_t seed, int threads,
                          const std::function<void(int, const SimState&, const StepOutcome&)>& on_step) {
  if (n_runs < 1) throw ConfigError("runs: must be >= 1");
  config.validate();
  EvaluationResult result;
  result.planner = planner_name;
  result.runs.resize(n_runs);
  result.seeds.resize(n_runs);
  for (int r = 0; r < n_runs; ++r) result.seeds[r] = run_seed(seed, r);

  parallel_for(
      n_runs, on_step ? 1 : threads,
      [&](int r) {
        SimConfig cfg = config;
        cfg.seed = result.seeds[r];
        cfg.mode = EpisodeMode::evaluation;
        auto planner = factory();
        std::function<void(const SimState&, const StepOutcome&)> hook;
        if (on_step) hook = [&, r](const SimState& s, const StepOutcome& o) { on_step(r, s, o); };
        result.runs[r] = compute_metrics(run_episode(cfg, *planner, hook));
      },
      [&](int r) { return "evaluation run " + std::to_string(r) + " (" + planner_name + ") failed"; });

  auto collect = [&](auto field) {
    std::vector<double> v;
    for (const auto& m : result.runs) v.push_back(field(m));
    return summarize(v);
  };
  result.avg_unc = collect([](const EpisodeMetrics& m) { return m.avg_unc; });
  result.avg_jsd = collect([](const EpisodeMetrics& m) { return m.avg_jsd; });
  result.min_visits = collect([](const EpisodeMetrics& m) { return m.min_visits; });
  result.avg_visits = collect([](const EpisodeMetrics& m) { return m.avg_visits; });
  result.rmse = collect([](const EpisodeMetrics& m) { return m.rmse; });

  const std::size_t steps = result.runs.front().unc_trace.size();
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> v;
    for (const auto& m : result.runs) v.push_back(m.unc_trace.at(t));
    const auto s = summarize(v);
    result.trace_mean.push_back(s.mean);
    result.trace_std.push_back(s.std);
  }
  return result;
}

}  // namespace compass
