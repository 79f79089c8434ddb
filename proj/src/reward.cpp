#include "compass/reward.hpp"

#include <algorithm>
#include <map>
#include <utility>

#include "compass/errors.hpp"

namespace compass {

CurriculumWeights curriculum_weights(std::int64_t k) {
  const double rho = std::min(static_cast<double>(std::max<std::int64_t>(k, 0)) / kCurriculumSteps, 1.0);
  return {3.0 - 1.5 * rho, 0.1 + 0.3 * rho, 0.05 + 0.05 * rho, rho};
}

double information_gain(const Matrix<double>& prev_vars, const Matrix<double>& new_vars,
                        double amplitude) {
  if (!prev_vars.same_shape(new_vars)) {
    throw InputError("information_gain: variance arrays differ in shape");
  }
  if (prev_vars.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < prev_vars.size(); ++i) {
    total += std::max(prev_vars.data()[i] - new_vars.data()[i], 0.0);
  }
  return total / (static_cast<double>(prev_vars.size()) * amplitude);
}

double coverage_penalty(std::span<const Observation> observations, const Matrix<double>& node_vars,
                        double amplitude) {
  std::map<std::pair<int, int>, int> observers;  // (node, target) -> count
  for (const auto& o : observations) ++observers[{o.node, o.target_id}];
  double total = 0;
  for (const auto& [key, n] : observers) {
    if (n < 2) continue;
    const auto [node, target] = key;
    total += (1.0 - node_vars(target, node) / amplitude) * (n - 1);
  }
  return total;
}

double path_penalty(std::span<const AgentState> agents) {
  double total = 0;
  for (const auto& a : agents) total += a.distance_traveled_this_step;
  return total;
}

double total_reward(std::int64_t k, double ig, double cp, double pp) {
  const CurriculumWeights w = curriculum_weights(k);
  return w.info * ig - w.cov * cp - w.path * pp;
}

}  // namespace compass
