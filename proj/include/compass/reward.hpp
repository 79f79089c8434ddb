#pragma once

#include <cstdint>
#include <span>

#include "compass/gp_belief.hpp"
#include "compass/matrix.hpp"
#include "compass/simulator.hpp"

namespace compass {

/// Linear curriculum over normalized training progress rho = min(k/20000, 1).
struct CurriculumWeights {
  double info = 0;
  double cov = 0;
  double path = 0;
  double progress = 0;
};

inline constexpr double kCurriculumSteps = 20000.0;

CurriculumWeights curriculum_weights(std::int64_t k);

struct RewardTerms {
  double information_gain = 0;
  double coverage_penalty = 0;
  double path_penalty = 0;
};

/// Sum of per-cell variance reductions (growth floored at zero), normalized by
/// N * K * sigma_f^2. Both arrays are N x K.
double information_gain(const Matrix<double>& prev_vars, const Matrix<double>& new_vars,
                        double amplitude);

/// Redundancy penalty: for each (node, target) pair seen by n >= 2 agents
/// this step, adds (1 - var/sigma_f^2) * (n - 1). `node_vars` is N x K.
double coverage_penalty(std::span<const Observation> observations, const Matrix<double>& node_vars,
                        double amplitude);

/// Total distance moved by all agents this step.
double path_penalty(std::span<const AgentState> agents);

double total_reward(std::int64_t k, double ig, double cp, double pp);
inline double total_reward(std::int64_t k, const RewardTerms& t) {
  return total_reward(k, t.information_gain, t.coverage_penalty, t.path_penalty);
}

}  // namespace compass
