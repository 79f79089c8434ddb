#pragma once

#include <cstdint>
#include <vector>

#include "compass/episode.hpp"
#include "compass/planners.hpp"
#include "compass/policy_net.hpp"
#include "compass/rng.hpp"

namespace compass::testing {

/// Small environment advanced a few random steps so the history has several
/// populated slots and the beliefs carry observations.
inline SimState small_state(int K = 5, int M = 2, int N = 2, int slots = 3, int steps = 4,
                            std::uint64_t seed = 11) {
  SimConfig c;
  c.K = K;
  c.k_nn = K > 3 ? 2 : 1;
  c.M = M;
  c.N = N;
  c.d_pe = K > 4 ? 3 : 1;
  c.history_slots = slots;
  c.stride = 1;
  c.r_sense = 0.35;
  c.seed = seed;
  SimState s = reset_episode(c);
  Rng rng(seed);
  for (int i = 0; i < steps; ++i) advance_step(s, random_step(s, rng));
  return s;
}

inline nn::NetConfig small_net(const SimState& s, int d_model = 8, int heads = 2) {
  nn::NetConfig n;
  n.d_model = d_model;
  n.heads = heads;
  return nn::net_config_for(s.config, n);
}

/// Replaces every parameter with a uniform draw in [-scale, scale] (layer-norm
/// gains around 1) so no block sits at a degenerate initialization.
template <class T>
void randomize(nn::ParamSet<T>& p, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (int i = 0; i < p.size(); ++i) {
    const bool gain = p.name(i).size() > 2 && p.name(i).substr(p.name(i).size() - 2) == ".g";
    for (auto& x : p[i].storage()) {
      const double u = (2 * uniform01(rng) - 1) * scale;
      x = static_cast<T>(gain ? 1 + u : u);
    }
  }
}

}  // namespace compass::testing
