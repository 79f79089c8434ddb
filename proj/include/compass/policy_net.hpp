#pragma once

// Attention policy over the world graph: per-node target encoder, temporal
// decoder over pooled history slots, spatial transformer across nodes,
// pointer actor over neighbor nodes and a value head. Parameters live in a
// named ParamSet; the tape binds them lazily, so parameters a forward pass
// never touches receive exactly zero gradient.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "compass/autograd.hpp"
#include "compass/planners.hpp"
#include "compass/rng.hpp"
#include "compass/simulator.hpp"

namespace compass::nn {

enum class CriticMode { central, decentralized };
enum class Variant { full, no_presence, no_spatial, no_temporal };

std::string_view critic_name(CriticMode c);
CriticMode parse_critic(std::string_view s);  ///< ConfigError on unknown
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);  ///< ConfigError on unknown

struct NetConfig {
  int targets = 8;  ///< N
  int agents = 3;   ///< M
  int d_model = 64;
  int heads = 4;
  int d_pe = 8;
  int slots = 5;  ///< pooled history slots H'
  int ff_mult = 4;
  int critic_hidden = 128;
  int spatial_layers = 2;
  CriticMode critic = CriticMode::central;
  Variant variant = Variant::full;

  int feature_width() const { return 4 * targets + 3; }
  void validate() const;
};

/// Copies the environment dimensions (N, M, H', d_pe) into `base`.
NetConfig net_config_for(const SimConfig& sim, NetConfig base = {});

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
};

/// Every learned array in declaration (and checkpoint) order.
std::vector<ParamSpec> policy_param_specs(const NetConfig& cfg);

template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const std::vector<ParamSpec>& specs);

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[i]; }
  /// -1 when absent.
  int find(std::string_view name) const;
  int index(std::string_view name) const;  ///< InputError when absent
  Matrix<T>& operator[](int i) { return values_[i]; }
  const Matrix<T>& operator[](int i) const { return values_[i]; }
  Matrix<T>& at(std::string_view name) { return values_[index(name)]; }
  const Matrix<T>& at(std::string_view name) const { return values_[index(name)]; }

  std::size_t scalar_count() const;
  bool all_finite() const;
  void set_zero();
  ParamSet zeros_like() const;
  std::vector<ParamSpec> specs() const;

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out(specs());
    for (int i = 0; i < size(); ++i) out[i] = values_[i].template cast<U>();
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
  std::unordered_map<std::string, int> lookup_;
};

/// Xavier-uniform weights, zero biases, unit layer-norm gains, N(0, 0.02)
/// embeddings. Deterministic in `seed`.
template <class T>
ParamSet<T> init_policy_params(const NetConfig& cfg, std::uint64_t seed);

/// Everything the network reads from one environment state.
struct PolicyInput {
  PooledFeatures features;
  std::vector<std::uint8_t> presence;  ///< K
  std::vector<double> distance;        ///< K, graph distance to nearest agent
  std::vector<int> agent_nodes;        ///< M
  std::shared_ptr<const WorldGraph> graph;
};

PolicyInput make_policy_input(const SimState& state);

/// Binds named parameters onto a tape on first use.
template <class T>
class Binder {
 public:
  Binder(Tape<T>& tape, const ParamSet<T>& params);
  Var operator()(std::string_view name);
  Tape<T>& tape() { return tape_; }
  /// Adds the tape gradient of every bound parameter into `grads`.
  void collect(ParamSet<T>& grads) const;

 private:
  Tape<T>& tape_;
  const ParamSet<T>& params_;
  std::vector<int> bound_;
};

// -- blocks -------------------------------------------------------------------

/// features: (K*H') x (4N+3), rows ordered [node][slot]. Returns (K*H') x d.
template <class T>
Var target_encoder(Binder<T>& b, const Matrix<T>& features, int slots, int targets);

/// emb: (K*H') x d. Returns K x d. `cross_attention` (optional) receives the
/// cross-attention node for weight inspection.
template <class T>
Var temporal_decoder(Binder<T>& b, Var emb, int nodes, std::span<const std::uint8_t> valid,
                     const NetConfig& cfg, Var* cross_attention = nullptr);

/// Uniform mean over valid slots (temporal ablation).
template <class T>
Var temporal_mean(Binder<T>& b, Var emb, int nodes, std::span<const std::uint8_t> valid);

/// e_temp: K x d. `adjacency` is only read by the no_spatial variant.
template <class T>
Var spatial_encoder(Binder<T>& b, Var e_temp, const Matrix<T>& lap_pe,
                    std::span<const std::uint8_t> presence, std::span<const double> distance,
                    const Adjacency* adjacency, const NetConfig& cfg,
                    std::vector<Var>* attention = nullptr);

/// Log-probabilities (n x 1) over `neighbors` of `agent_node`.
template <class T>
Var actor_logits(Binder<T>& b, Var e_final, int agent_node, std::span<const int> neighbors);

/// Central: 1 x 1 team value. Decentralized: M x 1, one per agent.
template <class T>
Var critic_value(Binder<T>& b, Var e_final, std::span<const int> agent_nodes, const NetConfig& cfg);

// -- full pass ----------------------------------------------------------------

template <class T>
class PolicyForward {
 public:
  PolicyForward(const ParamSet<T>& params, const NetConfig& cfg, const PolicyInput& input);

  int agents() const { return static_cast<int>(candidates_.size()); }
  const std::vector<int>& candidates(int m) const { return candidates_[m]; }
  std::vector<T> log_probs(int m) const;
  T value(int m) const;

  /// Seeds d(loss)/d(log_probs(m)) and d(loss)/d(value(m)) and accumulates
  /// parameter gradients into `grads`. One call per forward pass.
  void backward(std::span<const std::vector<T>> dlogp, std::span<const T> dvalue,
                ParamSet<T>& grads);

  Tape<T>& tape() { return *tape_; }
  Var e_temp() const { return e_temp_; }
  Var e_final() const { return e_final_; }
  Var temporal_attention() const { return temporal_attention_; }
  const std::vector<Var>& spatial_attention() const { return spatial_attention_; }

 private:
  NetConfig cfg_;
  std::unique_ptr<Tape<T>> tape_;
  Binder<T> binder_;
  std::vector<std::vector<int>> candidates_;
  std::vector<Var> logits_;
  Var value_;
  Var e_temp_, e_final_, temporal_attention_;
  std::vector<Var> spatial_attention_;
};

/// Index of the highest probability (ties to the lower index).
int argmax_action(std::span<const float> log_probs);
/// Inverse-CDF draw from exp(log_probs).
int sample_action(std::span<const float> log_probs, Rng& rng);

/// Runs the trained network as a planner: argmax by default, sampling when
/// `stochastic` (seeded per episode from the config seed).
class PolicyPlanner : public Planner {
 public:
  PolicyPlanner(std::shared_ptr<const ParamSet<float>> params, NetConfig cfg,
                bool stochastic = false, std::uint64_t seed = 0);
  std::string_view name() const override { return "compass"; }
  void reset(const SimState& state) override;
  std::vector<int> select(const SimState& state) override;

 private:
  std::shared_ptr<const ParamSet<float>> params_;
  NetConfig cfg_;
  bool stochastic_;
  std::uint64_t seed_;
  Rng rng_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Binder<float>;
extern template class Binder<double>;
extern template class PolicyForward<float>;
extern template class PolicyForward<double>;

}  // namespace compass::nn
