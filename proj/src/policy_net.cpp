#include "compass/policy_net.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "compass/errors.hpp"

namespace compass::nn {

std::string_view critic_name(CriticMode c) {
  return c == CriticMode::central ? "central" : "decentralized";
}

CriticMode parse_critic(std::string_view s) {
  if (s == "central") return CriticMode::central;
  if (s == "decentralized") return CriticMode::decentralized;
  throw ConfigError("unknown critic '" + std::string(s) + "' (central, decentralized)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_presence: return "no_presence";
    case Variant::no_spatial: return "no_spatial";
    case Variant::no_temporal: return "no_temporal";
  }
  return "full";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::full, Variant::no_presence, Variant::no_spatial, Variant::no_temporal}) {
    if (variant_name(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) +
                    "' (full, no_presence, no_spatial, no_temporal)");
}

void NetConfig::validate() const {
  auto need = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(std::string(key) + ": " + what);
  };
  need(targets >= 1, "N", "must be >= 1");
  need(agents >= 1, "M", "must be >= 1");
  need(d_model >= 1, "d_e", "must be >= 1");
  need(heads >= 1 && d_model % heads == 0, "heads", "must divide d_e");
  need(d_pe >= 1, "d_pe", "must be >= 1");
  need(slots >= 1, "H", "must be >= 1");
  need(ff_mult >= 1, "ff_mult", "must be >= 1");
  need(critic_hidden >= 1, "critic_hidden", "must be >= 1");
  need(spatial_layers >= 1, "spatial_layers", "must be >= 1");
}

NetConfig net_config_for(const SimConfig& sim, NetConfig base) {
  base.targets = sim.N;
  base.agents = sim.M;
  base.slots = sim.history_slots;
  base.d_pe = sim.d_pe;
  return base;
}

std::vector<ParamSpec> policy_param_specs(const NetConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  const int ff = cfg.ff_mult * d;
  std::vector<ParamSpec> s;
  auto lin = [&s](const std::string& p, int in, int out) {
    s.push_back({p + ".w", in, out});
    s.push_back({p + ".b", 1, out});
  };
  auto norm = [&s, d](const std::string& p) {
    s.push_back({p + ".g", 1, d});
    s.push_back({p + ".b", 1, d});
  };
  auto attn = [&](const std::string& p) {
    lin(p + ".q", d, d);
    lin(p + ".k", d, d);
    lin(p + ".v", d, d);
    lin(p + ".o", d, d);
  };

  lin("enc.gp", 4 * cfg.targets, d);
  lin("enc.presence", 1, d);
  lin("enc.coord", 2, d);
  lin("enc.out", 3 * d, d);

  s.push_back({"temporal.time_enc", cfg.slots, d});
  norm("temporal.ln_self");
  attn("temporal.self");
  norm("temporal.ln_cross");
  attn("temporal.cross");
  norm("temporal.ln_ff");
  lin("temporal.ff1", d, ff);
  lin("temporal.ff2", ff, d);

  lin("spatial.pe", cfg.d_pe, d);
  s.push_back({"spatial.presence_emb", 2, d});
  for (int l = 0; l < cfg.spatial_layers; ++l) {
    const std::string p = "spatial.l" + std::to_string(l);
    norm(p + ".ln_attn");
    attn(p + ".attn");
    norm(p + ".ln_ff");
    lin(p + ".ff1", d, ff);
    lin(p + ".ff2", ff, d);
  }
  lin("fusion", d + 1, d);

  s.push_back({"actor.wq", d, d});
  s.push_back({"actor.wk", d, d});

  const int critic_in = cfg.critic == CriticMode::central ? cfg.agents * d : d;
  lin("critic.l1", critic_in, cfg.critic_hidden);
  lin("critic.l2", cfg.critic_hidden, 1);
  return s;
}

// -- ParamSet -----------------------------------------------------------------

template <class T>
ParamSet<T>::ParamSet(const std::vector<ParamSpec>& specs) {
  for (const auto& sp : specs) {
    if (lookup_.count(sp.name)) throw InputError("duplicate parameter name " + sp.name);
    lookup_.emplace(sp.name, static_cast<int>(names_.size()));
    names_.push_back(sp.name);
    values_.emplace_back(sp.rows, sp.cols);
  }
}

template <class T>
int ParamSet<T>::find(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  return it == lookup_.end() ? -1 : it->second;
}

template <class T>
int ParamSet<T>::index(std::string_view name) const {
  const int i = find(name);
  if (i < 0) throw InputError("unknown parameter " + std::string(name));
  return i;
}

template <class T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <class T>
bool ParamSet<T>::all_finite() const {
  for (const auto& v : values_) {
    for (T x : v.storage()) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

template <class T>
void ParamSet<T>::set_zero() {
  for (auto& v : values_) v.fill(T(0));
}

template <class T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  return ParamSet(specs());
}

template <class T>
std::vector<ParamSpec> ParamSet<T>::specs() const {
  std::vector<ParamSpec> out;
  out.reserve(values_.size());
  for (int i = 0; i < size(); ++i) out.push_back({names_[i], values_[i].rows(), values_[i].cols()});
  return out;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <class T>
ParamSet<T> init_policy_params(const NetConfig& cfg, std::uint64_t seed) {
  ParamSet<T> p(policy_param_specs(cfg));
  Rng rng(stream_seed(seed, 0x5eed));
  for (int i = 0; i < p.size(); ++i) {
    const std::string& n = p.name(i);
    Matrix<T>& m = p[i];
    if (n == "temporal.time_enc" || n == "spatial.presence_emb") {
      for (auto& x : m.storage()) x = static_cast<T>(normal(rng, 0.02));
    } else if (ends_with(n, ".g")) {
      m.fill(T(1));
    } else if (ends_with(n, ".b")) {
      m.fill(T(0));
    } else {
      const double a = std::sqrt(6.0 / (m.rows() + m.cols()));
      for (auto& x : m.storage()) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * a);
    }
  }
  return p;
}

// -- input --------------------------------------------------------------------

PolicyInput make_policy_input(const SimState& state) {
  PolicyInput in;
  in.features = state.history.pooled(state.config.history_slots, state.config.stride);
  in.presence = state.presence();
  in.distance = state.distance_to_nearest_agent();
  in.agent_nodes = state.agent_nodes();
  in.graph = state.graph;
  return in;
}

// -- Binder -------------------------------------------------------------------

template <class T>
Binder<T>::Binder(Tape<T>& tape, const ParamSet<T>& params)
    : tape_(tape), params_(params), bound_(static_cast<std::size_t>(params.size()), -1) {}

template <class T>
Var Binder<T>::operator()(std::string_view name) {
  const int i = params_.index(name);
  if (bound_[i] < 0) bound_[i] = tape_.parameter(&params_[i]).id;
  return Var{bound_[i]};
}

template <class T>
void Binder<T>::collect(ParamSet<T>& grads) const {
  for (int i = 0; i < params_.size(); ++i) {
    if (bound_[i] < 0) continue;
    const Matrix<T>& g = tape_.grad(Var{bound_[i]});
    if (g.empty()) continue;
    simd::axpy(T(1), g.data(), grads[i].data(), g.size());
  }
}

// -- blocks -------------------------------------------------------------------

namespace {

template <class T>
Var linear(Binder<T>& b, Var x, const std::string& p) {
  return b.tape().linear(x, b(p + ".w"), b(p + ".b"));
}

template <class T>
Var norm(Binder<T>& b, Var x, const std::string& p) {
  return b.tape().layer_norm(x, b(p + ".g"), b(p + ".b"));
}

template <class T>
Var feed_forward(Binder<T>& b, Var x, const std::string& p) {
  return linear(b, b.tape().gelu(linear(b, x, p + ".ff1")), p + ".ff2");
}

template <class T>
Var project_attention(Binder<T>& b, Var q_in, Var kv_in, const std::string& p, AttentionSpec spec,
                      Var* weights) {
  Tape<T>& t = b.tape();
  Var att = t.attention(linear(b, q_in, p + ".q"), linear(b, kv_in, p + ".k"),
                        linear(b, kv_in, p + ".v"), std::move(spec));
  if (weights) *weights = att;
  return linear(b, att, p + ".o");
}

}  // namespace

template <class T>
Var target_encoder(Binder<T>& b, const Matrix<T>& features, int slots, int targets) {
  const int width = 4 * targets + 3;
  if (features.cols() != width || slots < 1 || features.rows() % slots != 0) {
    throw InputError("target_encoder: expected (K*H') x " + std::to_string(width) + " features, got " +
                     std::to_string(features.rows()) + " x " + std::to_string(features.cols()));
  }
  for (int r = 0; r < features.rows(); ++r) {
    for (int c = 0; c < width; ++c) {
      if (!std::isfinite(features(r, c))) {
        throw InputError("target_encoder: non-finite feature at node " + std::to_string(r / slots) +
                         ", slot " + std::to_string(r % slots) + ", column " + std::to_string(c));
      }
    }
  }
  const int rows = features.rows();
  Matrix<T> gp(rows, 4 * targets), pres(rows, 1), coord(rows, 2);
  for (int r = 0; r < rows; ++r) {
    std::copy(features.row_ptr(r), features.row_ptr(r) + 4 * targets, gp.row_ptr(r));
    pres(r, 0) = features(r, 4 * targets);
    coord(r, 0) = features(r, 4 * targets + 1);
    coord(r, 1) = features(r, 4 * targets + 2);
  }
  Tape<T>& t = b.tape();
  const Var parts[] = {linear(b, t.constant(std::move(gp)), "enc.gp"),
                       linear(b, t.constant(std::move(pres)), "enc.presence"),
                       linear(b, t.constant(std::move(coord)), "enc.coord")};
  return linear(b, t.concat_cols(parts), "enc.out");
}

template <class T>
Var temporal_decoder(Binder<T>& b, Var emb, int nodes, std::span<const std::uint8_t> valid,
                     const NetConfig& cfg, Var* cross_attention) {
  Tape<T>& t = b.tape();
  const int H = static_cast<int>(valid.size());
  if (H < 1 || t.value(emb).rows() != nodes * H) throw InputError("temporal_decoder: slot count mismatch");
  if (std::none_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; })) {
    throw ContractError("temporal_decoder: every history slot is masked");
  }
  if (!valid[H - 1]) throw ContractError("temporal_decoder: the current slot must be valid");

  std::vector<int> slot_of(static_cast<std::size_t>(nodes) * H);
  std::vector<int> last(nodes);
  for (int v = 0; v < nodes; ++v) {
    for (int h = 0; h < H; ++h) slot_of[static_cast<std::size_t>(v) * H + h] = h;
    last[v] = v * H + H - 1;
  }
  Var mem = t.add(emb, t.gather_rows(b("temporal.time_enc"), std::move(slot_of)));
  Var x = t.gather_rows(mem, std::move(last));

  AttentionSpec self{cfg.heads, nodes, 1, 1, {}};
  Var h = norm(b, x, "temporal.ln_self");
  x = t.add(x, project_attention(b, h, h, "temporal.self", self, nullptr));

  AttentionSpec cross{cfg.heads, nodes, 1, H, {}};
  cross.key_valid.resize(static_cast<std::size_t>(nodes) * H);
  for (int v = 0; v < nodes; ++v) {
    std::copy(valid.begin(), valid.end(), cross.key_valid.begin() + static_cast<std::ptrdiff_t>(v) * H);
  }
  h = norm(b, x, "temporal.ln_cross");
  x = t.add(x, project_attention(b, h, mem, "temporal.cross", std::move(cross), cross_attention));

  return t.add(x, feed_forward(b, norm(b, x, "temporal.ln_ff"), "temporal"));
}

template <class T>
Var temporal_mean(Binder<T>& b, Var emb, int nodes, std::span<const std::uint8_t> valid) {
  const int H = static_cast<int>(valid.size());
  const int n_valid = static_cast<int>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
  if (n_valid == 0) throw ContractError("temporal_mean: every history slot is masked");
  RowMix mix;
  mix.rows.resize(nodes);
  for (int v = 0; v < nodes; ++v) {
    for (int h = 0; h < H; ++h) {
      if (valid[h]) mix.rows[v].emplace_back(v * H + h, 1.0 / n_valid);
    }
  }
  return b.tape().mix_rows(emb, std::move(mix));
}

template <class T>
Var spatial_encoder(Binder<T>& b, Var e_temp, const Matrix<T>& lap_pe,
                    std::span<const std::uint8_t> presence, std::span<const double> distance,
                    const Adjacency* adjacency, const NetConfig& cfg, std::vector<Var>* attention) {
  Tape<T>& t = b.tape();
  const int K = t.value(e_temp).rows();
  if (t.value(e_temp).cols() != cfg.d_model || lap_pe.rows() != K || lap_pe.cols() != cfg.d_pe ||
      static_cast<int>(presence.size()) != K || static_cast<int>(distance.size()) != K) {
    throw InputError("spatial_encoder: dimension mismatch");
  }
  Var x = t.add(e_temp, linear(b, t.constant(lap_pe), "spatial.pe"));
  if (cfg.variant != Variant::no_presence) {
    std::vector<int> flags(presence.begin(), presence.end());
    for (int& f : flags) f = f ? 1 : 0;
    x = t.add(x, t.gather_rows(b("spatial.presence_emb"), std::move(flags)));
  }

  RowMix neighbor_mean;
  if (cfg.variant == Variant::no_spatial) {
    if (!adjacency || static_cast<int>(adjacency->size()) != K) {
      throw InputError("spatial_encoder: neighbor pooling needs the graph adjacency");
    }
    neighbor_mean.rows.resize(K);
    for (int v = 0; v < K; ++v) {
      const auto& nb = (*adjacency)[v];
      for (const auto& n : nb) neighbor_mean.rows[v].emplace_back(n.node, 1.0 / static_cast<double>(nb.size()));
    }
  }

  for (int l = 0; l < cfg.spatial_layers; ++l) {
    const std::string p = "spatial.l" + std::to_string(l);
    Var h = norm(b, x, p + ".ln_attn");
    if (cfg.variant == Variant::no_spatial) {
      x = t.add(x, t.mix_rows(h, neighbor_mean));
    } else {
      Var w;
      x = t.add(x, project_attention(b, h, h, p + ".attn", AttentionSpec{cfg.heads, 1, K, K, {}}, &w));
      if (attention) attention->push_back(w);
    }
    x = t.add(x, feed_forward(b, norm(b, x, p + ".ln_ff"), p));
  }

  Matrix<T> dist(K, 1);
  for (int v = 0; v < K; ++v) dist(v, 0) = static_cast<T>(distance[v]);
  const Var parts[] = {x, t.constant(std::move(dist))};
  return linear(b, t.concat_cols(parts), "fusion");
}

template <class T>
Var actor_logits(Binder<T>& b, Var e_final, int agent_node, std::span<const int> neighbors) {
  Tape<T>& t = b.tape();
  if (neighbors.empty()) throw ContractError("actor_logits: node " + std::to_string(agent_node) + " has no neighbors");
  const int K = t.value(e_final).rows();
  for (int n : neighbors) {
    if (n < 0 || n >= K) throw InputError("actor_logits: neighbor id out of range");
  }
  if (agent_node < 0 || agent_node >= K) throw InputError("actor_logits: agent node out of range");
  Var q = t.matmul(t.gather_rows(e_final, {agent_node}), b("actor.wq"));
  Var k = t.matmul(t.gather_rows(e_final, std::vector<int>(neighbors.begin(), neighbors.end())), b("actor.wk"));
  const T scale = T(1) / std::sqrt(static_cast<T>(t.value(e_final).cols()));
  return t.log_softmax(t.scale(t.matmul_nt(k, q), scale));
}

template <class T>
Var critic_value(Binder<T>& b, Var e_final, std::span<const int> agent_nodes, const NetConfig& cfg) {
  Tape<T>& t = b.tape();
  if (static_cast<int>(agent_nodes.size()) != cfg.agents) {
    throw InputError("critic_value: expected " + std::to_string(cfg.agents) + " agents, got " +
                     std::to_string(agent_nodes.size()));
  }
  const int K = t.value(e_final).rows();
  for (int n : agent_nodes) {
    if (n < 0 || n >= K) throw InputError("critic_value: agent node out of range");
  }
  Var x;
  if (cfg.critic == CriticMode::central) {
    std::vector<Var> rows;
    for (int n : agent_nodes) rows.push_back(t.gather_rows(e_final, {n}));
    x = t.concat_cols(rows);
  } else {
    x = t.gather_rows(e_final, std::vector<int>(agent_nodes.begin(), agent_nodes.end()));
  }
  return linear(b, t.tanh(linear(b, x, "critic.l1")), "critic.l2");
}

// -- PolicyForward --------------------------------------------------------------

template <class T>
PolicyForward<T>::PolicyForward(const ParamSet<T>& params, const NetConfig& cfg, const PolicyInput& in)
    : cfg_(cfg), tape_(std::make_unique<Tape<T>>()), binder_(*tape_, params) {
  const PooledFeatures& f = in.features;
  if (!in.graph) throw InputError("policy input has no graph");
  const int K = in.graph->size();
  if (f.nodes != K || f.slots != cfg.slots || f.width != cfg.feature_width()) {
    throw InputError("policy input: pooled features are " + std::to_string(f.nodes) + "x" +
                     std::to_string(f.slots) + "x" + std::to_string(f.width) + ", network expects " +
                     std::to_string(K) + "x" + std::to_string(cfg.slots) + "x" +
                     std::to_string(cfg.feature_width()));
  }
  if (in.graph->lap_pe().vectors.cols() != cfg.d_pe) throw InputError("policy input: d_pe mismatch");

  Matrix<T> x(K * f.slots, f.width);
  for (std::size_t i = 0; i < f.data.size(); ++i) x.data()[i] = static_cast<T>(f.data[i]);
  if (cfg.variant == Variant::no_presence) {
    for (int r = 0; r < x.rows(); ++r) x(r, 4 * cfg.targets) = T(0);
  }

  Var emb = target_encoder(binder_, x, f.slots, cfg.targets);
  if (cfg.variant == Variant::no_temporal) {
    e_temp_ = temporal_mean(binder_, emb, K, f.valid);
  } else {
    e_temp_ = temporal_decoder(binder_, emb, K, f.valid, cfg, &temporal_attention_);
  }
  e_final_ = spatial_encoder(binder_, e_temp_, in.graph->lap_pe().vectors.template cast<T>(), in.presence,
                             in.distance, &in.graph->adjacency(), cfg, &spatial_attention_);

  for (int node : in.agent_nodes) {
    candidates_.push_back(in.graph->neighbor_ids(node));
    logits_.push_back(actor_logits(binder_, e_final_, node, candidates_.back()));
  }
  value_ = critic_value(binder_, e_final_, in.agent_nodes, cfg);
}

template <class T>
std::vector<T> PolicyForward<T>::log_probs(int m) const {
  const auto& s = tape_->value(logits_[m]).storage();
  return {s.begin(), s.end()};
}

template <class T>
T PolicyForward<T>::value(int m) const {
  const Matrix<T>& v = tape_->value(value_);
  return cfg_.critic == CriticMode::central ? v(0, 0) : v(m, 0);
}

template <class T>
void PolicyForward<T>::backward(std::span<const std::vector<T>> dlogp, std::span<const T> dvalue,
                                ParamSet<T>& grads) {
  if (static_cast<int>(dlogp.size()) != agents() || static_cast<int>(dvalue.size()) != agents()) {
    throw InputError("backward: one seed per agent expected");
  }
  for (int m = 0; m < agents(); ++m) {
    if (dlogp[m].size() != candidates_[m].size()) throw InputError("backward: log-prob seed size mismatch");
    Matrix<T> g(static_cast<int>(dlogp[m].size()), 1);
    std::copy(dlogp[m].begin(), dlogp[m].end(), g.data());
    tape_->seed(logits_[m], g);
  }
  const Matrix<T>& v = tape_->value(value_);
  Matrix<T> gv(v.rows(), 1);
  for (int m = 0; m < agents(); ++m) {
    if (cfg_.critic == CriticMode::central) {
      gv(0, 0) += dvalue[m];
    } else {
      gv(m, 0) = dvalue[m];
    }
  }
  tape_->seed(value_, gv);
  tape_->backward();
  binder_.collect(grads);
}

// -- planner ------------------------------------------------------------------

int argmax_action(std::span<const float> log_probs) {
  if (log_probs.empty()) throw ContractError("argmax over an empty action set");
  return static_cast<int>(std::max_element(log_probs.begin(), log_probs.end()) - log_probs.begin());
}

int sample_action(std::span<const float> log_probs, Rng& rng) {
  if (log_probs.empty()) throw ContractError("sampling from an empty action set");
  const double u = uniform01(rng);
  double c = 0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    c += std::exp(static_cast<double>(log_probs[i]));
    if (u < c) return static_cast<int>(i);
  }
  return static_cast<int>(log_probs.size()) - 1;
}

PolicyPlanner::PolicyPlanner(std::shared_ptr<const ParamSet<float>> params, NetConfig cfg, bool stochastic,
                             std::uint64_t seed)
    : params_(std::move(params)), cfg_(cfg), stochastic_(stochastic), seed_(seed) {
  if (!params_) throw InputError("policy planner needs parameters");
}

void PolicyPlanner::reset(const SimState& state) { rng_.seed(stream_seed(seed_, state.config.seed)); }

std::vector<int> PolicyPlanner::select(const SimState& state) {
  PolicyForward<float> fwd(*params_, cfg_, make_policy_input(state));
  std::vector<int> actions;
  for (int m = 0; m < fwd.agents(); ++m) {
    const auto lp = fwd.log_probs(m);
    const int a = stochastic_ ? sample_action(lp, rng_) : argmax_action(lp);
    actions.push_back(fwd.candidates(m)[a]);
  }
  return actions;
}

// -- instantiation --------------------------------------------------------------

template class ParamSet<float>;
template class ParamSet<double>;
template class Binder<float>;
template class Binder<double>;
template class PolicyForward<float>;
template class PolicyForward<double>;

#define COMPASS_INSTANTIATE(T)                                                                      \
  template ParamSet<T> init_policy_params<T>(const NetConfig&, std::uint64_t);                     \
  template Var target_encoder<T>(Binder<T>&, const Matrix<T>&, int, int);                          \
  template Var temporal_decoder<T>(Binder<T>&, Var, int, std::span<const std::uint8_t>,            \
                                   const NetConfig&, Var*);                                         \
  template Var temporal_mean<T>(Binder<T>&, Var, int, std::span<const std::uint8_t>);              \
  template Var spatial_encoder<T>(Binder<T>&, Var, const Matrix<T>&, std::span<const std::uint8_t>, \
                                  std::span<const double>, const Adjacency*, const NetConfig&,      \
                                  std::vector<Var>*);                                               \
  template Var actor_logits<T>(Binder<T>&, Var, int, std::span<const int>);                        \
  template Var critic_value<T>(Binder<T>&, Var, std::span<const int>, const NetConfig&);

COMPASS_INSTANTIATE(float)
COMPASS_INSTANTIATE(double)
#undef COMPASS_INSTANTIATE

}  // namespace compass::nn
