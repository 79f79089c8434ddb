#include "compass/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "compass/checkpoint.hpp"
#include "compass/csv.hpp"
#include "compass/episode.hpp"
#include "compass/errors.hpp"
#include "compass/parallel.hpp"
#include "compass/reward.hpp"

namespace compass {

int PPOConfig::iterations() const {
  const std::int64_t per = static_cast<std::int64_t>(n_env) * rollout;
  return static_cast<int>((total_env_steps + per - 1) / per);
}

void PPOConfig::validate() const {
  auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(std::string(key) + ": " + what);
  };
  need(clip > 0 && clip < 1, "clip", "must be in (0, 1)");
  need(gamma > 0 && gamma <= 1, "gamma", "must be in (0, 1]");
  need(lambda > 0 && lambda <= 1, "lambda", "must be in (0, 1]");
  need(n_env >= 1, "n_env", "must be >= 1");
  need(rollout >= 1, "T", "must be >= 1");
  need(epochs >= 1, "epochs", "must be >= 1");
  need(minibatches >= 1, "minibatches", "must be >= 1");
  need(lr0 > 0, "lr", "must be > 0");
  need(lr_decay > 0 && lr_decay <= 1, "lr_decay", "must be in (0, 1]");
  need(lr_period >= 1, "lr_period", "must be >= 1");
  need(entropy_coef >= 0, "entropy_coef", "must be >= 0");
  need(value_coef >= 0, "value_coef", "must be >= 0");
  need(max_grad_norm > 0, "max_grad_norm", "must be > 0");
  need(adam_beta1 >= 0 && adam_beta1 < 1, "adam_beta1", "must be in [0, 1)");
  need(adam_beta2 >= 0 && adam_beta2 < 1, "adam_beta2", "must be in [0, 1)");
  need(adam_eps > 0, "adam_eps", "must be > 0");
  need(total_env_steps >= 1, "total_env_steps", "must be >= 1");
  need(checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
}

double lr_at(const PPOConfig& cfg, int iteration) {
  if (iteration < 0) throw ContractError("lr_at: negative iteration");
  return cfg.lr0 * std::pow(cfg.lr_decay, iteration / cfg.lr_period);
}

// -- advantages ---------------------------------------------------------------

void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda,
                 std::span<double> advantages, std::span<double> returns) {
  const std::size_t T = rewards.size();
  if (values.size() != T || dones.size() != T || advantages.size() != T || returns.size() != T) {
    throw InputError("compute_gae: length mismatch");
  }
  double next_adv = 0;
  double next_value = bootstrap;
  for (std::size_t i = T; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    advantages[i] = next_adv;
    returns[i] = next_adv + values[i];
    next_value = values[i];
  }
}

void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  const int T = buf.steps;
  std::vector<double> r(T), v(T), a(T), ret(T);
  std::vector<std::uint8_t> d(T);
  for (int e = 0; e < buf.n_env; ++e) {
    for (int t = 0; t < T; ++t) {
      r[t] = buf.at(e, t).reward;
      d[t] = buf.at(e, t).done ? 1 : 0;
      buf.at(e, t).advantage.assign(buf.agents, 0.0);
      buf.at(e, t).ret.assign(buf.agents, 0.0);
    }
    for (int m = 0; m < buf.agents; ++m) {
      for (int t = 0; t < T; ++t) v[t] = buf.at(e, t).value[m];
      compute_gae(r, v, d, buf.bootstrap[e][m], gamma, lambda, a, ret);
      for (int t = 0; t < T; ++t) {
        if (!std::isfinite(a[t])) {
          throw NumericalError("non-finite advantage at env " + std::to_string(e) + ", step " + std::to_string(t));
        }
        buf.at(e, t).advantage[m] = a[t];
        buf.at(e, t).ret[m] = ret[t];
      }
    }
  }
}

void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  for (double& a : adv) a = (a - mean) / sd;
}

// -- loss ---------------------------------------------------------------------

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1 - eps, 1 + eps) * advantage);
}

LossResult ppo_loss(const LossInputs& in, const PPOConfig& cfg) {
  const std::size_t n = in.logp_new.size();
  if (n == 0) throw InputError("ppo_loss: empty batch");
  for (auto s : {in.logp_old.size(), in.advantage.size(), in.value.size(), in.ret.size(), in.entropy.size()}) {
    if (s != n) throw InputError("ppo_loss: length mismatch");
  }
  LossResult out;
  out.surrogate_terms.resize(n);
  out.dlogp.resize(n);
  out.dvalue.resize(n);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(in.logp_new[i] - in.logp_old[i]);
    if (!std::isfinite(r)) throw NumericalError("non-finite probability ratio at transition " + std::to_string(i));
    const double A = in.advantage[i];
    const double unclipped = r * A;
    const double s = clipped_surrogate(r, A, cfg.clip);
    out.surrogate_terms[i] = s;
    out.surrogate += s * inv;
    out.dlogp[i] = unclipped <= s ? -unclipped * inv : 0.0;
    if (std::abs(r - 1) > cfg.clip) out.clip_fraction += inv;
    const double dv = in.value[i] - in.ret[i];
    out.value_loss += dv * dv * inv;
    out.dvalue[i] = cfg.value_coef * 2 * dv * inv;
    out.entropy += in.entropy[i] * inv;
    out.approx_kl += (in.logp_old[i] - in.logp_new[i]) * inv;
  }
  out.loss = -out.surrogate + cfg.value_coef * out.value_loss - cfg.entropy_coef * out.entropy;
  return out;
}

// -- optimizer ----------------------------------------------------------------

AdamState adam_init(const nn::ParamSet<float>& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(nn::ParamSet<float>& params, const nn::ParamSet<float>& grads, AdamState& st, double lr,
               const PPOConfig& cfg) {
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1 - std::pow(b2, static_cast<double>(st.step));
  for (int i = 0; i < params.size(); ++i) {
    float* p = params[i].data();
    const float* g = grads[i].data();
    float* m = st.m[i].data();
    float* v = st.v[i].data();
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double mj = b1 * m[j] + (1 - b1) * g[j];
      const double vj = b2 * v[j] + (1 - b2) * static_cast<double>(g[j]) * g[j];
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] = static_cast<float>(p[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.adam_eps));
    }
  }
}

double grad_norm(const nn::ParamSet<float>& grads) {
  double s = 0;
  for (int i = 0; i < grads.size(); ++i) {
    for (float g : grads[i].storage()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(nn::ParamSet<float>& grads, double max_norm) {
  const double norm = grad_norm(grads);
  if (norm > max_norm && std::isfinite(norm)) {
    const float scale = static_cast<float>(max_norm / norm);
    for (int i = 0; i < grads.size(); ++i) {
      for (float& g : grads[i].storage()) g *= scale;
    }
  }
  return norm;
}

// -- gradients ----------------------------------------------------------------

namespace {

constexpr int kGradientChunks = 8;

struct ChunkResult {
  nn::ParamSet<float> grads;
  double loss = 0, entropy = 0, kl = 0, clip = 0;
};

}  // namespace

nn::ParamSet<float> minibatch_gradients(const nn::ParamSet<float>& params, const nn::NetConfig& net,
                                        const PPOConfig& cfg, std::span<const StepRecord* const> records,
                                        const std::vector<std::vector<double>>& adv, int threads,
                                        MinibatchStats* stats) {
  std::size_t total = 0;
  for (const auto* r : records) total += r->action.size();
  if (total == 0) throw InputError("minibatch_gradients: empty minibatch");
  const double share_unit = 1.0 / static_cast<double>(total);

  const int n = static_cast<int>(records.size());
  const int chunks = std::min(kGradientChunks, n);
  std::vector<ChunkResult> parts(chunks);
  parallel_for(
      chunks, threads,
      [&](int c) {
        ChunkResult& out = parts[c];
        out.grads = params.zeros_like();
        const int lo = static_cast<int>(static_cast<long>(n) * c / chunks);
        const int hi = static_cast<int>(static_cast<long>(n) * (c + 1) / chunks);
        for (int i = lo; i < hi; ++i) {
          const StepRecord& rec = *records[i];
          nn::PolicyForward<float> fwd(params, net, rec.obs);
          const int M = fwd.agents();
          if (rec.action.size() != static_cast<std::size_t>(M) || rec.logp_old.size() != rec.action.size() ||
              rec.ret.size() != rec.action.size() || adv[i].size() != rec.action.size()) {
            throw InputError("minibatch record " + std::to_string(i) + " is incomplete (advantages not computed?)");
          }
          std::vector<double> lnew(M), lold(M), A(M), V(M), R(M), H(M);
          std::vector<std::vector<float>> lps(M);
          for (int m = 0; m < M; ++m) {
            lps[m] = fwd.log_probs(m);
            lnew[m] = lps[m][rec.action[m]];
            lold[m] = rec.logp_old[m];
            A[m] = adv[i][m];
            V[m] = fwd.value(m);
            R[m] = rec.ret[m];
            double h = 0;
            for (float lp : lps[m]) h -= std::exp(static_cast<double>(lp)) * lp;
            H[m] = h;
          }
          LossResult lr;
          try {
            lr = ppo_loss({lnew, lold, A, V, R, H}, cfg);
          } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " of minibatch record " + std::to_string(i));
          }
          // ppo_loss averages over this record's M transitions; rescale to the minibatch mean.
          const double w = M * share_unit;
          std::vector<std::vector<float>> dlogp(M);
          std::vector<float> dvalue(M);
          for (int m = 0; m < M; ++m) {
            dlogp[m].assign(lps[m].size(), 0.0f);
            for (std::size_t j = 0; j < lps[m].size(); ++j) {
              const double p = std::exp(static_cast<double>(lps[m][j]));
              dlogp[m][j] = static_cast<float>(cfg.entropy_coef * share_unit * p * (lps[m][j] + 1.0));
            }
            dlogp[m][rec.action[m]] += static_cast<float>(lr.dlogp[m] * w);
            dvalue[m] = static_cast<float>(lr.dvalue[m] * w);
          }
          fwd.backward(dlogp, dvalue, out.grads);
          out.loss += lr.loss * w;
          out.entropy += lr.entropy * w;
          out.kl += lr.approx_kl * w;
          out.clip += lr.clip_fraction * w;
        }
      },
      [](int) { return std::string(); });

  nn::ParamSet<float> grads = std::move(parts[0].grads);
  MinibatchStats st;
  st.transitions = total;
  for (int c = 0; c < chunks; ++c) {
    if (c > 0) {
      for (int i = 0; i < grads.size(); ++i) {
        simd::axpy(1.0f, parts[c].grads[i].data(), grads[i].data(), grads[i].size());
      }
    }
    st.loss += parts[c].loss;
    st.entropy += parts[c].entropy;
    st.approx_kl += parts[c].kl;
    st.clip_fraction += parts[c].clip;
  }
  if (stats) *stats = st;
  return grads;
}

// -- Trainer ------------------------------------------------------------------

Trainer::Trainer(SimConfig sim, nn::NetConfig net, PPOConfig ppo, int threads)
    : sim_(std::move(sim)), net_(net), ppo_(ppo), threads_(std::max(threads, 1)) {
  sim_.validate();
  ppo_.validate();
  net_ = nn::net_config_for(sim_, net_);
  net_.validate();
  params_ = nn::init_policy_params<float>(net_, stream_seed(ppo_.seed, 1));
  adam_ = adam_init(params_);
  envs_.resize(ppo_.n_env);
  for (int e = 0; e < ppo_.n_env; ++e) {
    envs_[e].index = e;
    envs_[e].rng.seed(stream_seed(ppo_.seed, 100 + static_cast<std::uint64_t>(e)));
    reset_env(envs_[e]);
  }
}

void Trainer::reset_env(Env& env) {
  SimConfig c = sim_;
  c.mode = EpisodeMode::training;
  c.rollout_horizon = ppo_.rollout;
  c.seed = stream_seed(stream_seed(ppo_.seed, 200 + static_cast<std::uint64_t>(env.index)),
                       static_cast<std::uint64_t>(env.episodes));
  env.state = reset_episode(c);
  ++env.episodes;
}

RolloutBuffer Trainer::collect(bool greedy) {
  RolloutBuffer buf;
  buf.n_env = ppo_.n_env;
  buf.steps = ppo_.rollout;
  buf.agents = sim_.M;
  buf.records.resize(static_cast<std::size_t>(buf.n_env) * buf.steps);
  buf.bootstrap.assign(buf.n_env, std::vector<float>(buf.agents, 0.0f));
  const std::int64_t base = env_steps_;

  parallel_for(
      ppo_.n_env, threads_,
      [&](int e) {
        Env& env = envs_[e];
        for (int t = 0; t < buf.steps; ++t) {
          StepRecord& rec = buf.at(e, t);
          rec.obs = nn::make_policy_input(env.state);
          nn::PolicyForward<float> fwd(params_, net_, rec.obs);
          std::vector<int> nodes;
          for (int m = 0; m < fwd.agents(); ++m) {
            const auto lp = fwd.log_probs(m);
            const int a = greedy ? nn::argmax_action(lp) : nn::sample_action(lp, env.rng);
            rec.action.push_back(a);
            rec.logp_old.push_back(lp[a]);
            rec.value.push_back(fwd.value(m));
            nodes.push_back(fwd.candidates(m)[a]);
          }
          const StepOutcome out = advance_step(env.state, nodes);
          const std::int64_t k = base + static_cast<std::int64_t>(t) * ppo_.n_env + e;
          rec.reward = total_reward(k, out.terms);
          rec.done = env.state.actions_taken >= sim_.B || episode_done(env.state);
          if (rec.done) reset_env(env);
        }
        nn::PolicyForward<float> last(params_, net_, nn::make_policy_input(env.state));
        for (int m = 0; m < buf.agents; ++m) buf.bootstrap[e][m] = last.value(m);
      },
      [](int e) { return "environment " + std::to_string(e); });
  return buf;
}

TrainStats Trainer::update(RolloutBuffer& buf) {
  TrainStats stats;
  stats.iteration = iteration_;
  stats.lr = lr_at(ppo_, iteration_);
  double reward_sum = 0;
  for (const auto& r : buf.records) reward_sum += r.reward;
  stats.mean_reward = buf.records.empty() ? 0 : reward_sum / static_cast<double>(buf.records.size());

  compute_gae(buf, ppo_.gamma, ppo_.lambda);

  const nn::ParamSet<float> saved_params = params_;
  const AdamState saved_adam = adam_;
  Rng rng(stream_seed(ppo_.seed, 1'000'000 + static_cast<std::uint64_t>(iteration_)));
  const int R = static_cast<int>(buf.records.size());
  const int batches = std::min(ppo_.minibatches, R);
  std::vector<int> order(R);
  std::iota(order.begin(), order.end(), 0);

  double weight = 0;
  for (int epoch = 0; epoch < ppo_.epochs && !stats.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int b = 0; b < batches; ++b) {
      const int lo = static_cast<int>(static_cast<long>(R) * b / batches);
      const int hi = static_cast<int>(static_cast<long>(R) * (b + 1) / batches);
      std::vector<const StepRecord*> recs;
      std::vector<double> flat;
      for (int i = lo; i < hi; ++i) {
        recs.push_back(&buf.records[order[i]]);
        for (double a : buf.records[order[i]].advantage) flat.push_back(a);
      }
      normalize_advantages(flat);
      std::vector<std::vector<double>> adv(recs.size());
      std::size_t k = 0;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        adv[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(k),
                      flat.begin() + static_cast<std::ptrdiff_t>(k + recs[i]->action.size()));
        k += recs[i]->action.size();
      }

      MinibatchStats ms;
      nn::ParamSet<float> grads;
      try {
        grads = minibatch_gradients(params_, net_, ppo_, recs, adv, threads_, &ms);
      } catch (const NumericalError&) {
        stats.aborted = true;
      }
      if (stats.aborted || !grads.all_finite()) {
        stats.aborted = true;
        break;
      }
      clip_grad_norm(grads, ppo_.max_grad_norm);
      adam_step(params_, grads, adam_, stats.lr, ppo_);
      const double w = static_cast<double>(ms.transitions);
      stats.loss += ms.loss * w;
      stats.entropy += ms.entropy * w;
      stats.kl += ms.approx_kl * w;
      weight += w;
    }
  }
  if (stats.aborted) {
    params_ = saved_params;
    adam_ = saved_adam;
  }
  if (weight > 0) {
    stats.loss /= weight;
    stats.entropy /= weight;
    stats.kl /= weight;
  }
  return stats;
}

TrainStats Trainer::iterate() {
  RolloutBuffer buf = collect(false);
  TrainStats s = update(buf);
  env_steps_ += static_cast<std::int64_t>(ppo_.n_env) * ppo_.rollout;
  ++iteration_;
  s.env_steps = env_steps_;
  return s;
}

void Trainer::run(const std::filesystem::path& out, const std::string& header, const nlohmann::json& meta,
                  const std::function<void(const TrainStats&)>& on_iteration) {
  std::filesystem::create_directories(out);
  std::ofstream log(out / "train_log.csv");
  if (!log) throw Error("cannot write " + (out / "train_log.csv").string());
  log << header << "\n" << "iteration,env_steps,mean_reward,loss,entropy,kl,lr\n";

  auto checkpoint = [&](const std::string& name) {
    nlohmann::json m = meta;
    m["iteration"] = iteration_;
    m["env_steps"] = env_steps_;
    m["net"] = net_config_to_json(net_);
    save_checkpoint(out / name, params_, m);
  };

  const int total = ppo_.iterations();
  while (iteration_ < total) {
    const TrainStats s = iterate();
    log << s.iteration << ',' << s.env_steps << ',' << fmt_num(s.mean_reward) << ',' << fmt_num(s.loss) << ','
        << fmt_num(s.entropy) << ',' << fmt_num(s.kl) << ',' << fmt_num(s.lr) << '\n';
    log.flush();
    if (s.aborted) {
      std::fprintf(stderr, "iteration %d: non-finite gradient, update skipped\n", s.iteration);
    }
    if (iteration_ % ppo_.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06d.bin", iteration_);
      checkpoint(name);
    }
    if (on_iteration) on_iteration(s);
  }
  checkpoint("checkpoint_final.bin");
}

}  // namespace compass
