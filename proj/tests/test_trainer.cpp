#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "compass/errors.hpp"
#include "compass/trainer.hpp"

using namespace compass;

namespace {

// A_t = sum_l (gamma lambda)^l delta_{t+l}, truncated at the first done.
std::vector<double> gae_oracle(const std::vector<double>& r, const std::vector<double>& v,
                               const std::vector<std::uint8_t>& done, double boot, double g, double l) {
  const std::size_t T = r.size();
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double next = t + 1 < T ? v[t + 1] : boot;
    delta[t] = r[t] + (done[t] ? 0.0 : g * next) - v[t];
  }
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double w = 1;
    for (std::size_t u = t; u < T; ++u) {
      adv[t] += w * delta[u];
      if (done[u]) break;
      w *= g * l;
    }
  }
  return adv;
}

SimConfig tiny_sim() {
  SimConfig c;
  c.K = 8;
  c.k_nn = 3;
  c.M = 2;
  c.N = 2;
  c.B = 3;
  c.d_pe = 3;
  c.history_slots = 3;
  c.stride = 1;
  c.r_sense = 0.3;
  return c;
}

nn::NetConfig tiny_net() {
  nn::NetConfig n;
  n.d_model = 8;
  n.heads = 2;
  n.critic_hidden = 8;
  n.ff_mult = 2;
  n.spatial_layers = 1;
  return n;
}

PPOConfig tiny_ppo(int n_env = 2, int T = 4) {
  PPOConfig p;
  p.n_env = n_env;
  p.rollout = T;
  p.epochs = 2;
  p.minibatches = 2;
  p.lr0 = 1e-3;
  p.seed = 5;
  p.total_env_steps = static_cast<std::int64_t>(n_env) * T * 2;
  return p;
}

bool params_equal(const nn::ParamSet<float>& a, const nn::ParamSet<float>& b) {
  if (a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i) {
    if (a[i].storage() != b[i].storage()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gae hand-computed three-step case") {
  const std::vector<double> r{1, 0, 1}, v{0.5, 0.5, 0.5};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const double g = 0.9, l = 0.8;
  std::vector<double> a(3), ret(3);
  compute_gae(r, v, d, 0.0, g, l, a, ret);
  // delta = (0.95, -0.05, 0.5)
  const double a2 = 0.5;
  const double a1 = -0.05 + 0.72 * a2;
  const double a0 = 0.95 + 0.72 * a1;
  CHECK(a[2] == doctest::Approx(a2).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(a1).epsilon(1e-12));
  CHECK(a[0] == doctest::Approx(a0).epsilon(1e-12));
  for (int t = 0; t < 3; ++t) CHECK(ret[t] == doctest::Approx(a[t] + v[t]).epsilon(1e-12));
}

TEST_CASE("gae matches the explicit discounted sum") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 1 + static_cast<int>(uniform01(rng) * 12);
    std::vector<double> r(T), v(T);
    std::vector<std::uint8_t> d(T);
    for (int t = 0; t < T; ++t) {
      r[t] = 2 * uniform01(rng) - 1;
      v[t] = 2 * uniform01(rng) - 1;
      d[t] = uniform01(rng) < 0.2 ? 1 : 0;
    }
    const double boot = uniform01(rng), g = 0.99, l = 0.95;
    std::vector<double> a(T), ret(T);
    compute_gae(r, v, d, boot, g, l, a, ret);
    const auto expect = gae_oracle(r, v, d, boot, g, l);
    for (int t = 0; t < T; ++t) CHECK(std::abs(a[t] - expect[t]) < 1e-10);
  }
}

TEST_CASE("gae does not bootstrap across an episode end") {
  const std::vector<double> r{1, 1}, v{0, 0};
  std::vector<double> a(2), ret(2);
  const std::vector<std::uint8_t> d{1, 0};
  compute_gae(r, v, d, 100.0, 0.9, 0.9, a, ret);
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(a[1] == doctest::Approx(1 + 0.9 * 100).epsilon(1e-14));

  const std::vector<std::uint8_t> last{0, 1};
  compute_gae(r, v, last, 100.0, 0.9, 0.9, a, ret);
  CHECK(a[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("gae rejects mismatched lengths") {
  std::vector<double> r(3), v(2), a(3), ret(3);
  std::vector<std::uint8_t> d(3);
  CHECK_THROWS_AS(compute_gae(r, v, d, 0, 0.9, 0.9, a, ret), InputError);
}

TEST_CASE("clipped surrogate arithmetic") {
  CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
  CHECK(clipped_surrogate(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
  CHECK(clipped_surrogate(1.1, 2.0, 0.2) == doctest::Approx(2.2));
}

TEST_CASE("learning rate schedule steps every period") {
  PPOConfig c;
  CHECK(lr_at(c, 0) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(c, 63) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(c, 64) == doctest::Approx(9.6e-5).epsilon(1e-12));
  CHECK(lr_at(c, 128) == doctest::Approx(9.216e-5).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(c, -1), ContractError);
}

TEST_CASE("ppo config validation") {
  PPOConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PPOConfig{};
  c.n_env = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PPOConfig{};
  c.total_env_steps = 1000;
  c.n_env = 3;
  c.rollout = 100;
  CHECK(c.iterations() == 4);
}

TEST_CASE("advantage normalization") {
  std::vector<double> a{1, 2, 3, 4, 10};
  normalize_advantages(a);
  double mean = 0, var = 0;
  for (double x : a) mean += x;
  mean /= a.size();
  for (double x : a) var += (x - mean) * (x - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::sqrt(var / a.size()) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> flat{3, 3, 3};
  normalize_advantages(flat);
  for (double x : flat) CHECK(x == 0.0);
}

TEST_CASE("ppo loss gradient matches finite differences") {
  PPOConfig cfg;
  cfg.value_coef = 0.7;
  cfg.entropy_coef = 0.0;
  std::vector<double> lnew{-0.1, -1.0, -0.7, -2.0, -0.4};
  const std::vector<double> lold{-0.3, -0.9, -0.75, -1.5, -0.4};
  const std::vector<double> A{1.0, -0.5, 2.0, 1.0, -1.0};
  std::vector<double> V{0.1, 0.2, -0.3, 0.4, 0.0};
  const std::vector<double> R{0.5, 0.0, 0.0, 1.0, -1.0};
  const std::vector<double> H(5, 0.3);
  auto loss = [&] { return ppo_loss({lnew, lold, A, V, R, H}, cfg).loss; };
  const LossResult base = ppo_loss({lnew, lold, A, V, R, H}, cfg);
  const double h = 1e-6;
  for (int i = 0; i < 5; ++i) {
    const double keep = lnew[i];
    lnew[i] = keep + h;
    const double up = loss();
    lnew[i] = keep - h;
    const double dn = loss();
    lnew[i] = keep;
    CHECK(base.dlogp[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));

    const double vk = V[i];
    V[i] = vk + h;
    const double vu = loss();
    V[i] = vk - h;
    const double vd = loss();
    V[i] = vk;
    CHECK(base.dvalue[i] == doctest::Approx((vu - vd) / (2 * h)).epsilon(1e-6));
  }
  // |r-1| > 0.2 at index 0 (exp(0.2)) and index 3 (exp(-0.5)).
  CHECK(base.clip_fraction == doctest::Approx(0.4));
}

TEST_CASE("ppo loss rejects non-finite ratios") {
  PPOConfig cfg;
  const std::vector<double> lnew{0.0}, lold{-1e30}, a{1}, v{0}, r{0}, h{0};
  CHECK_THROWS_AS(ppo_loss({lnew, lold, a, v, r, h}, cfg), NumericalError);
}

TEST_CASE("adam first step moves each scalar by about lr against the gradient sign") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo());
  nn::ParamSet<float> p = tr.params();
  const nn::ParamSet<float> before = p;
  nn::ParamSet<float> g = p.zeros_like();
  g[0].storage()[0] = 0.3f;
  g[1].storage()[0] = -2.0f;
  AdamState st = adam_init(p);
  PPOConfig cfg;
  adam_step(p, g, st, 0.01, cfg);
  CHECK(st.step == 1);
  CHECK(p[0].storage()[0] == doctest::Approx(before[0].storage()[0] - 0.01).epsilon(1e-4));
  CHECK(p[1].storage()[0] == doctest::Approx(before[1].storage()[0] + 0.01).epsilon(1e-4));
  CHECK(p[0].storage()[1] == before[0].storage()[1]);

  // second step with the same gradient: m_hat = g, v_hat = g^2 again
  adam_step(p, g, st, 0.01, cfg);
  CHECK(p[0].storage()[0] == doctest::Approx(before[0].storage()[0] - 0.02).epsilon(1e-4));
}

TEST_CASE("gradient norm clipping") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo());
  nn::ParamSet<float> g = tr.params().zeros_like();
  g[0].storage()[0] = 3;
  g[1].storage()[0] = 4;
  CHECK(clip_grad_norm(g, 0.5) == doctest::Approx(5.0));
  CHECK(grad_norm(g) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(clip_grad_norm(g, 10) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(grad_norm(g) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("one env and one step yields M transitions") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo(1, 1));
  RolloutBuffer buf = tr.collect();
  CHECK(buf.records.size() == 1);
  CHECK(buf.transitions() == 2);
  CHECK(buf.at(0, 0).action.size() == 2);
  CHECK(buf.bootstrap.size() == 1);
}

TEST_CASE("rollout records episode ends at the action budget") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo(1, 7));
  RolloutBuffer buf = tr.collect();
  int dones = 0;
  for (int t = 0; t < 7; ++t) dones += buf.at(0, t).done ? 1 : 0;
  CHECK(buf.at(0, 2).done);
  CHECK(buf.at(0, 5).done);
  CHECK(dones == 2);
}

TEST_CASE("buffer gae equals per-agent scalar gae") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo(2, 5));
  RolloutBuffer buf = tr.collect();
  compute_gae(buf, 0.99, 0.95);
  for (int e = 0; e < 2; ++e) {
    for (int m = 0; m < 2; ++m) {
      std::vector<double> r, v;
      std::vector<std::uint8_t> d;
      for (int t = 0; t < 5; ++t) {
        r.push_back(buf.at(e, t).reward);
        v.push_back(buf.at(e, t).value[m]);
        d.push_back(buf.at(e, t).done);
      }
      const auto expect = gae_oracle(r, v, d, buf.bootstrap[e][m], 0.99, 0.95);
      for (int t = 0; t < 5; ++t) {
        CHECK(std::abs(buf.at(e, t).advantage[m] - expect[t]) < 1e-9);
        CHECK(buf.at(e, t).ret[m] == doctest::Approx(expect[t] + v[t]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("surrogate gradient at ratio one is the vanilla policy gradient") {
  PPOConfig cfg = tiny_ppo(2, 3);
  cfg.entropy_coef = 0;
  cfg.value_coef = 0;
  Trainer tr(tiny_sim(), tiny_net(), cfg);
  RolloutBuffer buf = tr.collect();
  compute_gae(buf, cfg.gamma, cfg.lambda);
  std::vector<const StepRecord*> recs;
  std::vector<std::vector<double>> adv;
  Rng rng(9);
  for (const auto& r : buf.records) {
    recs.push_back(&r);
    std::vector<double> a;
    for (std::size_t m = 0; m < r.action.size(); ++m) a.push_back(2 * uniform01(rng) - 1);
    adv.push_back(a);
  }
  const nn::ParamSet<float> grads = minibatch_gradients(tr.params(), tr.net(), cfg, recs, adv, 1, nullptr);

  // J = mean A log pi(a), differentiated numerically in double.
  nn::ParamSet<double> p = tr.params().cast<double>();
  std::size_t n = 0;
  for (const auto* r : recs) n += r->action.size();
  auto objective = [&] {
    double j = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      nn::PolicyForward<double> fwd(p, tr.net(), recs[i]->obs);
      for (int m = 0; m < fwd.agents(); ++m) j += adv[i][m] * fwd.log_probs(m)[recs[i]->action[m]];
    }
    return j / static_cast<double>(n);
  };
  double dot = 0, na = 0, nb = 0;
  const double h = 1e-5;
  for (int i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      double& x = p[i].storage()[j];
      const double keep = x;
      x = keep + h;
      const double up = objective();
      x = keep - h;
      const double dn = objective();
      x = keep;
      const double fd = -(up - dn) / (2 * h);
      const double an = grads[i].storage()[j];
      dot += fd * an;
      na += an * an;
      nb += fd * fd;
    }
  }
  REQUIRE(nb > 0);
  CHECK(dot / std::sqrt(na * nb) > 0.999);
}

TEST_CASE("minibatch gradients reject records without returns") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo(1, 2));
  RolloutBuffer buf = tr.collect();
  std::vector<const StepRecord*> recs{&buf.records[0]};
  std::vector<std::vector<double>> adv{std::vector<double>(2, 0.0)};
  CHECK_THROWS_AS(minibatch_gradients(tr.params(), tr.net(), tr.ppo(), recs, adv, 1, nullptr), InputError);
}

TEST_CASE("zero advantages and no entropy or value terms leave parameters unchanged") {
  PPOConfig cfg = tiny_ppo(2, 3);
  cfg.entropy_coef = 0;
  cfg.value_coef = 0;
  Trainer tr(tiny_sim(), tiny_net(), cfg);
  RolloutBuffer buf = tr.collect();
  compute_gae(buf, cfg.gamma, cfg.lambda);
  std::vector<const StepRecord*> recs;
  std::vector<std::vector<double>> adv;
  for (const auto& r : buf.records) {
    recs.push_back(&r);
    adv.emplace_back(r.action.size(), 0.0);
  }
  const nn::ParamSet<float> g = minibatch_gradients(tr.params(), tr.net(), cfg, recs, adv, 1, nullptr);
  CHECK(grad_norm(g) == 0.0);
  nn::ParamSet<float> p = tr.params();
  AdamState st = adam_init(p);
  adam_step(p, g, st, 1e-3, cfg);
  CHECK(params_equal(p, tr.params()));
}

TEST_CASE("minibatch gradients do not depend on the thread count") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo(3, 4));
  RolloutBuffer buf = tr.collect();
  compute_gae(buf, 0.99, 0.95);
  std::vector<const StepRecord*> recs;
  std::vector<std::vector<double>> adv;
  for (const auto& r : buf.records) {
    recs.push_back(&r);
    adv.push_back(r.advantage);
  }
  const auto g1 = minibatch_gradients(tr.params(), tr.net(), tr.ppo(), recs, adv, 1, nullptr);
  const auto g4 = minibatch_gradients(tr.params(), tr.net(), tr.ppo(), recs, adv, 4, nullptr);
  CHECK(params_equal(g1, g4));
}

TEST_CASE("training is deterministic across thread counts") {
  Trainer a(tiny_sim(), tiny_net(), tiny_ppo(3, 4), 1);
  Trainer b(tiny_sim(), tiny_net(), tiny_ppo(3, 4), 3);
  for (int i = 0; i < 2; ++i) {
    const TrainStats sa = a.iterate();
    const TrainStats sb = b.iterate();
    CHECK(sa.mean_reward == sb.mean_reward);
    CHECK(sa.loss == sb.loss);
    CHECK_FALSE(sa.aborted);
  }
  CHECK(params_equal(a.params(), b.params()));
  CHECK(a.env_steps() == 24);
  CHECK(a.iteration() == 2);
}

TEST_CASE("an update changes parameters") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo());
  const nn::ParamSet<float> before = tr.params();
  const TrainStats s = tr.iterate();
  CHECK_FALSE(s.aborted);
  CHECK(std::isfinite(s.loss));
  CHECK_FALSE(params_equal(before, tr.params()));
}

TEST_CASE("non-finite ratio aborts the update and restores parameters") {
  Trainer tr(tiny_sim(), tiny_net(), tiny_ppo());
  const nn::ParamSet<float> before = tr.params();
  RolloutBuffer buf = tr.collect();
  for (auto& r : buf.records) r.logp_old[0] = -1e30f;
  const TrainStats s = tr.update(buf);
  CHECK(s.aborted);
  CHECK(params_equal(before, tr.params()));

  RolloutBuffer clean = tr.collect();
  CHECK_FALSE(tr.update(clean).aborted);
  CHECK_FALSE(params_equal(before, tr.params()));
}
