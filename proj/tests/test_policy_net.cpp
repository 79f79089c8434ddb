#include <doctest.h>

#include <cmath>
#include <numeric>
#include <string>

#include "compass/errors.hpp"
#include "compass/policy_net.hpp"
#include "support.hpp"

using namespace compass;
using namespace compass::nn;
using Md = Matrix<double>;

namespace {

// ---- naive reference implementations (independent of the tape) ----------

Md naive_matmul(const Md& a, const Md& b) {
  Md c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (int p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Md naive_linear(const Md& x, const ParamSet<double>& P, const std::string& p) {
  Md y = naive_matmul(x, P.at(p + ".w"));
  const Md& b = P.at(p + ".b");
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
  return y;
}

Md naive_add(Md a, const Md& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
  return a;
}

Md naive_ln(const Md& x, const ParamSet<double>& P, const std::string& p) {
  const Md& g = P.at(p + ".g");
  const Md& b = P.at(p + ".b");
  Md y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < x.cols(); ++j) mu += x(i, j);
    mu /= x.cols();
    for (int j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= x.cols();
    for (int j = 0; j < x.cols(); ++j) y(i, j) = g(0, j) * (x(i, j) - mu) / std::sqrt(var + 1e-5) + b(0, j);
  }
  return y;
}

Md naive_gelu(Md x) {
  for (auto& v : x.storage())
    v = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
  return x;
}

Md naive_ff(const Md& x, const ParamSet<double>& P, const std::string& p) {
  return naive_linear(naive_gelu(naive_linear(x, P, p + ".ff1")), P, p + ".ff2");
}

/// softmax(q k^T / sqrt(dh)) v per head; mask[j] = 0 drops key j.
Md naive_mha(const Md& q_in, const Md& kv_in, const std::vector<int>& mask, int heads,
             const ParamSet<double>& P, const std::string& p, std::vector<double>* weights = nullptr) {
  Md q = naive_linear(q_in, P, p + ".q"), k = naive_linear(kv_in, P, p + ".k"),
     v = naive_linear(kv_in, P, p + ".v");
  const int d = q.cols(), dh = d / heads;
  Md out(q.rows(), d);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < q.rows(); ++i) {
      std::vector<double> s(k.rows(), -INFINITY);
      double mx = -INFINITY;
      for (int j = 0; j < k.rows(); ++j) {
        if (!mask.empty() && !mask[j]) continue;
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        s[j] = dot / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (int j = 0; j < k.rows(); ++j) z += std::isinf(s[j]) ? 0 : std::exp(s[j] - mx);
      for (int j = 0; j < k.rows(); ++j) {
        const double w = std::isinf(s[j]) ? 0 : std::exp(s[j] - mx) / z;
        if (weights) weights->push_back(w);
        for (int c = 0; c < dh; ++c) out(i, h * dh + c) += w * v(j, h * dh + c);
      }
    }
  return naive_linear(out, P, p + ".o");
}

Md row_of(const Md& m, int r) {
  Md out(1, m.cols());
  for (int j = 0; j < m.cols(); ++j) out(0, j) = m(r, j);
  return out;
}

Md random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Md m(r, c);
  for (auto& x : m.storage()) x = (2 * uniform01(rng) - 1) * scale;
  return m;
}

double max_abs_diff(const Md& a, const Md& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

struct Fixture {
  SimState state = testing::small_state();
  NetConfig cfg = testing::small_net(state);
  ParamSet<double> params = init_policy_params<double>(cfg, 3);
  Fixture() { testing::randomize(params, 99); }
};

}  // namespace

TEST_CASE("param specs list unique names with declared shapes") {
  NetConfig cfg;
  const auto specs = policy_param_specs(cfg);
  ParamSet<float> p(specs);
  CHECK(p.size() == static_cast<int>(specs.size()));
  CHECK(p.at("temporal.time_enc").rows() == cfg.slots);
  CHECK(p.at("spatial.presence_emb").rows() == 2);
  CHECK(p.at("fusion.w").rows() == cfg.d_model + 1);
  CHECK(p.at("critic.l1.w").rows() == cfg.agents * cfg.d_model);
  CHECK(p.at("critic.l1.w").cols() == 128);
  cfg.critic = CriticMode::decentralized;
  CHECK(ParamSet<float>(policy_param_specs(cfg)).at("critic.l1.w").rows() == cfg.d_model);
  CHECK_THROWS_AS(p.index("nope"), InputError);
}

TEST_CASE("init is deterministic and finite") {
  NetConfig cfg;
  auto a = init_policy_params<float>(cfg, 5);
  auto b = init_policy_params<float>(cfg, 5);
  auto c = init_policy_params<float>(cfg, 6);
  CHECK(a.all_finite());
  CHECK(a.at("actor.wq").storage() == b.at("actor.wq").storage());
  CHECK(a.at("actor.wq").storage() != c.at("actor.wq").storage());
  CHECK(a.at("temporal.ln_ff.g")(0, 0) == 1.0f);
}

TEST_CASE("target encoder") {
  Fixture f;
  const int H = 2, K = 3, W = f.cfg.feature_width();
  Rng rng(1);

  SUBCASE("zero input and zero bias give zero output") {
    auto P = f.params;
    for (auto n : {"enc.gp.b", "enc.presence.b", "enc.coord.b", "enc.out.b"}) P.at(n).fill(0);
    Tape<double> t;
    Binder<double> b(t, P);
    Var y = target_encoder(b, Md(K * H, W), H, f.cfg.targets);
    for (double v : t.value(y).storage()) CHECK(v == 0.0);
  }

  SUBCASE("matches a naive matmul oracle") {
    Md x = random_matrix(K * H, W, rng);
    Tape<double> t;
    Binder<double> b(t, f.params);
    Var y = target_encoder(b, x, H, f.cfg.targets);
    Md gp(K * H, 4 * f.cfg.targets), pr(K * H, 1), co(K * H, 2);
    for (int r = 0; r < K * H; ++r) {
      for (int c = 0; c < 4 * f.cfg.targets; ++c) gp(r, c) = x(r, c);
      pr(r, 0) = x(r, W - 3);
      co(r, 0) = x(r, W - 2);
      co(r, 1) = x(r, W - 1);
    }
    Md a = naive_linear(gp, f.params, "enc.gp"), p = naive_linear(pr, f.params, "enc.presence"),
       c = naive_linear(co, f.params, "enc.coord");
    const int d = f.cfg.d_model;
    Md cat(K * H, 3 * d);
    for (int r = 0; r < K * H; ++r)
      for (int j = 0; j < d; ++j) {
        cat(r, j) = a(r, j);
        cat(r, d + j) = p(r, j);
        cat(r, 2 * d + j) = c(r, j);
      }
    CHECK(max_abs_diff(t.value(y), naive_linear(cat, f.params, "enc.out")) < 1e-6);
  }

  SUBCASE("GP block contributes additively") {
    auto P = f.params;
    for (auto n : {"enc.gp.b", "enc.presence.b", "enc.coord.b", "enc.out.b"}) P.at(n).fill(0);
    Md x = random_matrix(K * H, W, rng);
    Md x2 = x, gp_only(K * H, W);
    for (int r = 0; r < K * H; ++r)
      for (int c = 0; c < 4 * f.cfg.targets; ++c) {
        x2(r, c) *= 2;
        gp_only(r, c) = x(r, c);
      }
    auto run = [&](const Md& in) {
      Tape<double> t;
      Binder<double> b(t, P);
      return t.value(target_encoder(b, in, H, f.cfg.targets));
    };
    CHECK(max_abs_diff(run(x2), naive_add(run(x), run(gp_only))) < 1e-12);
  }

  SUBCASE("non-finite input reports node and slot") {
    Md x(K * H, W);
    x(2 * H + 1, 0) = NAN;
    Tape<double> t;
    Binder<double> b(t, f.params);
    try {
      target_encoder(b, x, H, f.cfg.targets);
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("node 2, slot 1") != std::string::npos);
    }
  }
}

TEST_CASE("temporal decoder") {
  Fixture f;
  const int d = f.cfg.d_model, K = 2, H = 2;
  Rng rng(2);
  Md emb = random_matrix(K * H, d, rng);

  SUBCASE("two-slot instance matches a hand-rolled decoder") {
    const std::vector<std::uint8_t> valid{1, 1};
    Tape<double> t;
    Binder<double> b(t, f.params);
    Var att;
    Var y = temporal_decoder(b, t.constant(emb), K, valid, f.cfg, &att);

    const Md& te = f.params.at("temporal.time_enc");
    for (int v = 0; v < K; ++v) {
      Md mem(H, d);
      for (int h = 0; h < H; ++h)
        for (int j = 0; j < d; ++j) mem(h, j) = emb(v * H + h, j) + te(h, j);
      Md x = row_of(mem, H - 1);
      Md ln = naive_ln(x, f.params, "temporal.ln_self");
      x = naive_add(x, naive_mha(ln, ln, {}, f.cfg.heads, f.params, "temporal.self"));
      x = naive_add(x, naive_mha(naive_ln(x, f.params, "temporal.ln_cross"), mem, {}, f.cfg.heads,
                                 f.params, "temporal.cross"));
      x = naive_add(x, naive_ff(naive_ln(x, f.params, "temporal.ln_ff"), f.params, "temporal"));
      CHECK(max_abs_diff(row_of(t.value(y), v), x) < 1e-6);
    }
  }

  SUBCASE("single valid slot gets weight exactly one; masked slots exactly zero") {
    const std::vector<std::uint8_t> valid{0, 1};
    Tape<double> t;
    Binder<double> b(t, f.params);
    Var att;
    temporal_decoder(b, t.constant(emb), K, valid, f.cfg, &att);
    const auto& w = t.attention_weights(att);
    REQUIRE(w.size() == static_cast<std::size_t>(K * f.cfg.heads * H));
    for (std::size_t i = 0; i < w.size(); i += H) {
      CHECK(w[i] == 0.0);
      CHECK(w[i + 1] == 1.0);
    }
  }

  SUBCASE("rows sum to one over unmasked slots") {
    const int H3 = 3;
    Md e3 = random_matrix(K * H3, d, rng);
    NetConfig c3 = f.cfg;
    c3.slots = H3;
    ParamSet<double> P3 = init_policy_params<double>(c3, 4);
    testing::randomize(P3, 8);
    const std::vector<std::uint8_t> valid{0, 1, 1};
    Tape<double> t;
    Binder<double> b(t, P3);
    Var att;
    temporal_decoder(b, t.constant(e3), K, valid, c3, &att);
    const auto& w = t.attention_weights(att);
    for (std::size_t i = 0; i < w.size(); i += H3) {
      CHECK(w[i] == 0.0);
      CHECK(w[i + 1] + w[i + 2] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("all slots masked is an error") {
    Tape<double> t;
    Binder<double> b(t, f.params);
    const std::vector<std::uint8_t> none{0, 0};
    CHECK_THROWS_AS(temporal_decoder(b, t.constant(emb), K, none, f.cfg), ContractError);
  }

  SUBCASE("uniform mean over valid slots") {
    const std::vector<std::uint8_t> valid{1, 1};
    Tape<double> t;
    Binder<double> b(t, f.params);
    Var y = temporal_mean(b, t.constant(emb), K, valid);
    for (int v = 0; v < K; ++v)
      for (int j = 0; j < d; ++j) CHECK(t.value(y)(v, j) == doctest::Approx(0.5 * (emb(2 * v, j) + emb(2 * v + 1, j))));
  }
}

TEST_CASE("spatial encoder") {
  Fixture f;
  const int d = f.cfg.d_model;
  Rng rng(3);

  auto encode = [&](const Md& e, const Md& pe, const std::vector<std::uint8_t>& pres,
                    const std::vector<double>& dist, std::vector<Var>* att = nullptr,
                    std::unique_ptr<Tape<double>>* keep = nullptr) {
    auto t = std::make_unique<Tape<double>>();
    Binder<double> b(*t, f.params);
    Var y = spatial_encoder(b, t->constant(e), pe, pres, dist, nullptr, f.cfg, att);
    Md out = t->value(y);
    if (keep) *keep = std::move(t);
    return out;
  };

  SUBCASE("three-node instance matches a hand-rolled encoder") {
    const int K = 3;
    Md e = random_matrix(K, d, rng), pe = random_matrix(K, f.cfg.d_pe, rng);
    std::vector<std::uint8_t> pres{0, 1, 0};
    std::vector<double> dist{0.3, 0.0, 0.7};
    Md got = encode(e, pe, pres, dist);

    Md x = naive_add(e, naive_linear(pe, f.params, "spatial.pe"));
    const Md& emb = f.params.at("spatial.presence_emb");
    for (int v = 0; v < K; ++v)
      for (int j = 0; j < d; ++j) x(v, j) += emb(pres[v], j);
    for (int l = 0; l < f.cfg.spatial_layers; ++l) {
      const std::string p = "spatial.l" + std::to_string(l);
      Md h = naive_ln(x, f.params, p + ".ln_attn");
      x = naive_add(x, naive_mha(h, h, {}, f.cfg.heads, f.params, p + ".attn"));
      x = naive_add(x, naive_ff(naive_ln(x, f.params, p + ".ln_ff"), f.params, p));
    }
    Md cat(K, d + 1);
    for (int v = 0; v < K; ++v) {
      for (int j = 0; j < d; ++j) cat(v, j) = x(v, j);
      cat(v, d) = dist[v];
    }
    CHECK(max_abs_diff(got, naive_linear(cat, f.params, "fusion")) < 1e-5);
  }

  SUBCASE("single node attends to itself with weight one") {
    std::vector<Var> att;
    std::unique_ptr<Tape<double>> t;
    encode(random_matrix(1, d, rng), random_matrix(1, f.cfg.d_pe, rng), {1}, {0.0}, &att, &t);
    REQUIRE(att.size() == 2u);
    for (Var a : att)
      for (double w : t->attention_weights(a)) CHECK(w == 1.0);
  }

  SUBCASE("node permutation equivariance") {
    const int K = 6;
    Md e = random_matrix(K, d, rng), pe = random_matrix(K, f.cfg.d_pe, rng);
    std::vector<std::uint8_t> pres{0, 1, 0, 0, 1, 0};
    std::vector<double> dist{0.1, 0, 0.4, 0.2, 0, 0.9};
    const std::vector<int> perm{4, 2, 5, 0, 3, 1};
    Md e2(K, d), pe2(K, f.cfg.d_pe);
    std::vector<std::uint8_t> pres2(K);
    std::vector<double> dist2(K);
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < d; ++j) e2(i, j) = e(perm[i], j);
      for (int j = 0; j < f.cfg.d_pe; ++j) pe2(i, j) = pe(perm[i], j);
      pres2[i] = pres[perm[i]];
      dist2[i] = dist[perm[i]];
    }
    Md a = encode(e, pe, pres, dist), b = encode(e2, pe2, pres2, dist2);
    for (int i = 0; i < K; ++i) CHECK(max_abs_diff(row_of(b, i), row_of(a, perm[i])) < 1e-12);
  }

  SUBCASE("attention rows sum to one") {
    const int K = 4;
    std::vector<Var> att;
    std::unique_ptr<Tape<double>> t;
    encode(random_matrix(K, d, rng), random_matrix(K, f.cfg.d_pe, rng), {0, 0, 1, 0}, {1, 1, 0, 1}, &att, &t);
    for (Var a : att) {
      const auto& w = t->attention_weights(a);
      for (std::size_t i = 0; i < w.size(); i += K)
        CHECK(std::accumulate(w.begin() + i, w.begin() + i + K, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(encode(random_matrix(3, d, rng), random_matrix(2, f.cfg.d_pe, rng), {0, 0, 0}, {0, 0, 0}),
                    InputError);
    CHECK_THROWS_AS(encode(random_matrix(3, d, rng), random_matrix(3, f.cfg.d_pe, rng), {0, 0}, {0, 0, 0}),
                    InputError);
  }
}

TEST_CASE("actor pointer head") {
  Fixture f;
  const int d = f.cfg.d_model;
  Rng rng(4);
  Md e = random_matrix(6, d, rng);

  auto logp = [&](const Md& feats, int agent, std::vector<int> nbrs) {
    Tape<double> t;
    Binder<double> b(t, f.params);
    return t.value(actor_logits(b, t.constant(feats), agent, nbrs)).storage();
  };

  SUBCASE("one neighbor has log-probability zero") { CHECK(logp(e, 0, {3})[0] == 0.0); }

  SUBCASE("identical neighbor features give a uniform distribution") {
    Md same = e;
    for (int j = 0; j < d; ++j) same(2, j) = same(4, j) = same(5, j) = e(1, j);
    for (double v : logp(same, 0, {2, 4, 5})) CHECK(v == doctest::Approx(std::log(1.0 / 3)).epsilon(1e-14));
  }

  SUBCASE("three neighbors match a direct softmax") {
    const std::vector<int> nbrs{1, 3, 5};
    const auto got = logp(e, 2, nbrs);
    Md q = naive_matmul(row_of(e, 2), f.params.at("actor.wq"));
    std::vector<double> s;
    for (int n : nbrs) {
      Md k = naive_matmul(row_of(e, n), f.params.at("actor.wk"));
      double dot = 0;
      for (int j = 0; j < d; ++j) dot += q(0, j) * k(0, j);
      s.push_back(dot / std::sqrt(double(d)));
    }
    double z = 0;
    for (double v : s) z += std::exp(v);
    double total = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(std::abs(got[i] - (s[i] - std::log(z))) < 1e-8);
      total += std::exp(got[i]);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }

  SUBCASE("empty neighbor set is an error") { CHECK_THROWS_AS(logp(e, 0, {}), ContractError); }
}

TEST_CASE("critic head") {
  Fixture f;
  const int d = f.cfg.d_model;
  Rng rng(5);
  Md e = random_matrix(5, d, rng);
  auto value = [&](const ParamSet<double>& P, const Md& feats, std::vector<int> agents, const NetConfig& cfg) {
    Tape<double> t;
    Binder<double> b(t, P);
    return t.value(critic_value(b, t.constant(feats), agents, cfg));
  };

  SUBCASE("zero weights return the output bias") {
    auto P = f.params;
    P.at("critic.l1.w").fill(0);
    P.at("critic.l1.b").fill(0);
    P.at("critic.l2.w").fill(0);
    P.at("critic.l2.b").fill(0.375);
    CHECK(value(P, Md(5, d), {0, 1}, f.cfg)(0, 0) == 0.375);
  }

  SUBCASE("matches a naive MLP over concatenated agent features") {
    const std::vector<int> agents{3, 1};
    Md cat(1, 2 * d);
    for (int m = 0; m < 2; ++m)
      for (int j = 0; j < d; ++j) cat(0, m * d + j) = e(agents[m], j);
    Md h = naive_linear(cat, f.params, "critic.l1");
    for (auto& v : h.storage()) v = std::tanh(v);
    const double want = naive_linear(h, f.params, "critic.l2")(0, 0);
    CHECK(std::abs(value(f.params, e, agents, f.cfg)(0, 0) - want) < 1e-6);
    CHECK(value(f.params, e, agents, f.cfg)(0, 0) == value(f.params, e, agents, f.cfg)(0, 0));
  }

  SUBCASE("invariant under node relabeling") {
    const std::vector<int> perm{2, 4, 0, 1, 3};  // new row i holds old node perm[i]
    Md e2(5, d);
    std::vector<int> inv(5);
    for (int i = 0; i < 5; ++i) {
      inv[perm[i]] = i;
      for (int j = 0; j < d; ++j) e2(i, j) = e(perm[i], j);
    }
    CHECK(value(f.params, e, {3, 1}, f.cfg)(0, 0) == value(f.params, e2, {inv[3], inv[1]}, f.cfg)(0, 0));
  }

  SUBCASE("wrong agent count") { CHECK_THROWS_AS(value(f.params, e, {1}, f.cfg), InputError); }

  SUBCASE("decentralized head gives one value per agent") {
    NetConfig c = f.cfg;
    c.critic = CriticMode::decentralized;
    ParamSet<double> P = init_policy_params<double>(c, 1);
    Md v = value(P, e, {3, 1}, c);
    CHECK(v.rows() == 2);
    CHECK(v(0, 0) != v(1, 0));
  }
}

namespace {

struct LossSeeds {
  std::vector<std::vector<double>> dlogp;
  std::vector<double> dvalue;
};

LossSeeds random_seeds(const PolicyForward<double>& fwd, std::uint64_t seed) {
  Rng rng(seed);
  LossSeeds s;
  for (int m = 0; m < fwd.agents(); ++m) {
    std::vector<double> g(fwd.candidates(m).size());
    for (auto& x : g) x = 2 * uniform01(rng) - 1;
    s.dlogp.push_back(g);
    s.dvalue.push_back(2 * uniform01(rng) - 1);
  }
  return s;
}

double loss(const PolicyForward<double>& fwd, const LossSeeds& s) {
  double l = 0;
  for (int m = 0; m < fwd.agents(); ++m) {
    const auto lp = fwd.log_probs(m);
    for (std::size_t i = 0; i < lp.size(); ++i) l += s.dlogp[m][i] * lp[i];
    l += s.dvalue[m] * fwd.value(m);
  }
  return l;
}

/// Max over parameter arrays of ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6).
/// The floor covers arrays whose exact gradient vanishes (key biases shift
/// every score equally) where both sides are pure round-off.
double gradient_check(const SimState& state, NetConfig cfg, std::uint64_t seed, std::string* worst) {
  ParamSet<double> P = init_policy_params<double>(cfg, seed);
  testing::randomize(P, seed + 1);
  const PolicyInput in = make_policy_input(state);
  LossSeeds seeds;
  ParamSet<double> grads = P.zeros_like();
  {
    PolicyForward<double> fwd(P, cfg, in);
    seeds = random_seeds(fwd, seed + 2);
    fwd.backward(seeds.dlogp, seeds.dvalue, grads);
  }
  double worst_err = 0;
  const double h = 1e-4;
  for (int i = 0; i < P.size(); ++i) {
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t j = 0; j < P[i].size(); ++j) {
      double& x = P[i].data()[j];
      const double x0 = x;
      x = x0 + h;
      const double lp = loss(PolicyForward<double>(P, cfg, in), seeds);
      x = x0 - h;
      const double lm = loss(PolicyForward<double>(P, cfg, in), seeds);
      x = x0;
      const double num = (lp - lm) / (2 * h);
      const double ana = grads[i].data()[j];
      diff2 += (num - ana) * (num - ana);
      a2 += ana * ana;
      n2 += num * num;
    }
    const double err = std::sqrt(diff2) / std::max(std::sqrt(std::max(a2, n2)), 1e-6);
    if (err > worst_err) {
      worst_err = err;
      if (worst) *worst = P.name(i);
    }
  }
  return worst_err;
}

}  // namespace

TEST_CASE("backward matches central finite differences") {
  const SimState s = testing::small_state(5, 2, 2, 3, 4);
  NetConfig cfg = testing::small_net(s);
  for (Variant v : {Variant::full, Variant::no_spatial, Variant::no_temporal, Variant::no_presence}) {
    for (CriticMode c : {CriticMode::central, CriticMode::decentralized}) {
      if (v != Variant::full && c != CriticMode::central) continue;
      cfg.variant = v;
      cfg.critic = c;
      std::string worst;
      const double err = gradient_check(s, cfg, 21, &worst);
      INFO(variant_name(v), " ", critic_name(c), " worst array ", worst, " err ", err);
      CHECK(err <= 1e-4);
      MESSAGE(variant_name(v), "/", critic_name(c), " worst relative error ", err, " (", worst, ")");
    }
  }
}

TEST_CASE("backward contracts") {
  Fixture f;
  const PolicyInput in = make_policy_input(f.state);

  SUBCASE("unused presence row receives exactly zero gradient") {
    PolicyInput no_agents_here = in;
    std::fill(no_agents_here.presence.begin(), no_agents_here.presence.end(), 0);
    PolicyForward<double> fwd(f.params, f.cfg, no_agents_here);
    ParamSet<double> g = f.params.zeros_like();
    const auto s = random_seeds(fwd, 1);
    fwd.backward(s.dlogp, s.dvalue, g);
    const Md& pe = g.at("spatial.presence_emb");
    double row0 = 0;
    for (int j = 0; j < pe.cols(); ++j) {
      CHECK(pe(1, j) == 0.0);
      row0 += std::abs(pe(0, j));
    }
    CHECK(row0 > 0);
  }

  SUBCASE("doubling the loss doubles every gradient") {
    ParamSet<double> g1 = f.params.zeros_like(), g2 = f.params.zeros_like();
    PolicyForward<double> a(f.params, f.cfg, in), b(f.params, f.cfg, in);
    auto s = random_seeds(a, 2);
    a.backward(s.dlogp, s.dvalue, g1);
    for (auto& v : s.dlogp)
      for (auto& x : v) x *= 2;
    for (auto& x : s.dvalue) x *= 2;
    b.backward(s.dlogp, s.dvalue, g2);
    for (int i = 0; i < g1.size(); ++i)
      for (std::size_t j = 0; j < g1[i].size(); ++j) CHECK(g2[i].data()[j] == 2 * g1[i].data()[j]);
  }

  SUBCASE("backward twice is a contract violation") {
    PolicyForward<double> fwd(f.params, f.cfg, in);
    ParamSet<double> g = f.params.zeros_like();
    const auto s = random_seeds(fwd, 3);
    fwd.backward(s.dlogp, s.dvalue, g);
    CHECK_THROWS_AS(fwd.backward(s.dlogp, s.dvalue, g), ContractError);
  }

  SUBCASE("backward on an empty tape is a contract violation") {
    Tape<double> t;
    CHECK_THROWS_AS(t.backward(), ContractError);
  }

  SUBCASE("deterministic") {
    PolicyForward<double> a(f.params, f.cfg, in), b(f.params, f.cfg, in);
    for (int m = 0; m < a.agents(); ++m) CHECK(a.log_probs(m) == b.log_probs(m));
    CHECK(a.value(0) == b.value(0));
  }
}

TEST_CASE("full forward pass") {
  Fixture f;
  const PolicyInput in = make_policy_input(f.state);

  SUBCASE("actor distributions cover exactly the neighbor set") {
    PolicyForward<double> fwd(f.params, f.cfg, in);
    for (int m = 0; m < fwd.agents(); ++m) {
      CHECK(fwd.candidates(m) == f.state.graph->neighbor_ids(in.agent_nodes[m]));
      double total = 0;
      for (double v : fwd.log_probs(m)) total += std::exp(v);
      CHECK(std::abs(total - 1) < 1e-9);
    }
  }

  SUBCASE("presence ablation ignores the presence flags") {
    NetConfig c = f.cfg;
    c.variant = Variant::no_presence;
    PolicyInput flipped = in;
    for (auto& p : flipped.presence) p = 1 - p;
    for (int v = 0; v < flipped.features.nodes; ++v)
      for (int h = 0; h < flipped.features.slots; ++h) {
        auto idx = (static_cast<std::size_t>(v) * flipped.features.slots + h) * flipped.features.width + 4 * c.targets;
        flipped.features.data[idx] = 1 - flipped.features.data[idx];
      }
    PolicyForward<double> a(f.params, c, in), b(f.params, c, flipped);
    for (int m = 0; m < a.agents(); ++m) CHECK(a.log_probs(m) == b.log_probs(m));
  }

  SUBCASE("every variant runs in single precision") {
    const ParamSet<float> P = init_policy_params<float>(f.cfg, 2);
    for (Variant v : {Variant::full, Variant::no_presence, Variant::no_spatial, Variant::no_temporal}) {
      NetConfig c = f.cfg;
      c.variant = v;
      PolicyForward<float> fwd(P, c, in);
      CHECK(std::isfinite(fwd.value(0)));
    }
  }

  SUBCASE("mismatched slot count is rejected") {
    NetConfig c = f.cfg;
    c.slots = f.cfg.slots + 1;
    ParamSet<double> P = init_policy_params<double>(c, 1);
    CHECK_THROWS_AS(PolicyForward<double>(P, c, in), InputError);
  }
}

TEST_CASE("policy planner picks neighbors") {
  SimState s = testing::small_state(12, 2, 2, 3, 2);
  NetConfig c = testing::small_net(s);
  auto P = std::make_shared<const ParamSet<float>>(init_policy_params<float>(c, 9));
  PolicyPlanner greedy(P, c);
  PolicyPlanner sampler(P, c, true, 4);
  greedy.reset(s);
  sampler.reset(s);
  for (auto* p : {static_cast<Planner*>(&greedy), static_cast<Planner*>(&sampler)}) {
    const auto a = p->select(s);
    REQUIRE(a.size() == 2u);
    for (int m = 0; m < 2; ++m) CHECK(s.graph->adjacent(s.agents[m].node, a[m]));
  }
  CHECK(greedy.select(s) == greedy.select(s));
}
