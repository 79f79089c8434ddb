#include "compass/gp_belief.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "compass/errors.hpp"
#include "compass/simd.hpp"

namespace compass {
namespace {

const double kSqrt5 = std::sqrt(5.0);

// In-place lower Cholesky of a row-major n x n matrix; false if not PD.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ri = a.data() + i * n;
    for (std::size_t j = 0; j <= i; ++j) {
      const double* rj = a.data() + j * n;
      const double s = ri[j] - simd::dot(ri, rj, j);
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s)) return false;
        ri[i] = std::sqrt(s);
      } else {
        ri[j] = s / rj[j];
      }
    }
    std::fill(ri + i + 1, ri + n, 0.0);
  }
  return true;
}

}  // namespace

void KernelParams::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be strictly positive");
    }
  };
  check(amplitude, "sigma_f2");
  check(spatial_lengthscale, "ell_s");
  check(temporal_lengthscale, "ell_t");
  check(noise, "sigma_n2");
}

double matern52(double r) { return (1.0 + kSqrt5 * r + 5.0 * r * r / 3.0) * std::exp(-kSqrt5 * r); }

double matern_kernel(const SpaceTime& a, const SpaceTime& b, const KernelParams& params) {
  // Symmetric by construction: |a-b| and |b-a| are computed identically.
  const double dx = std::abs(a.p.x - b.p.x);
  const double dy = std::abs(a.p.y - b.p.y);
  const double ds = std::sqrt(dx * dx + dy * dy);
  const double dt = std::abs(a.t - b.t);
  return params.amplitude * matern52(ds / params.spatial_lengthscale) *
         matern52(dt / params.temporal_lengthscale);
}

TargetBelief::TargetBelief(int target_id, KernelParams params, std::size_t max_window,
                           int time_horizon)
    : target_id_(target_id), params_(params), max_window_(max_window), time_horizon_(time_horizon) {
  params_.validate();
  if (max_window_ == 0) throw ConfigError("W_max must be positive");
  if (time_horizon_ < 0) throw ConfigError("T_horizon must be non-negative");
}

void TargetBelief::add_observation(const Observation& obs) {
  if (obs.target_id != target_id_) {
    throw InputError("observation for target " + std::to_string(obs.target_id) +
                     " sent to belief of target " + std::to_string(target_id_));
  }
  auto pos = std::upper_bound(window_.begin(), window_.end(), obs.t,
                              [](int t, const Observation& o) { return t < o.t; });
  window_.insert(pos, obs);
  while (window_.size() > max_window_) window_.pop_front();
  cache_.reset();
}

void TargetBelief::prune_and_refresh(int now) {
  const int cutoff = now - time_horizon_;
  while (!window_.empty() && window_.front().t < cutoff) {
    window_.pop_front();
    cache_.reset();
  }
  refresh();
}

void TargetBelief::refresh() {
  if (!cache_) cache_ = factorize();
}

TargetBelief::Factor TargetBelief::factorize() const {
  Factor f;
  f.n = window_.size();
  const std::size_t n = f.n;
  if (n == 0) return f;

  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const SpaceTime xi{window_[i].p, static_cast<double>(window_[i].t)};
    for (std::size_t j = 0; j <= i; ++j) {
      const SpaceTime xj{window_[j].p, static_cast<double>(window_[j].t)};
      const double k = matern_kernel(xi, xj, params_);
      gram[i * n + j] = k;
      gram[j * n + i] = k;
    }
    gram[i * n + i] += params_.noise;
  }

  f.chol = gram;
  if (!cholesky(f.chol, n)) {
    const double jitter = 1e-8 * params_.amplitude;
    f.chol = gram;
    for (std::size_t i = 0; i < n; ++i) f.chol[i * n + i] += jitter;
    if (!cholesky(f.chol, n)) {
      std::ostringstream msg;
      msg << "GP Cholesky failed for target " << target_id_ << " with " << n
          << " observations (jitter " << jitter << ", noise " << params_.noise << ")";
      throw NumericalError(msg.str());
    }
  }

  // alpha = L^-T L^-1 y
  f.alpha.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* li = f.chol.data() + i * n;
    f.alpha[i] = (window_[i].y - simd::dot(li, f.alpha.data(), i)) / li[i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = f.alpha[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= f.chol[j * n + ii] * f.alpha[j];
    f.alpha[ii] = s / f.chol[ii * n + ii];
  }
  return f;
}

Posterior TargetBelief::posterior(std::span<const SpaceTime> queries) const {
  if (queries.empty()) throw InputError("posterior requires at least one query");
  const std::size_t q = queries.size();
  Posterior out{std::vector<double>(q, 0.0), std::vector<double>(q, params_.amplitude)};
  if (window_.empty()) return out;

  std::optional<Factor> temp;
  const Factor& f = cache_ ? *cache_ : temp.emplace(factorize());
  const std::size_t n = f.n;

  // kt is n x q (observation-major) so both the mean and the forward
  // substitution run as contiguous axpy over queries.
  std::vector<double> kt(n * q);
  for (std::size_t i = 0; i < n; ++i) {
    const SpaceTime xi{window_[i].p, static_cast<double>(window_[i].t)};
    double* row = kt.data() + i * q;
    for (std::size_t c = 0; c < q; ++c) row[c] = matern_kernel(xi, queries[c], params_);
    simd::axpy(f.alpha[i], row, out.mean.data(), q);
  }

  // V = L^-1 kt, row by row.
  for (std::size_t i = 0; i < n; ++i) {
    double* vi = kt.data() + i * q;
    const double* li = f.chol.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      if (li[j] != 0.0) simd::axpy(-li[j], kt.data() + j * q, vi, q);
    }
    const double inv = 1.0 / li[i];
    for (std::size_t c = 0; c < q; ++c) vi[c] *= inv;
  }
  std::vector<double> reduction(q, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* vi = kt.data() + i * q;
    for (std::size_t c = 0; c < q; ++c) reduction[c] += vi[c] * vi[c];
  }
  const double floor = 1e-12 * params_.amplitude;
  for (std::size_t c = 0; c < q; ++c) {
    out.variance[c] = std::clamp(params_.amplitude - reduction[c], floor, params_.amplitude);
  }
  return out;
}

void write_belief_snapshot_csv(std::ostream& out, const Posterior& post) {
  out << "node_id,mean,variance\n";
  out.precision(17);
  for (std::size_t v = 0; v < post.mean.size(); ++v) {
    out << v << ',' << post.mean[v] << ',' << post.variance[v] << '\n';
  }
}

}  // namespace compass
