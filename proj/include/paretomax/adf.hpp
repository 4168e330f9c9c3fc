#pragma once

// Assumed density filtering: conditions the factorized Gaussian predictive at
// a candidate input on a sampled Pareto front, one compatibility factor
//   Omega(f*, f, c) = 1 - prod_j Theta(c_j) prod_k Theta(f*_k - f_k)
// at a time. Theta(0) = 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "paretomax/core.hpp"
#include "paretomax/gp.hpp"
#include "paretomax/math.hpp"
#include "paretomax/sampler.hpp"

namespace paretomax {

inline constexpr double kZFloor = 1e-10;

/// Means and variances of the K objective and C constraint predictives.
struct PredictiveMoments {
  Vector mean_f;
  Vector var_f;
  Vector mean_c;
  Vector var_c;

  std::size_t num_objectives() const { return static_cast<std::size_t>(mean_f.size()); }
  std::size_t num_constraints() const { return static_cast<std::size_t>(mean_c.size()); }
};

/// ADF output has the same layout as its input.
using ConditionedMoments = PredictiveMoments;

struct Gammas {
  Vector f;  // (f*_k - m_k) / sqrt(v_k)
  Vector c;  // m_j / sqrt(v_j)
};

inline Gammas gammas(const PredictiveMoments& m, const Vector& fstar) {
  Gammas g;
  g.f = (fstar - m.mean_f).array() / m.var_f.array().max(kVarianceFloor).sqrt();
  g.c = m.mean_c.array() / m.var_c.array().max(kVarianceFloor).sqrt();
  return g;
}

/// log of prod_j Phi(gamma_c) prod_k Phi(gamma_f).
inline double log_dominated_mass(const Gammas& g) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < g.f.size(); ++k) s += log_normal_cdf(g.f[k]);
  for (Eigen::Index j = 0; j < g.c.size(); ++j) s += log_normal_cdf(g.c[j]);
  return s;
}

/// Z = 1 - prod Phi(gamma), clamped to [1e-10, 1].
inline double z_factor(const Gammas& g) {
  const double z = -std::expm1(log_dominated_mass(g));
  return std::clamp(z, kZFloor, 1.0);
}

struct LogZGradient {
  Vector dmean_f;
  Vector dvar_f;
  Vector dmean_c;
  Vector dvar_c;
  double z = 1.0;
  bool clamped = false;  // Z hit its lower clamp
};

/// Closed-form partials of log Z with respect to the predictive moments.
inline LogZGradient dlogz(const PredictiveMoments& m, const Vector& fstar) {
  const Gammas g = gammas(m, fstar);
  const double log_p = log_dominated_mass(g);
  const double raw_z = -std::expm1(log_p);
  LogZGradient out;
  out.clamped = !(raw_z > kZFloor);
  out.z = std::clamp(raw_z, kZFloor, 1.0);
  out.dmean_f.resize(g.f.size());
  out.dvar_f.resize(g.f.size());
  out.dmean_c.resize(g.c.size());
  out.dvar_c.resize(g.c.size());
  // (Z - 1) / (Z Phi(gamma_b)) = -prod_{others} Phi / Z, formed in log space.
  for (Eigen::Index k = 0; k < g.f.size(); ++k) {
    const double gk = g.f[k];
    const double ratio = -std::exp(log_p - log_normal_cdf(gk)) / out.z;
    const double v = std::max(m.var_f[k], kVarianceFloor);
    const double pdf = normal_pdf(gk);
    out.dmean_f[k] = ratio * (-pdf / std::sqrt(v));
    out.dvar_f[k] = ratio * (pdf * (-gk) / (2.0 * v));
  }
  for (Eigen::Index j = 0; j < g.c.size(); ++j) {
    const double gj = g.c[j];
    const double ratio = -std::exp(log_p - log_normal_cdf(gj)) / out.z;
    const double v = std::max(m.var_c[j], kVarianceFloor);
    const double pdf = normal_pdf(gj);
    out.dmean_c[j] = ratio * (pdf / std::sqrt(v));
    out.dvar_c[j] = ratio * (pdf * (-gj) / (2.0 * v));
  }
  return out;
}

struct AdfDiagnostics {
  std::size_t factors = 0;
  std::size_t skipped_clamped = 0;
  std::size_t skipped_nonfinite = 0;
};

namespace detail {

// In-place single-factor update on raw arrays; returns false when skipped.
inline bool adf_update(double* mean_f, double* var_f, std::size_t k, double* mean_c,
                       double* var_c, std::size_t c, const double* fstar,
                       AdfDiagnostics* diag) {
  if (diag) ++diag->factors;
  double log_p = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    log_p += log_normal_cdf((fstar[i] - mean_f[i]) / std::sqrt(var_f[i]));
  for (std::size_t j = 0; j < c; ++j) log_p += log_normal_cdf(mean_c[j] / std::sqrt(var_c[j]));
  const double z = -std::expm1(log_p);
  if (!(z > kZFloor)) {
    if (diag) ++diag->skipped_clamped;
    return false;
  }

  // Compute every new moment first so a non-finite result leaves the state untouched.
  double new_mf[16], new_vf[16], new_mc[16], new_vc[16];
  std::vector<double> heap;
  double *nmf = new_mf, *nvf = new_vf, *nmc = new_mc, *nvc = new_vc;
  if (k > 16 || c > 16) {
    heap.resize(2 * (k + c));
    nmf = heap.data();
    nvf = nmf + k;
    nmc = nvf + k;
    nvc = nmc + c;
  }
  auto update = [&](double m, double v, double gamma, double sign_m, double& out_m, double& out_v) {
    const double ratio = -std::exp(log_p - log_normal_cdf(gamma)) / z;
    const double pdf = normal_pdf(gamma);
    const double dm = ratio * sign_m * pdf / std::sqrt(v);
    const double dv = ratio * pdf * (-gamma) / (2.0 * v);
    out_m = m + v * dm;
    out_v = std::max(v - v * (dm * dm - 2.0 * dv) * v, kVarianceFloor);
    return std::isfinite(out_m) && std::isfinite(out_v);
  };
  bool ok = true;
  for (std::size_t i = 0; i < k; ++i) {
    const double gamma = (fstar[i] - mean_f[i]) / std::sqrt(var_f[i]);
    ok &= update(mean_f[i], var_f[i], gamma, -1.0, nmf[i], nvf[i]);
  }
  for (std::size_t j = 0; j < c; ++j) {
    const double gamma = mean_c[j] / std::sqrt(var_c[j]);
    ok &= update(mean_c[j], var_c[j], gamma, 1.0, nmc[j], nvc[j]);
  }
  if (!ok) {
    if (diag) ++diag->skipped_nonfinite;
    return false;
  }
  std::copy(nmf, nmf + k, mean_f);
  std::copy(nvf, nvf + k, var_f);
  std::copy(nmc, nmc + c, mean_c);
  std::copy(nvc, nvc + c, var_c);
  return true;
}

}  // namespace detail

/// One moment-matching update for the factor of a single front point.
/// Skips the factor (identity) when Z is at its clamp or the update is non-finite.
inline ConditionedMoments adf_step(const ConditionedMoments& current, const Vector& fstar,
                                   AdfDiagnostics* diag = nullptr) {
  ConditionedMoments next = current;
  next.var_f = next.var_f.cwiseMax(kVarianceFloor);
  next.var_c = next.var_c.cwiseMax(kVarianceFloor);
  detail::adf_update(next.mean_f.data(), next.var_f.data(), next.num_objectives(),
                     next.mean_c.data(), next.var_c.data(), next.num_constraints(), fstar.data(),
                     diag);
  return next;
}

/// Seeded random processing order for a front of the given size.
inline std::vector<std::size_t> adf_order(std::size_t front_size, std::uint64_t seed) {
  std::vector<std::size_t> order(front_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Single ADF pass over the front in the given order.
inline ConditionedMoments condition_on_front(const PredictiveMoments& moments,
                                             const FrontSample& front,
                                             std::span<const std::size_t> order,
                                             AdfDiagnostics* diag = nullptr) {
  ConditionedMoments q = moments;
  q.var_f = q.var_f.cwiseMax(kVarianceFloor);
  q.var_c = q.var_c.cwiseMax(kVarianceFloor);
  for (std::size_t idx : order) {
    detail::adf_update(q.mean_f.data(), q.var_f.data(), q.num_objectives(), q.mean_c.data(),
                       q.var_c.data(), q.num_constraints(), front.objectives[idx].data(), diag);
  }
  return q;
}

inline ConditionedMoments condition_on_front(const PredictiveMoments& moments,
                                             const FrontSample& front, std::uint64_t seed,
                                             AdfDiagnostics* diag = nullptr) {
  if (front.empty()) throw Error("condition_on_front: empty front");
  const auto order = adf_order(front.size(), seed);
  return condition_on_front(moments, front, order, diag);
}

}  // namespace paretomax
