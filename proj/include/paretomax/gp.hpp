#pragma once

// Exact Gaussian-process regression with a Matern-5/2 ARD kernel and
// slice-sampled hyperparameters.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "paretomax/core.hpp"
#include "paretomax/math.hpp"

namespace paretomax {

inline constexpr double kVarianceFloor = 1e-12;

struct KernelParams {
  double amplitude = 1.0;
  Vector lengthscales;
  double noise_variance = 0.0;

  static KernelParams isotropic(std::size_t dim, double amplitude, double lengthscale,
                                double noise = 0.0) {
    return {amplitude, Vector::Constant(static_cast<Eigen::Index>(dim), lengthscale), noise};
  }
};

inline KernelParams to_kernel_params(const FixedHypers& h) {
  Vector ls(static_cast<Eigen::Index>(h.lengthscales.size()));
  for (std::size_t i = 0; i < h.lengthscales.size(); ++i) ls[i] = h.lengthscales[i];
  return {h.amplitude, ls, h.noise_variance};
}

inline double matern52_of_distance(double r, double amplitude) {
  constexpr double sqrt5 = 2.23606797749979;
  const double s = sqrt5 * r;
  return amplitude * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

/// k(x1, x2) = a (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r), r the ARD-scaled distance.
inline double matern52(const Vector& x1, const Vector& x2, const KernelParams& p) {
  const double r2 = (x1 - x2).cwiseQuotient(p.lengthscales).squaredNorm();
  return matern52_of_distance(std::sqrt(r2), p.amplitude);
}

/// Cross-covariance between the rows of a (n1 x d) and b (n2 x d).
inline Matrix gram(const Matrix& a, const Matrix& b, const KernelParams& p) {
  const Eigen::Index d = a.cols();
  const Vector inv_ls = p.lengthscales.cwiseInverse();
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double r2 = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double t = (a(i, c) - b(j, c)) * inv_ls[c];
        r2 += t * t;
      }
      k(i, j) = matern52_of_distance(std::sqrt(r2), p.amplitude);
    }
  }
  return k;
}

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Zero-mean GP posterior. Immutable after construction.
class GpModel {
public:
  GpModel() = default;

  /// Empty model: predictions are the prior.
  GpModel(KernelParams params, std::size_t dim)
      : params_(std::move(params)), inputs_(0, static_cast<Eigen::Index>(dim)) {}

  static GpModel fit(const Matrix& inputs, const Vector& targets, const KernelParams& params) {
    if (inputs.rows() != targets.size()) throw Error("gp fit: inputs/targets size mismatch");
    if (params.lengthscales.size() != inputs.cols())
      throw Error("gp fit: lengthscales must match input dimension");
    if (!(params.amplitude > 0.0) || !(params.lengthscales.array() > 0.0).all())
      throw Error("gp fit: amplitude and lengthscales must be positive");
    GpModel m(params, static_cast<std::size_t>(inputs.cols()));
    m.inputs_ = inputs;
    m.targets_ = targets;
    const Eigen::Index n = inputs.rows();
    if (n == 0) return m;

    Matrix k = gram(inputs, inputs, params);
    k.diagonal().array() += params.noise_variance;
    const double mean_diag = k.diagonal().mean();
    for (double rel : {1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
      Matrix kj = k;
      kj.diagonal().array() += rel * mean_diag;
      Eigen::LLT<Matrix> llt(kj);
      if (llt.info() == Eigen::Success && std::isfinite(llt.matrixLLT().diagonal().minCoeff()) &&
          llt.matrixLLT().diagonal().minCoeff() > 0.0) {
        m.chol_ = llt.matrixL();
        m.alpha_ = llt.solve(targets);
        m.jitter_ = rel * mean_diag;
        return m;
      }
    }
    throw Error("gp fit: covariance not positive definite after jitter escalation");
  }

  const KernelParams& params() const { return params_; }
  const Matrix& inputs() const { return inputs_; }
  const Vector& targets() const { return targets_; }
  std::size_t size() const { return static_cast<std::size_t>(inputs_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs_.cols()); }
  double jitter() const { return jitter_; }

  Prediction predict(const Vector& x) const {
    Matrix q = x.transpose();
    Vector mean, var;
    predict_batch(q, mean, var);
    return {mean[0], var[0]};
  }

  /// Latent predictive mean and variance at each row of xs.
  void predict_batch(const Matrix& xs, Vector& mean, Vector& variance) const {
    const Eigen::Index g = xs.rows();
    if (inputs_.rows() == 0) {
      mean = Vector::Zero(g);
      variance = Vector::Constant(g, params_.amplitude);
      return;
    }
    Matrix ks = gram(inputs_, xs, params_);
    mean = ks.transpose() * alpha_;
    chol_.triangularView<Eigen::Lower>().solveInPlace(ks);
    variance = (params_.amplitude - ks.colwise().squaredNorm().array()).max(kVarianceFloor).matrix();
  }

  Vector predict_mean(const Matrix& xs) const {
    if (inputs_.rows() == 0) return Vector::Zero(xs.rows());
    return gram(inputs_, xs, params_).transpose() * alpha_;
  }

  double log_marginal_likelihood() const {
    const auto n = static_cast<double>(inputs_.rows());
    if (inputs_.rows() == 0) return 0.0;
    return -0.5 * targets_.dot(alpha_) - chol_.diagonal().array().log().sum() - 0.5 * n * kLog2Pi;
  }

private:
  KernelParams params_;
  Matrix inputs_;
  Vector targets_;
  Matrix chol_;
  Vector alpha_;
  double jitter_ = 0.0;
};

// ---------------------------------------------------------------------------
// Slice sampling (stepping-out and shrinkage, univariate).

template <class LogDensity, class Rng>
double slice_step(LogDensity&& log_density, double x0, double& log_p0, double width, Rng& rng,
                  int max_step_out = 32) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  const double level = log_p0 - expo(rng);
  double left = x0 - width * unif(rng);
  double right = left + width;
  for (int j = 0; j < max_step_out && log_density(left) > level; ++j) left -= width;
  for (int j = 0; j < max_step_out && log_density(right) > level; ++j) right += width;
  for (int it = 0; it < 200; ++it) {
    const double x1 = left + unif(rng) * (right - left);
    const double lp = log_density(x1);
    if (lp > level) {
      log_p0 = lp;
      return x1;
    }
    if (x1 < x0) left = x1; else right = x1;
  }
  return x0;
}

template <class LogDensity, class Rng>
std::vector<double> slice_sample_1d(LogDensity&& log_density, double x0, std::size_t count,
                                    double width, Rng& rng, std::size_t burn_in = 0) {
  std::vector<double> out;
  out.reserve(count);
  double lp = log_density(x0);
  double x = x0;
  for (std::size_t i = 0; i < burn_in + count; ++i) {
    x = slice_step(log_density, x, lp, width, rng);
    if (i >= burn_in) out.push_back(x);
  }
  return out;
}

/// One coordinate-wise slice sweep over a vector state.
template <class LogDensity, class Rng>
void slice_sweep(LogDensity&& log_density, Vector& state, double& log_p, const Vector& widths,
                 Rng& rng) {
  for (Eigen::Index i = 0; i < state.size(); ++i) {
    auto conditional = [&](double v) {
      const double keep = state[i];
      state[i] = v;
      const double lp = log_density(state);
      state[i] = keep;
      return lp;
    };
    state[i] = slice_step(conditional, state[i], log_p, widths[i], rng);
  }
}

// ---------------------------------------------------------------------------
// Hyperparameter posterior.

/// Independent log-normal priors (median, log-scale sd) on each parameter.
struct HyperPrior {
  double amplitude_median = 1.0;
  double amplitude_log_sd = 1.0;
  double lengthscale_median = 1.0;
  double lengthscale_log_sd = 1.0;
  double noise_median = 1e-3;
  double noise_log_sd = 1.0;
};

/// Parameters live in log space: [log a, log l_1..l_d, log noise].
inline Vector to_log_space(const KernelParams& p) {
  const Eigen::Index d = p.lengthscales.size();
  Vector t(d + 2);
  t[0] = std::log(p.amplitude);
  t.segment(1, d) = p.lengthscales.array().log().matrix();
  t[d + 1] = std::log(std::max(p.noise_variance, 1e-300));
  return t;
}

inline KernelParams from_log_space(const Vector& t) {
  const Eigen::Index d = t.size() - 2;
  return {std::exp(t[0]), t.segment(1, d).array().exp().matrix(), std::exp(t[d + 1])};
}

inline bool in_support(const Vector& t) {
  const Eigen::Index d = t.size() - 2;
  if (t[0] < std::log(1e-4) || t[0] > std::log(1e4)) return false;
  for (Eigen::Index i = 1; i <= d; ++i)
    if (t[i] < std::log(1e-3) || t[i] > std::log(1e2)) return false;
  return t[d + 1] >= std::log(1e-9) && t[d + 1] <= std::log(1e2);
}

inline double log_prior(const Vector& t, const HyperPrior& prior) {
  auto term = [](double v, double median, double sd) {
    const double z = (v - std::log(median)) / sd;
    return -0.5 * z * z;
  };
  const Eigen::Index d = t.size() - 2;
  double lp = term(t[0], prior.amplitude_median, prior.amplitude_log_sd);
  for (Eigen::Index i = 1; i <= d; ++i)
    lp += term(t[i], prior.lengthscale_median, prior.lengthscale_log_sd);
  lp += term(t[d + 1], prior.noise_median, prior.noise_log_sd);
  return lp;
}

inline double log_posterior(const Matrix& inputs, const Vector& targets, const Vector& t,
                            const HyperPrior& prior) {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  if (!in_support(t)) return neg_inf;
  try {
    const double lml = GpModel::fit(inputs, targets, from_log_space(t)).log_marginal_likelihood();
    if (!std::isfinite(lml)) return neg_inf;
    return lml + log_prior(t, prior);
  } catch (const Error&) {
    return neg_inf;
  }
}

struct HyperSampleSet {
  std::vector<KernelParams> params;
  std::vector<GpModel> models;
  Vector chain_state;  // last state, usable as a warm start
  bool prior_fallback = false;

  std::size_t size() const { return models.size(); }
};

struct SliceSchedule {
  std::size_t burn_in = 40;
  std::size_t thin = 1;
};

inline Vector prior_median_state(std::size_t dim, const HyperPrior& prior) {
  Vector t(static_cast<Eigen::Index>(dim) + 2);
  t[0] = std::log(prior.amplitude_median);
  t.segment(1, static_cast<Eigen::Index>(dim)).setConstant(std::log(prior.lengthscale_median));
  t[static_cast<Eigen::Index>(dim) + 1] = std::log(prior.noise_median);
  return t;
}

/// Draws `count` hyperparameter vectors by slice sampling the log posterior
/// and refits one model per draw.
inline HyperSampleSet slice_sample_hypers(const Matrix& inputs, const Vector& targets,
                                          const HyperPrior& prior, std::size_t count,
                                          std::uint64_t seed, const Vector* warm_start = nullptr,
                                          SliceSchedule schedule = {}) {
  if (inputs.rows() == 0) throw Error("slice_sample_hypers: needs at least one observation");
  if (count == 0) throw Error("slice_sample_hypers: count must be positive");
  const auto dim = static_cast<std::size_t>(inputs.cols());
  std::mt19937_64 rng(seed);
  auto log_density = [&](const Vector& t) { return log_posterior(inputs, targets, t, prior); };

  HyperSampleSet out;
  Vector state = (warm_start && warm_start->size() == static_cast<Eigen::Index>(dim) + 2)
                     ? *warm_start
                     : prior_median_state(dim, prior);
  double lp = log_density(state);
  if (!std::isfinite(lp)) {
    state = prior_median_state(dim, prior);
    lp = log_density(state);
  }

  if (!std::isfinite(lp)) {
    out.prior_fallback = true;
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t s = 0; s < count; ++s) {
      Vector t = prior_median_state(dim, prior);
      t[0] += prior.amplitude_log_sd * z(rng);
      for (std::size_t i = 1; i <= dim; ++i) t[static_cast<Eigen::Index>(i)] += prior.lengthscale_log_sd * z(rng);
      t[static_cast<Eigen::Index>(dim) + 1] += prior.noise_log_sd * z(rng);
      KernelParams p = from_log_space(t);
      p.noise_variance = std::max(p.noise_variance, 1e-6 * p.amplitude);
      out.params.push_back(p);
      out.models.push_back(GpModel::fit(inputs, targets, p));
    }
    out.chain_state = state;
    return out;
  }

  const Vector widths = Vector::Constant(state.size(), 1.0);
  for (std::size_t i = 0; i < schedule.burn_in; ++i) slice_sweep(log_density, state, lp, widths, rng);
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t k = 0; k < std::max<std::size_t>(1, schedule.thin); ++k)
      slice_sweep(log_density, state, lp, widths, rng);
    KernelParams p = from_log_space(state);
    out.params.push_back(p);
    out.models.push_back(GpModel::fit(inputs, targets, p));
  }
  out.chain_state = state;
  return out;
}

/// A single model with fixed hyperparameters, wrapped as a sample set.
inline HyperSampleSet fixed_hypers(const Matrix& inputs, const Vector& targets,
                                   const KernelParams& params) {
  HyperSampleSet out;
  out.params.push_back(params);
  out.models.push_back(GpModel::fit(inputs, targets, params));
  out.chain_state = to_log_space(params);
  return out;
}

}  // namespace paretomax
