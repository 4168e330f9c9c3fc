#pragma once

// Approximate posterior function draws via random Fourier features, and
// extraction of sampled Pareto fronts from those draws.

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "paretomax/core.hpp"
#include "paretomax/gp.hpp"
#include "paretomax/math.hpp"
#include "paretomax/pareto.hpp"

namespace paretomax {

/// f(x) = scale * sum_i w_i cos(omega_i . x + b_i).
struct RffFunctionSample {
  Matrix frequencies;  // F x d
  Vector phases;       // F
  Vector weights;      // F
  double scale = 1.0;

  std::size_t num_features() const { return static_cast<std::size_t>(phases.size()); }

  /// F x n feature map of the rows of xs (without the weights).
  Matrix features(const Matrix& xs) const {
    Matrix z = frequencies * xs.transpose();
    z.colwise() += phases;
    return (scale * z.array().cos()).matrix();
  }

  double evaluate(const Vector& x) const {
    return scale * (frequencies * x + phases).array().cos().matrix().dot(weights);
  }

  Vector evaluate_batch(const Matrix& xs) const { return features(xs).transpose() * weights; }
};

/// Frequencies from the Matern-5/2 spectral density: a multivariate Student-t
/// with 5 degrees of freedom, scaled per dimension by the inverse lengthscale.
template <class Rng>
RffFunctionSample draw_rff_basis(const KernelParams& params, std::size_t num_features, Rng& rng) {
  const auto d = params.lengthscales.size();
  const auto f = static_cast<Eigen::Index>(num_features);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::chi_squared_distribution<double> chi2(5.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  RffFunctionSample s;
  s.frequencies.resize(f, d);
  s.phases.resize(f);
  for (Eigen::Index i = 0; i < f; ++i) {
    const double t_scale = std::sqrt(5.0 / chi2(rng));
    for (Eigen::Index j = 0; j < d; ++j)
      s.frequencies(i, j) = normal(rng) * t_scale / params.lengthscales[j];
    s.phases[i] = phase(rng);
  }
  s.scale = std::sqrt(2.0 * params.amplitude / static_cast<double>(num_features));
  s.weights = Vector::Zero(f);
  return s;
}

template <class Rng>
RffFunctionSample draw_prior_sample(const KernelParams& params, std::size_t num_features, Rng& rng) {
  RffFunctionSample s = draw_rff_basis(params, num_features, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < s.weights.size(); ++i) s.weights[i] = normal(rng);
  return s;
}

/// One approximate posterior draw. The weights are an exact sample from the
/// Bayesian linear-regression posterior on the feature map, obtained by
/// conditioning a prior draw on the training data (w = w0 + Phi^T (Phi Phi^T + s2 I)^-1 (y - Phi w0 - e)).
inline RffFunctionSample draw_posterior_sample(const GpModel& model, std::size_t num_features,
                                               std::uint64_t seed) {
  if (num_features == 0) throw Error("draw_posterior_sample: need at least one feature");
  std::mt19937_64 rng(seed);
  RffFunctionSample s = draw_prior_sample(model.params(), num_features, rng);
  const Eigen::Index n = model.inputs().rows();
  if (n == 0) return s;

  std::normal_distribution<double> normal(0.0, 1.0);
  const Matrix phi = s.features(model.inputs()).transpose();  // n x F
  const double noise = model.params().noise_variance;
  Vector residual = model.targets() - phi * s.weights;
  for (Eigen::Index i = 0; i < n; ++i) residual[i] -= std::sqrt(noise) * normal(rng);

  Matrix gram_f = phi * phi.transpose();
  gram_f.diagonal().array() += noise;
  const double mean_diag = std::max(gram_f.diagonal().mean(), 1e-300);
  for (double rel : {1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
    Matrix g = gram_f;
    g.diagonal().array() += rel * mean_diag;
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() == Eigen::Success) {
      s.weights += phi.transpose() * llt.solve(residual);
      return s;
    }
  }
  throw Error("draw_posterior_sample: feature regression singular after jitter");
}

/// One Monte Carlo sample of the Pareto front with paired constraint values.
struct FrontSample {
  std::vector<Vector> objectives;
  std::vector<Vector> constraint_values;
  std::vector<Vector> inputs;
  bool feasible_path = true;  // false when built from least-violating points

  std::size_t size() const { return objectives.size(); }
  bool empty() const { return objectives.empty(); }
};

/// Greedy max-min dispersion in range-normalized objective space, seeded with
/// the per-objective minima. Returns the selected indices into `points`.
inline std::vector<std::size_t> thin_front(const std::vector<Vector>& points, std::size_t target) {
  const std::size_t n = points.size();
  std::vector<std::size_t> chosen;
  if (n <= target) {
    chosen.resize(n);
    for (std::size_t i = 0; i < n; ++i) chosen[i] = i;
    return chosen;
  }
  const auto k = points.front().size();
  Vector lo = points.front(), hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Vector span = (hi - lo).cwiseMax(1e-300);
  std::vector<Vector> unit(n);
  for (std::size_t i = 0; i < n; ++i) unit[i] = (points[i] - lo).cwiseQuotient(span);

  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  auto take = [&](std::size_t i) {
    taken[i] = true;
    chosen.push_back(i);
    for (std::size_t j = 0; j < n; ++j)
      min_dist[j] = std::min(min_dist[j], (unit[j] - unit[i]).squaredNorm());
  };
  for (Eigen::Index obj = 0; obj < k && chosen.size() < target; ++obj) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (points[i][obj] < points[arg][obj]) arg = i;
    if (!taken[arg]) take(arg);
  }
  while (chosen.size() < target) {
    std::size_t arg = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && min_dist[i] > best) {
        best = min_dist[i];
        arg = i;
      }
    }
    take(arg);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// Extracts a sampled front from per-box function values on a grid.
/// `values` is (K + C) x n: objectives first. `grid` is n x d.
inline FrontSample extract_front(const Matrix& values, std::size_t num_objectives,
                                 const Matrix& grid, std::size_t front_size) {
  const Eigen::Index n = values.cols();
  const auto k = static_cast<Eigen::Index>(num_objectives);
  const Eigen::Index c = values.rows() - k;
  FrontSample out;

  std::vector<Eigen::Index> candidates;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (c == 0 || (values.col(i).tail(c).array() >= 0.0).all()) candidates.push_back(i);
  }
  if (candidates.empty()) {
    out.feasible_path = false;
    std::vector<std::pair<double, Eigen::Index>> violation(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      violation[static_cast<std::size_t>(i)] = {(-values.col(i).tail(c).array()).max(0.0).sum(), i};
    std::sort(violation.begin(), violation.end());
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(n) / 10);
    for (std::size_t i = 0; i < keep; ++i) candidates.push_back(violation[i].second);
  }

  Matrix objs(static_cast<Eigen::Index>(candidates.size()), k);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    objs.row(static_cast<Eigen::Index>(i)) = values.col(candidates[i]).head(k).transpose();
  const auto nd = non_dominated_indices(objs);

  std::vector<Vector> front_objs;
  front_objs.reserve(nd.size());
  for (auto i : nd) front_objs.push_back(objs.row(static_cast<Eigen::Index>(i)).transpose());
  for (auto j : thin_front(front_objs, front_size)) {
    const Eigen::Index col = candidates[nd[j]];
    out.objectives.push_back(front_objs[j]);
    out.constraint_values.push_back(values.col(col).tail(c));
    out.inputs.push_back(grid.row(col).transpose());
  }
  return out;
}

/// Evaluates one function draw per box on `grid` and extracts the front.
inline FrontSample sample_front(std::span<const RffFunctionSample> draws,
                                std::size_t num_objectives, const Matrix& grid,
                                std::size_t front_size) {
  Matrix values(static_cast<Eigen::Index>(draws.size()), grid.rows());
  for (std::size_t b = 0; b < draws.size(); ++b)
    values.row(static_cast<Eigen::Index>(b)) = draws[b].evaluate_batch(grid).transpose();
  return extract_front(values, num_objectives, grid, front_size);
}

/// Full front-sampling step: independent posterior draws per box, evaluated
/// on `grid_size` uniform unit-cube points plus the observed inputs.
inline FrontSample sample_front(std::span<const GpModel> models, std::size_t num_objectives,
                                std::size_t grid_size, const Matrix& observed,
                                std::size_t front_size, std::size_t num_features,
                                std::uint64_t seed) {
  if (models.empty()) throw Error("sample_front: no models");
  const auto dim = models.front().dim();
  std::mt19937_64 grid_rng(derive_seed(seed, Stream::FrontGrid));
  Matrix grid(static_cast<Eigen::Index>(grid_size) + observed.rows(), static_cast<Eigen::Index>(dim));
  grid.topRows(static_cast<Eigen::Index>(grid_size)) = uniform_grid(grid_size, dim, grid_rng);
  if (observed.rows() > 0) grid.bottomRows(observed.rows()) = observed;

  std::vector<RffFunctionSample> draws;
  draws.reserve(models.size());
  for (std::size_t b = 0; b < models.size(); ++b)
    draws.push_back(draw_posterior_sample(models[b], num_features, derive_seed(seed, Stream::Rff, b)));
  return sample_front(draws, num_objectives, grid, front_size);
}

}  // namespace paretomax
