#pragma once

// Pareto dominance, non-dominated filtering and the hypervolume indicator
// (minimization convention throughout).

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "paretomax/core.hpp"

namespace paretomax {

using ObjectiveVector = Vector;

/// a dominates b: a_k <= b_k for all k and a_k < b_k for some k.
template <class A, class B>
bool dominates(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  bool strict = false;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    if (a[k] > b[k]) return false;
    if (a[k] < b[k]) strict = true;
  }
  return strict;
}

inline Matrix to_rows(const std::vector<Vector>& pts) {
  if (pts.empty()) return {};
  Matrix m(pts.size(), pts.front().size());
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return m;
}

/// Indices (ascending) of the rows of `points` not dominated by any other row.
/// Identical points do not dominate each other, so duplicates are all kept.
inline std::vector<std::size_t> non_dominated_indices(const Matrix& points) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<std::size_t> keep;
  if (n == 0) return keep;
  if (points.cols() == 2) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (points(a, 0) != points(b, 0)) return points(a, 0) < points(b, 0);
      return points(a, 1) < points(b, 1);
    });
    double best_before = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < n;) {
      std::size_t e = g;
      while (e < n && points(order[e], 0) == points(order[g], 0)) ++e;
      const double group_min = points(order[g], 1);
      for (std::size_t i = g; i < e && points(order[i], 1) == group_min; ++i) {
        if (group_min < best_before) keep.push_back(order[i]);
      }
      best_before = std::min(best_before, group_min);
      g = e;
    }
    std::sort(keep.begin(), keep.end());
    return keep;
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < n && !dominated; ++j) {
      if (j != i && dominates(points.row(j), points.row(i))) dominated = true;
    }
    if (!dominated) keep.push_back(i);
  }
  return keep;
}

inline std::vector<Vector> non_dominated(const std::vector<Vector>& points) {
  std::vector<Vector> out;
  if (points.empty()) return out;
  for (auto i : non_dominated_indices(to_rows(points))) out.push_back(points[i]);
  return out;
}

namespace detail {

inline double inclusive_volume(const Vector& p, const Vector& ref) {
  return (ref - p).prod();
}

inline double hv_2d(std::vector<Vector> pts, const Vector& ref) {
  std::sort(pts.begin(), pts.end(), [](const Vector& a, const Vector& b) {
    return a[0] != b[0] ? a[0] < b[0] : a[1] < b[1];
  });
  double volume = 0.0;
  double ceiling = ref[1];
  for (const auto& p : pts) {
    if (p[1] < ceiling) {
      volume += (ref[0] - p[0]) * (ceiling - p[1]);
      ceiling = p[1];
    }
  }
  return volume;
}

// Recursive exclusive-volume slicing over limit sets.
inline double hv_wfg(std::vector<Vector> pts, const Vector& ref) {
  if (pts.empty()) return 0.0;
  if (ref.size() == 2) return hv_2d(std::move(pts), ref);
  std::sort(pts.begin(), pts.end(),
            [](const Vector& a, const Vector& b) { return a[a.size() - 1] < b[b.size() - 1]; });
  double total = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<Vector> limit;
    limit.reserve(pts.size() - i - 1);
    for (std::size_t j = i + 1; j < pts.size(); ++j) limit.push_back(pts[i].cwiseMax(pts[j]));
    total += inclusive_volume(pts[i], ref) - hv_wfg(non_dominated(limit), ref);
  }
  return total;
}

inline double hv_monte_carlo(const std::vector<Vector>& pts, const Vector& ref,
                             std::size_t samples = 1000000) {
  Vector lo = pts.front();
  for (const auto& p : pts) lo = lo.cwiseMin(p);
  const double box = (ref - lo).prod();
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t hits = 0;
  Vector s(ref.size());
  for (std::size_t i = 0; i < samples; ++i) {
    for (Eigen::Index k = 0; k < ref.size(); ++k) s[k] = lo[k] + u(rng) * (ref[k] - lo[k]);
    for (const auto& p : pts) {
      if ((p.array() <= s.array()).all()) {
        ++hits;
        break;
      }
    }
  }
  return box * static_cast<double>(hits) / static_cast<double>(samples);
}

}  // namespace detail

/// Lebesgue measure of the region dominated by `front` and bounded by `reference`.
/// Points exceeding the reference in any coordinate are dropped.
inline double hypervolume(const std::vector<Vector>& front, const Vector& reference) {
  std::vector<Vector> pts;
  for (const auto& p : front) {
    if ((p.array() <= reference.array()).all()) pts.push_back(p);
  }
  if (pts.empty()) return 0.0;
  pts = non_dominated(pts);
  const auto k = reference.size();
  if (k == 1) {
    double best = pts.front()[0];
    for (const auto& p : pts) best = std::min(best, p[0]);
    return reference[0] - best;
  }
  if (k == 2) return detail::hv_2d(std::move(pts), reference);
  if (k <= 4) return detail::hv_wfg(std::move(pts), reference);
  return detail::hv_monte_carlo(pts, reference);
}

inline constexpr double kLogMetricFloor = 1e-8;

/// log((hv_max - hv_rec + eps) / hv_max). hv_rec above hv_max is clamped.
inline double log_hv_rel_diff(double hv_rec, double hv_max) {
  if (!(hv_max > 0.0)) throw Error("log_hv_rel_diff: hv_max must be positive");
  if (hv_rec > hv_max) {
    spdlog::warn("recommended hypervolume {} exceeds maximum {}; clamping", hv_rec, hv_max);
    hv_rec = hv_max;
  }
  hv_rec = std::max(hv_rec, 0.0);
  return std::log((hv_max - hv_rec + kLogMetricFloor) / hv_max);
}

/// Approximate Pareto set: inputs, their objective vectors and feasibility.
struct RecommendationSet {
  std::vector<Vector> inputs;
  std::vector<ObjectiveVector> fronts;
  std::vector<bool> feasible;
  bool fallback = false;  // true when no point satisfied the constraints

  std::size_t size() const { return inputs.size(); }
};

}  // namespace paretomax
