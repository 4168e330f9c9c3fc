#pragma once

// Scalar Gaussian helpers and small numerical utilities.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "paretomax/core.hpp"

namespace paretomax {

inline constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)
inline constexpr double kLog2PiE = 2.8378770664093453;  // log(2 pi e)

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double log_normal_pdf(double x) { return -0.5 * x * x - 0.5 * kLog2Pi; }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// log Phi(x), accurate deep into the lower tail.
inline double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  // Asymptotic series of the Mills ratio.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - 0.5 * kLog2Pi + std::log(series);
}

/// phi(x) / Phi(x) without underflow.
inline double inverse_mills(double x) { return std::exp(log_normal_pdf(x) - log_normal_cdf(x)); }

/// Differential entropy of N(m, v).
inline double gaussian_entropy(double variance) { return 0.5 * (kLog2PiE + std::log(variance)); }

/// Gauss-Legendre nodes/weights on [-1, 1] (Newton iteration on P_n).
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GaussLegendre gauss_legendre(std::size_t n) {
  GaussLegendre gl;
  gl.nodes.resize(n);
  gl.weights.resize(n);
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                        (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      dp = n * (z * p1 - p2) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    gl.nodes[i] = -z;
    gl.nodes[n - 1 - i] = z;
    gl.weights[i] = gl.weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return gl;
}

template <class Rng>
Vector uniform_point(std::size_t dim, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(dim);
  for (std::size_t i = 0; i < dim; ++i) x[i] = u(rng);
  return x;
}

/// n uniform points in the unit cube, one per row.
template <class Rng>
Matrix uniform_grid(std::size_t n, std::size_t dim, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix g(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) g(i, j) = u(rng);
  return g;
}

}  // namespace paretomax
