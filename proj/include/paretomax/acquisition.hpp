#pragma once

// Entropy-search acquisitions over sampled Pareto fronts:
//  - variance-reduction form, one additive term per black-box
//  - log-variance form
//  - summed single-box max-value entropy search baseline with a feasibility mask
//  - brute-force quadrature of the conditional entropy (K + C <= 3)
// plus grid + quasi-Newton acquisition optimization and decoupled box selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "paretomax/adf.hpp"
#include "paretomax/core.hpp"
#include "paretomax/gp.hpp"
#include "paretomax/math.hpp"
#include "paretomax/parallel.hpp"
#include "paretomax/sampler.hpp"

namespace paretomax {

/// Per-box acquisition values and their left-to-right sum.
struct AcquisitionBreakdown {
  Vector per_objective;
  Vector per_constraint;
  double total = 0.0;

  double component(std::size_t flat) const {
    const auto k = static_cast<std::size_t>(per_objective.size());
    return flat < k ? per_objective[static_cast<Eigen::Index>(flat)]
                    : per_constraint[static_cast<Eigen::Index>(flat - k)];
  }
};

inline AcquisitionBreakdown make_breakdown(Vector per_objective, Vector per_constraint) {
  AcquisitionBreakdown b{std::move(per_objective), std::move(per_constraint), 0.0};
  double total = 0.0;
  for (Eigen::Index i = 0; i < b.per_objective.size(); ++i) total += b.per_objective[i];
  for (Eigen::Index i = 0; i < b.per_constraint.size(); ++i) total += b.per_constraint[i];
  b.total = total;
  return b;
}

/// Everything needed to evaluate the acquisition for one Monte Carlo sample:
/// one model per box (objectives first), the paired front, its ADF order and
/// the per-box extreme values used by the baseline.
struct AcquisitionContext {
  std::vector<GpModel> models;
  FrontSample front;
  std::vector<std::size_t> order;
  Vector extremes;
};

struct AcquisitionSet {
  std::size_t num_objectives = 0;
  std::size_t num_constraints = 0;
  Vector noise;  // per-box noise variance
  std::vector<AcquisitionContext> contexts;

  std::size_t num_boxes() const { return num_objectives + num_constraints; }
};

/// Per-box extremes for the baseline: minimum objective values and maximum
/// constraint values over the sampled front and every observation so far.
inline Vector mes_extremes(const FrontSample& front, std::size_t num_objectives,
                           const std::vector<std::vector<double>>& observed) {
  const std::size_t boxes = observed.size();
  Vector ext(static_cast<Eigen::Index>(boxes));
  for (std::size_t b = 0; b < boxes; ++b) {
    const bool objective = b < num_objectives;
    double e = objective ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < front.size(); ++i) {
      const double v = objective ? front.objectives[i][static_cast<Eigen::Index>(b)]
                                 : front.constraint_values[i][static_cast<Eigen::Index>(b - num_objectives)];
      e = objective ? std::min(e, v) : std::max(e, v);
    }
    for (double v : observed[b]) e = objective ? std::min(e, v) : std::max(e, v);
    ext[static_cast<Eigen::Index>(b)] = e;
  }
  return ext;
}

/// Predictive moments of every box at each row of xs: boxes x points.
struct BatchMoments {
  Matrix mean;
  Matrix var;
};

inline BatchMoments predict_batch(const AcquisitionContext& ctx, const Matrix& xs) {
  BatchMoments out{Matrix(ctx.models.size(), xs.rows()), Matrix(ctx.models.size(), xs.rows())};
  Vector m, v;
  for (std::size_t b = 0; b < ctx.models.size(); ++b) {
    ctx.models[b].predict_batch(xs, m, v);
    out.mean.row(static_cast<Eigen::Index>(b)) = m.transpose();
    out.var.row(static_cast<Eigen::Index>(b)) = v.transpose();
  }
  return out;
}

inline PredictiveMoments moments_at(const BatchMoments& bm, Eigen::Index col, std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(k);
  const Eigen::Index c = bm.mean.rows() - kk;
  return {bm.mean.col(col).head(kk), bm.var.col(col).head(kk), bm.mean.col(col).tail(c),
          bm.var.col(col).tail(c)};
}

inline PredictiveMoments predict_moments(const AcquisitionContext& ctx, std::size_t num_objectives,
                                         const Vector& x) {
  Matrix q = x.transpose();
  return moments_at(predict_batch(ctx, q), 0, num_objectives);
}

/// Sum of the K + C Gaussian entropies 1/2 log(2 pi e (v + noise)).
inline double gaussian_entropy_sum(const PredictiveMoments& m, const Vector& noise) {
  const Eigen::Index k = m.mean_f.size();
  double h = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) h += gaussian_entropy(m.var_f[i] + noise[i]);
  for (Eigen::Index j = 0; j < m.mean_c.size(); ++j) h += gaussian_entropy(m.var_c[j] + noise[k + j]);
  return h;
}

/// Variance and log-variance reductions from one ADF pass per context.
struct EntropyReduction {
  AcquisitionBreakdown variance;      // sum_b v_b - mean_m v~_b
  AcquisitionBreakdown log_variance;  // sum_b log(v_b + s2) - mean_m log(v~_b + s2)
};

inline std::vector<EntropyReduction> entropy_reduction_batch(const Matrix& xs,
                                                             const AcquisitionSet& set) {
  const auto k = static_cast<Eigen::Index>(set.num_objectives);
  const auto boxes = static_cast<Eigen::Index>(set.num_boxes());
  const Eigen::Index g = xs.rows();
  const auto m_count = static_cast<double>(set.contexts.size());
  Matrix var_red = Matrix::Zero(boxes, g);
  Matrix log_red = Matrix::Zero(boxes, g);

  for (const auto& ctx : set.contexts) {
    const BatchMoments bm = predict_batch(ctx, xs);
    Matrix mean = bm.mean;
    Matrix var = bm.var;
    const Eigen::Index c = boxes - k;
    for (Eigen::Index i = 0; i < g; ++i) {
      double* mcol = mean.col(i).data();
      double* vcol = var.col(i).data();
      for (std::size_t idx : ctx.order) {
        detail::adf_update(mcol, vcol, static_cast<std::size_t>(k), mcol + k, vcol + k,
                           static_cast<std::size_t>(c), ctx.front.objectives[idx].data(), nullptr);
      }
      for (Eigen::Index b = 0; b < boxes; ++b) {
        const double v = bm.var(b, i);
        const double vt = vcol[b];
        var_red(b, i) += (v - vt) / m_count;
        log_red(b, i) += (std::log(v + set.noise[b]) - std::log(vt + set.noise[b])) / m_count;
      }
    }
  }

  std::vector<EntropyReduction> out(static_cast<std::size_t>(g));
  for (Eigen::Index i = 0; i < g; ++i) {
    out[static_cast<std::size_t>(i)] = {
        make_breakdown(var_red.col(i).head(k), var_red.col(i).tail(boxes - k)),
        make_breakdown(log_red.col(i).head(k), log_red.col(i).tail(boxes - k))};
  }
  return out;
}

/// Absolute variance reduction per box (noise variances cancel).
inline std::vector<AcquisitionBreakdown> mesmoc_plus_batch(const Matrix& xs,
                                                           const AcquisitionSet& set) {
  std::vector<AcquisitionBreakdown> out;
  out.reserve(static_cast<std::size_t>(xs.rows()));
  for (auto& r : entropy_reduction_batch(xs, set)) out.push_back(std::move(r.variance));
  return out;
}

inline AcquisitionBreakdown mesmoc_plus(const Vector& x, const AcquisitionSet& set) {
  Matrix q = x.transpose();
  return mesmoc_plus_batch(q, set).front();
}

inline AcquisitionBreakdown mesmoc_plus_log_breakdown(const Vector& x, const AcquisitionSet& set) {
  Matrix q = x.transpose();
  return entropy_reduction_batch(q, set).front().log_variance;
}

inline double mesmoc_plus_log(const Vector& x, const AcquisitionSet& set) {
  return mesmoc_plus_log_breakdown(x, set).total;
}

// ---------------------------------------------------------------------------
// Summed single-box MES baseline.

/// gamma phi(gamma) / (2 Phi(gamma)) - log Phi(gamma); non-negative.
inline double mes_term(double gamma) {
  return 0.5 * gamma * inverse_mills(gamma) - log_normal_cdf(gamma);
}

/// Admitted when the model-averaged mean of every constraint is strictly positive.
inline std::vector<bool> feasibility_mask_batch(const Matrix& xs, const AcquisitionSet& set) {
  std::vector<bool> admitted(static_cast<std::size_t>(xs.rows()), true);
  if (set.num_constraints == 0) return admitted;
  const auto k = set.num_objectives;
  Matrix mean_c = Matrix::Zero(static_cast<Eigen::Index>(set.num_constraints), xs.rows());
  for (const auto& ctx : set.contexts) {
    for (std::size_t j = 0; j < set.num_constraints; ++j)
      mean_c.row(static_cast<Eigen::Index>(j)) += ctx.models[k + j].predict_mean(xs).transpose();
  }
  for (Eigen::Index i = 0; i < xs.rows(); ++i)
    admitted[static_cast<std::size_t>(i)] = (mean_c.col(i).array() > 0.0).all();
  return admitted;
}

/// Per-box MES terms averaged over contexts (mask not applied).
inline std::vector<AcquisitionBreakdown> mes_breakdown_batch(const Matrix& xs,
                                                             const AcquisitionSet& set) {
  const auto k = static_cast<Eigen::Index>(set.num_objectives);
  const auto boxes = static_cast<Eigen::Index>(set.num_boxes());
  const auto m_count = static_cast<double>(set.contexts.size());
  Matrix acc = Matrix::Zero(boxes, xs.rows());
  for (const auto& ctx : set.contexts) {
    const BatchMoments bm = predict_batch(ctx, xs);
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      for (Eigen::Index b = 0; b < boxes; ++b) {
        const double sd = std::sqrt(bm.var(b, i));
        const double gamma = b < k ? (bm.mean(b, i) - ctx.extremes[b]) / sd
                                   : (ctx.extremes[b] - bm.mean(b, i)) / sd;
        acc(b, i) += mes_term(gamma) / m_count;
      }
    }
  }
  std::vector<AcquisitionBreakdown> out;
  out.reserve(static_cast<std::size_t>(xs.rows()));
  for (Eigen::Index i = 0; i < xs.rows(); ++i)
    out.push_back(make_breakdown(acc.col(i).head(k), acc.col(i).tail(boxes - k)));
  return out;
}

/// Baseline acquisition; -inf where the mask rejects x (if applied).
inline Vector mesmoc_baseline_batch(const Matrix& xs, const AcquisitionSet& set,
                                    bool apply_mask = true) {
  const auto parts = mes_breakdown_batch(xs, set);
  const auto admitted = apply_mask ? feasibility_mask_batch(xs, set)
                                   : std::vector<bool>(static_cast<std::size_t>(xs.rows()), true);
  Vector out(xs.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    out[i] = admitted[static_cast<std::size_t>(i)] ? parts[static_cast<std::size_t>(i)].total
                                                   : -std::numeric_limits<double>::infinity();
  }
  return out;
}

inline double mesmoc_baseline(const Vector& x, const AcquisitionSet& set, bool apply_mask = true) {
  Matrix q = x.transpose();
  return mesmoc_baseline_batch(q, set, apply_mask)[0];
}

// ---------------------------------------------------------------------------
// Quadrature of the exact conditional entropy.

struct QuadSpec {
  std::size_t points = 200;  // per box
  double width = 8.0;        // half-width in predictive standard deviations
};

struct ExactResult {
  double total = 0.0;
  Vector per_box;  // marginal entropy reduction of each box
  bool degenerate = false;
};

namespace detail {

struct QuadAxis {
  std::vector<double> node;
  std::vector<double> weight;
  std::vector<double> dens;      // N(node | m, v)
  std::vector<double> log_dens;
};

inline const GaussLegendre& cached_gauss_legendre(std::size_t n) {
  thread_local std::map<std::size_t, GaussLegendre> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre(n)).first;
  return it->second;
}

// Composite Gauss-Legendre over mean +- width sd, split at the breakpoints so
// that every indicator used by the integrand is constant on each cell.
inline QuadAxis quad_axis(double mean, double var, std::vector<double> breaks, const QuadSpec& q) {
  const double sd = std::sqrt(var);
  const double lo = mean - q.width * sd, hi = mean + q.width * sd;
  std::vector<double> cuts{lo, hi};
  for (double b : breaks)
    if (b > lo && b < hi) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  const std::size_t segs = cuts.size() - 1;

  std::vector<std::size_t> count(segs, 1);
  if (q.points > segs) {
    const std::size_t spare = q.points - segs;
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t used = 0;
    for (std::size_t s = 0; s < segs; ++s) {
      const double share = spare * (cuts[s + 1] - cuts[s]) / (hi - lo);
      const auto whole = static_cast<std::size_t>(share);
      count[s] += whole;
      used += whole;
      rema.push_back({share - static_cast<double>(whole), s});
    }
    std::sort(rema.begin(), rema.end(), std::greater<>());
    for (std::size_t i = 0; used < spare; ++i, ++used) ++count[rema[i % segs].second];
  }

  QuadAxis ax;
  for (std::size_t s = 0; s < segs; ++s) {
    const auto& gl = cached_gauss_legendre(count[s]);
    const double half = 0.5 * (cuts[s + 1] - cuts[s]);
    const double mid = 0.5 * (cuts[s + 1] + cuts[s]);
    for (std::size_t i = 0; i < count[s]; ++i) {
      const double z = mid + half * gl.nodes[i];
      const double t = (z - mean) / sd;
      ax.node.push_back(z);
      ax.weight.push_back(half * gl.weights[i]);
      ax.log_dens.push_back(log_normal_pdf(t) - std::log(sd));
      ax.dens.push_back(std::exp(ax.log_dens.back()));
    }
  }
  return ax;
}

struct AxisSums {
  double mass = 0.0;     // sum w N
  double nlogn = 0.0;    // sum w N log N
};

inline AxisSums axis_sums(const QuadAxis& ax, const std::function<bool(double)>& keep) {
  AxisSums s;
  for (std::size_t i = 0; i < ax.node.size(); ++i) {
    if (!keep(ax.node[i])) continue;
    const double wn = ax.weight[i] * ax.dens[i];
    s.mass += wn;
    s.nlogn += wn * ax.log_dens[i];
  }
  return s;
}

// Product of independent axes: total mass and integral of N log N.
inline AxisSums product_sums(const std::vector<AxisSums>& parts) {
  AxisSums out{1.0, 0.0};
  for (std::size_t i = 0; i < parts.size(); ++i) {
    double others = 1.0;
    for (std::size_t j = 0; j < parts.size(); ++j)
      if (j != i) others *= parts[j].mass;
    out.nlogn += parts[i].nlogn * others;
    out.mass *= parts[i].mass;
  }
  return out;
}

inline double entropy_from_sums(double mass, double nlogn) { return std::log(mass) - nlogn / mass; }

// Entropy of a 1-D density given unnormalized cell masses q_i = w_i p(z_i).
inline double entropy_from_cells(const std::vector<double>& q, const std::vector<double>& w) {
  double z = 0.0;
  for (double v : q) z += std::max(v, 0.0);
  double h = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    const double p = q[i] / z;
    h -= p * std::log(q[i] / (w[i] * z));
  }
  return h;
}

struct ExactContextResult {
  double joint = 0.0;
  Vector per_box;
  bool degenerate = false;
};

inline ExactContextResult exact_context(const PredictiveMoments& m, const FrontSample& front,
                                        const QuadSpec& q) {
  const std::size_t k = m.num_objectives(), c = m.num_constraints();
  std::vector<QuadAxis> fa(k), ca(c);
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> br;
    for (const auto& f : front.objectives) br.push_back(f[static_cast<Eigen::Index>(i)]);
    fa[i] = quad_axis(m.mean_f[static_cast<Eigen::Index>(i)], m.var_f[static_cast<Eigen::Index>(i)], br, q);
  }
  for (std::size_t j = 0; j < c; ++j)
    ca[j] = quad_axis(m.mean_c[static_cast<Eigen::Index>(j)], m.var_c[static_cast<Eigen::Index>(j)], {0.0}, q);

  auto all = [](double) { return true; };
  auto positive = [](double z) { return z >= 0.0; };
  std::vector<AxisSums> f_all(k), c_all(c), c_pos(c);
  for (std::size_t i = 0; i < k; ++i) f_all[i] = axis_sums(fa[i], all);
  for (std::size_t j = 0; j < c; ++j) {
    c_all[j] = axis_sums(ca[j], all);
    c_pos[j] = axis_sums(ca[j], positive);
  }
  const AxisSums tf = product_sums(f_all), tc = product_sums(c_all), tcp = product_sums(c_pos);

  // Objective grid: accumulate the removed set U = {f : f <= f* for some front point}.
  double u_mass = 0.0, u_nlogn = 0.0;
  std::vector<std::vector<double>> u_given(k);  // U mass of the other axes at each node
  for (std::size_t i = 0; i < k; ++i) u_given[i].assign(fa[i].node.size(), 0.0);

  std::vector<std::size_t> idx(k, 0);
  std::vector<double> threshold;  // K == 2: f2 <= max{f*_2 : f*_1 >= f1}
  if (k == 2) {
    threshold.assign(fa[0].node.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t a = 0; a < fa[0].node.size(); ++a)
      for (const auto& f : front.objectives)
        if (fa[0].node[a] <= f[0]) threshold[a] = std::max(threshold[a], f[1]);
  }
  auto in_u = [&](const std::vector<std::size_t>& at) {
    if (k == 2) return fa[1].node[at[1]] <= threshold[at[0]];
    for (const auto& f : front.objectives) {
      bool below = true;
      for (std::size_t i = 0; i < k && below; ++i) below = fa[i].node[at[i]] <= f[static_cast<Eigen::Index>(i)];
      if (below) return true;
    }
    return false;
  };
  std::size_t total_points = 1;
  for (const auto& ax : fa) total_points *= ax.node.size();
  for (std::size_t flat = 0; flat < total_points; ++flat) {
    std::size_t r = flat;
    for (std::size_t i = 0; i < k; ++i) {
      idx[i] = r % fa[i].node.size();
      r /= fa[i].node.size();
    }
    if (front.empty() || !in_u(idx)) continue;
    double wn = 1.0, logn = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      wn *= fa[i].weight[idx[i]] * fa[i].dens[idx[i]];
      logn += fa[i].log_dens[idx[i]];
    }
    u_mass += wn;
    u_nlogn += wn * logn;
    for (std::size_t i = 0; i < k; ++i)
      u_given[i][idx[i]] += wn / (fa[i].weight[idx[i]] * fa[i].dens[idx[i]]);
  }

  ExactContextResult out;
  const double mass_all = tf.mass * tc.mass;
  const double nlogn_all = tf.nlogn * tc.mass + tf.mass * tc.nlogn;
  const double mass_r = u_mass * tcp.mass;
  const double nlogn_r = u_nlogn * tcp.mass + u_mass * tcp.nlogn;
  const double z = mass_all - mass_r;
  const double h0 = entropy_from_sums(mass_all, nlogn_all);
  if (!(z > 1e-12 * mass_all)) {
    out.degenerate = true;
    out.joint = h0;
  } else {
    out.joint = h0 - entropy_from_sums(z, nlogn_all - nlogn_r);
  }

  out.per_box.resize(static_cast<Eigen::Index>(k + c));
  for (std::size_t i = 0; i < k; ++i) {
    double others = tc.mass;
    for (std::size_t l = 0; l < k; ++l)
      if (l != i) others *= f_all[l].mass;
    std::vector<double> q0, q1;
    for (std::size_t a = 0; a < fa[i].node.size(); ++a) {
      const double wn = fa[i].weight[a] * fa[i].dens[a];
      q0.push_back(wn);
      q1.push_back(wn * (others - tcp.mass * u_given[i][a]));
    }
    out.per_box[static_cast<Eigen::Index>(i)] =
        entropy_from_cells(q0, fa[i].weight) - entropy_from_cells(q1, fa[i].weight);
  }
  for (std::size_t j = 0; j < c; ++j) {
    double others_all = tf.mass, others_pos = u_mass;
    for (std::size_t l = 0; l < c; ++l) {
      if (l == j) continue;
      others_all *= c_all[l].mass;
      others_pos *= c_pos[l].mass;
    }
    std::vector<double> q0, q1;
    for (std::size_t a = 0; a < ca[j].node.size(); ++a) {
      const double wn = ca[j].weight[a] * ca[j].dens[a];
      q0.push_back(wn);
      q1.push_back(wn * (others_all - (ca[j].node[a] >= 0.0 ? others_pos : 0.0)));
    }
    out.per_box[static_cast<Eigen::Index>(k + j)] =
        entropy_from_cells(q0, ca[j].weight) - entropy_from_cells(q1, ca[j].weight);
  }
  return out;
}

}  // namespace detail

/// Brute-force entropy reduction H(y | D, x) - mean_m H(y | D, x, Y*_m) for
/// noiseless predictives, by tensor-grid quadrature; also reports the marginal
/// reduction of each box. Requires K + C <= 3.
inline ExactResult exact_acquisition(const Vector& x, const AcquisitionSet& set,
                                     const QuadSpec& quad = {}) {
  if (set.num_boxes() > 3) throw Error("exact_acquisition: needs K + C <= 3");
  ExactResult out;
  out.per_box = Vector::Zero(static_cast<Eigen::Index>(set.num_boxes()));
  const auto m_count = static_cast<double>(set.contexts.size());
  for (const auto& ctx : set.contexts) {
    const auto moments = predict_moments(ctx, set.num_objectives, x);
    const auto r = detail::exact_context(moments, ctx.front, quad);
    out.total += r.joint / m_count;
    out.per_box += r.per_box / m_count;
    out.degenerate = out.degenerate || r.degenerate;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization.

struct OptimizeResult {
  Vector x;
  double value = 0.0;
  double grid_value = 0.0;
  bool random_fallback = false;
};

namespace detail {

// Bounded quasi-Newton (projected BFGS) ascent with central-difference gradients.
template <class Scalar>
std::pair<Vector, double> refine(Scalar&& f, Vector x, double fx, const Vector& lower,
                                 const Vector& upper, std::size_t max_iter = 30) {
  const Eigen::Index d = x.size();
  const Vector h = 1e-4 * (upper - lower);
  auto grad = [&](const Vector& at) {
    Vector g(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      Vector a = at, b = at;
      a[i] = std::min(at[i] + h[i], upper[i]);
      b[i] = std::max(at[i] - h[i], lower[i]);
      g[i] = (f(a) - f(b)) / (a[i] - b[i]);
    }
    return g;
  };
  auto clip = [&](Vector v) { return v.cwiseMax(lower).cwiseMin(upper); };

  Vector g = grad(x);
  if (!g.allFinite()) return {x, fx};
  Matrix hinv = Matrix::Identity(d, d);
  bool scaled = false;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Vector p = scaled ? Vector(hinv * g)
                      : Vector(g * (0.05 / std::max(g.cwiseAbs().maxCoeff(), 1e-300)))
                            .cwiseProduct(upper - lower);
    for (Eigen::Index i = 0; i < d; ++i) {
      if ((x[i] >= upper[i] && p[i] > 0) || (x[i] <= lower[i] && p[i] < 0)) p[i] = 0.0;
    }
    if (p.norm() < 1e-12) break;
    double t = 1.0;
    Vector xn;
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      xn = clip(x + t * p);
      fn = f(xn);
      if (std::isfinite(fn) && fn >= fx + 1e-4 * g.dot(xn - x) && fn > fx) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Vector gn = grad(xn);
    if (!gn.allFinite()) {
      x = xn;
      fx = fn;
      break;
    }
    const Vector s = xn - x;
    const Vector y = g - gn;  // gradient change of the minimized objective -f
    const double sy = s.dot(y);
    if (sy > 1e-16) {
      if (!scaled) {
        hinv = Matrix::Identity(d, d) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Matrix eye = Matrix::Identity(d, d);
      hinv = (eye - rho * s * y.transpose()) * hinv * (eye - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    const double gain = fn - fx;
    x = xn;
    fx = fn;
    g = gn;
    if (gain < 1e-12 * (1.0 + std::abs(fx))) break;
  }
  return {x, fx};
}

}  // namespace detail

/// Maximizes a batch acquisition (rows of a matrix -> values) over a box:
/// best of a seeded uniform grid, then bounded quasi-Newton refinement.
/// Falls back to a uniform random point when no grid value is finite or all
/// grid values are equal.
template <class BatchAcq>
OptimizeResult optimize_acquisition(BatchAcq&& acq, const Vector& lower, const Vector& upper,
                                    std::size_t grid_size, std::uint64_t seed, bool refine = true) {
  const Eigen::Index d = lower.size();
  std::mt19937_64 rng(seed);
  Matrix grid = uniform_grid(grid_size, static_cast<std::size_t>(d), rng);
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    grid.row(i) = (lower + grid.row(i).transpose().cwiseProduct(upper - lower)).transpose();
  const Vector values = acq(grid);

  Eigen::Index best = -1;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    lo = std::min(lo, values[i]);
    if (values[i] > hi) {
      hi = values[i];
      best = i;
    }
  }
  OptimizeResult out;
  if (best < 0 || !(hi > lo)) {
    out.random_fallback = true;
    out.x = lower + uniform_point(static_cast<std::size_t>(d), rng).cwiseProduct(upper - lower);
    Matrix q = out.x.transpose();
    out.value = acq(q)[0];
    out.grid_value = best < 0 ? out.value : hi;
    return out;
  }
  out.x = grid.row(best).transpose();
  out.value = out.grid_value = hi;
  if (!refine) return out;
  auto scalar = [&](const Vector& x) {
    Matrix q = x.transpose();
    return acq(q)[0];
  };
  auto [xr, fr] = detail::refine(scalar, out.x, out.value, lower, upper);
  if (fr > out.value) {
    out.x = xr;
    out.value = fr;
  }
  return out;
}

struct BoxCandidate {
  BlackBoxId box;
  Vector x;
  double value = 0.0;
};

/// Box with the largest individually-optimized acquisition. Ties go to the
/// earlier candidate in (objectives, then constraints; ascending index) order.
inline BoxCandidate decoupled_select(std::vector<BoxCandidate> candidates) {
  if (candidates.empty()) throw Error("decoupled_select: no candidates");
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const BoxCandidate& a, const BoxCandidate& b) { return a.box < b.box; });
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].value > candidates[best].value) best = i;
  return candidates[best];
}

}  // namespace paretomax
