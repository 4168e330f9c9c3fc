#pragma once

// Outer Bayesian-optimization loop (coupled and decoupled), GP-mean
// recommendations, GP-sampled synthetic problems and the benchmark harness.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "paretomax/acquisition.hpp"
#include "paretomax/adf.hpp"
#include "paretomax/core.hpp"
#include "paretomax/gp.hpp"
#include "paretomax/math.hpp"
#include "paretomax/parallel.hpp"
#include "paretomax/pareto.hpp"
#include "paretomax/sampler.hpp"

namespace paretomax {

/// Evaluates one black-box at an input in problem coordinates.
using BlackBox = std::function<double(const BlackBoxId&, const Vector&)>;

/// Scores a recommendation (log hypervolume relative difference, or NaN).
using Scorer = std::function<double(const RecommendationSet&)>;

// ---------------------------------------------------------------------------
// Models and acquisition contexts.

/// Hyperparameter samples and refit models for every box, from the current
/// observations. `chains` holds per-box slice-sampler warm starts (updated).
inline std::vector<HyperSampleSet> fit_models(const ObservationSet& obs, const RunConfig& cfg,
                                              std::uint64_t seed, std::vector<Vector>* chains = nullptr,
                                              const HyperPrior& prior = {}) {
  const ProblemSpec& spec = obs.problem();
  const std::size_t boxes = spec.num_boxes();
  std::vector<HyperSampleSet> out(boxes);
  if (chains && chains->size() != boxes) chains->assign(boxes, Vector());
  parallel_for(boxes, [&](std::size_t b) {
    const BlackBoxId box = spec.box_at(b);
    const Matrix x = obs.input_matrix(box, true);
    const Vector y = obs.value_vector(box);
    if (cfg.hyper_sampling.kind == HyperSampling::Kind::Fixed) {
      out[b] = fixed_hypers(x, y, to_kernel_params(cfg.hyper_sampling.fixed));
      return;
    }
    const Vector* warm = (chains && (*chains)[b].size() > 0) ? &(*chains)[b] : nullptr;
    SliceSchedule schedule;
    if (warm) schedule.burn_in = 10;
    out[b] = slice_sample_hypers(x, y, prior, cfg.hyper_sampling.samples,
                                 derive_seed(seed, Stream::Hypers, b), warm, schedule);
    if (chains) (*chains)[b] = out[b].chain_state;
  });
  return out;
}

/// Unit-cube inputs observed on any box, one row each.
inline Matrix observed_unit_inputs(const ObservationSet& obs) {
  const auto xs = obs.distinct_inputs();
  Matrix m(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(obs.problem().dim));
  for (std::size_t i = 0; i < xs.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = obs.problem().to_unit(xs[i]).transpose();
  return m;
}

/// M contexts: hyper sample m mod S paired with front sample m.
inline AcquisitionSet build_acquisition_set(const ObservationSet& obs,
                                            const std::vector<HyperSampleSet>& models,
                                            const RunConfig& cfg, std::uint64_t seed) {
  const ProblemSpec& spec = obs.problem();
  AcquisitionSet set;
  set.num_objectives = spec.num_objectives;
  set.num_constraints = spec.num_constraints;
  set.noise = Eigen::Map<const Vector>(spec.noise_variance.data(),
                                       static_cast<Eigen::Index>(spec.noise_variance.size()));
  set.contexts.resize(cfg.num_front_samples);
  const Matrix observed = observed_unit_inputs(obs);
  std::vector<std::vector<double>> observed_values(spec.num_boxes());
  for (std::size_t b = 0; b < spec.num_boxes(); ++b) observed_values[b] = obs.values(spec.box_at(b));

  parallel_for(cfg.num_front_samples, [&](std::size_t m) {
    AcquisitionContext& ctx = set.contexts[m];
    for (const auto& hs : models) ctx.models.push_back(hs.models[m % hs.size()]);
    ctx.front = sample_front(ctx.models, spec.num_objectives, cfg.front_grid_size, observed,
                             cfg.front_size, cfg.rff_features, derive_seed(seed, Stream::Rff, m));
    ctx.order = adf_order(ctx.front.size(), derive_seed(seed, Stream::AdfOrder, m));
    ctx.extremes = mes_extremes(ctx.front, spec.num_objectives, observed_values);
  });
  return set;
}

/// Evaluates a row-wise batch function over chunks of rows in parallel.
template <class T, class Fn>
std::vector<T> chunked_rows(const Matrix& xs, Fn&& fn, std::size_t chunk = 128) {
  const auto n = static_cast<std::size_t>(xs.rows());
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<std::vector<T>> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const auto start = static_cast<Eigen::Index>(c * chunk);
    const auto len = static_cast<Eigen::Index>(std::min(chunk, n - c * chunk));
    parts[c] = fn(Matrix(xs.middleRows(start, len)));
  });
  std::vector<T> out;
  out.reserve(n);
  for (auto& p : parts)
    for (auto& v : p) out.push_back(std::move(v));
  return out;
}

// ---------------------------------------------------------------------------
// Recommendation.

/// GP-mean Pareto set over a seeded grid plus the observed inputs. Means are
/// averaged over hyperparameter samples.
inline RecommendationSet recommend(const ObservationSet& obs, const std::vector<HyperSampleSet>& models,
                                   std::size_t grid_size, std::uint64_t seed) {
  const ProblemSpec& spec = obs.problem();
  std::mt19937_64 rng(seed);
  const Matrix observed = observed_unit_inputs(obs);
  Matrix grid(static_cast<Eigen::Index>(grid_size) + observed.rows(), static_cast<Eigen::Index>(spec.dim));
  grid.topRows(static_cast<Eigen::Index>(grid_size)) = uniform_grid(grid_size, spec.dim, rng);
  if (observed.rows() > 0) grid.bottomRows(observed.rows()) = observed;

  const std::size_t boxes = spec.num_boxes();
  Matrix means(static_cast<Eigen::Index>(boxes), grid.rows());
  parallel_for(boxes, [&](std::size_t b) {
    Vector acc = Vector::Zero(grid.rows());
    for (const auto& model : models[b].models) acc += model.predict_mean(grid);
    means.row(static_cast<Eigen::Index>(b)) = (acc / static_cast<double>(models[b].size())).transpose();
  });

  const auto k = static_cast<Eigen::Index>(spec.num_objectives);
  const auto c = static_cast<Eigen::Index>(spec.num_constraints);
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    if (c == 0 || (means.col(i).tail(c).array() >= 0.0).all()) candidates.push_back(i);

  RecommendationSet rec;
  if (candidates.empty()) {
    rec.fallback = true;
    std::vector<std::pair<double, Eigen::Index>> violation;
    for (Eigen::Index i = 0; i < grid.rows(); ++i)
      violation.push_back({(-means.col(i).tail(c).array()).max(0.0).sum(), i});
    std::sort(violation.begin(), violation.end());
    const auto keep = std::max<std::size_t>(1, violation.size() / 20);
    for (std::size_t i = 0; i < keep; ++i) candidates.push_back(violation[i].second);
  }
  Matrix objs(static_cast<Eigen::Index>(candidates.size()), k);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    objs.row(static_cast<Eigen::Index>(i)) = means.col(candidates[i]).head(k).transpose();
  for (auto i : non_dominated_indices(objs)) {
    const Eigen::Index col = candidates[i];
    rec.inputs.push_back(spec.from_unit(grid.row(col).transpose()));
    rec.fronts.push_back(objs.row(static_cast<Eigen::Index>(i)).transpose());
    rec.feasible.push_back(!rec.fallback);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Run state and steps.

struct TraceRow {
  std::size_t iteration = 0;  // 0 = initial design
  BlackBoxId box;
  Vector x;
  double y = 0.0;
  bool random_fallback = false;
};

struct BoState {
  ProblemSpec problem;
  RunConfig config;
  BlackBox black_box;
  ObservationSet obs;
  std::size_t iteration = 0;
  std::vector<HyperSampleSet> models;
  std::vector<Vector> chains;
  std::vector<TraceRow> rows;
};

inline void refit(BoState& state) {
  state.models = fit_models(state.obs, state.config,
                            derive_seed(state.config.seed, Stream::Hypers, state.iteration),
                            &state.chains);
}

inline void evaluate_and_record(BoState& state, const BlackBoxId& box, const Vector& x,
                                bool random_fallback) {
  const double y = state.black_box(box, x);
  if (!std::isfinite(y)) throw Error("black-box " + to_string(box) + " returned a non-finite value");
  state.obs.append(box, x, y);
  state.rows.push_back({state.iteration, box, x, y, random_fallback});
}

/// Evaluates the seeded initial design on every box and fits the first models.
inline BoState init_state(const ProblemSpec& problem, const RunConfig& config, BlackBox black_box) {
  BoState state;
  state.problem = make_problem(problem);
  state.config = resolve(config, state.problem);
  state.black_box = std::move(black_box);
  state.obs = ObservationSet(state.problem);
  std::mt19937_64 rng(derive_seed(state.config.seed, Stream::InitialDesign));
  const Matrix design = uniform_grid(state.config.initial_design_size, state.problem.dim, rng);
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const Vector x = state.problem.from_unit(design.row(i).transpose());
    for (std::size_t b = 0; b < state.problem.num_boxes(); ++b)
      evaluate_and_record(state, state.problem.box_at(b), x, false);
  }
  refit(state);
  return state;
}

struct Proposal {
  std::vector<BlackBoxId> boxes;
  Vector x;  // problem coordinates
  double value = 0.0;
  bool random_fallback = false;
};

namespace detail {

inline Vector random_unit_point(const BoState& s) {
  std::mt19937_64 rng(derive_seed(s.config.seed, Stream::RandomPolicy, s.iteration));
  return uniform_point(s.problem.dim, rng);
}

inline std::vector<BlackBoxId> all_boxes(const ProblemSpec& p) {
  std::vector<BlackBoxId> out;
  for (std::size_t b = 0; b < p.num_boxes(); ++b) out.push_back(p.box_at(b));
  return out;
}

// Per-box breakdowns for the acquisition a method maximizes.
inline std::vector<AcquisitionBreakdown> breakdown_batch(Method method, const Matrix& xs,
                                                         const AcquisitionSet& set) {
  switch (method) {
    case Method::MesmocPlus:
    case Method::MesmocPlusDec:
      return chunked_rows<AcquisitionBreakdown>(
          xs, [&](const Matrix& m) { return mesmoc_plus_batch(m, set); });
    case Method::MesmocPlusLog:
      return chunked_rows<AcquisitionBreakdown>(xs, [&](const Matrix& m) {
        std::vector<AcquisitionBreakdown> out;
        for (auto& r : entropy_reduction_batch(m, set)) out.push_back(std::move(r.log_variance));
        return out;
      });
    case Method::Mesmoc:
    case Method::MesmocDec:
      return chunked_rows<AcquisitionBreakdown>(xs, [&](const Matrix& m) {
        auto parts = mes_breakdown_batch(m, set);
        const auto admitted = feasibility_mask_batch(m, set);
        constexpr double reject = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < parts.size(); ++i) {
          if (admitted[i]) continue;
          parts[i].per_objective.setConstant(reject);
          parts[i].per_constraint.setConstant(reject);
          parts[i].total = reject;
        }
        return parts;
      });
    case Method::Random:
      break;
  }
  throw Error("breakdown_batch: method has no acquisition");
}

}  // namespace detail

/// Next input for a coupled method; every box will be evaluated there.
inline Proposal propose_coupled(const BoState& s) {
  Proposal p;
  p.boxes = detail::all_boxes(s.problem);
  const Vector lo = Vector::Zero(static_cast<Eigen::Index>(s.problem.dim));
  const Vector hi = Vector::Ones(static_cast<Eigen::Index>(s.problem.dim));
  if (s.config.method == Method::Random) {
    p.x = s.problem.from_unit(detail::random_unit_point(s));
    return p;
  }
  const std::uint64_t it_seed = derive_seed(s.config.seed, Stream::AcqGrid, s.iteration);
  const AcquisitionSet set = build_acquisition_set(s.obs, s.models, s.config,
                                                   derive_seed(s.config.seed, Stream::Rff, s.iteration));
  auto acq = [&](const Matrix& xs) {
    const auto parts = detail::breakdown_batch(s.config.method, xs, set);
    Vector v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parts[i].total;
    return v;
  };
  const auto r = optimize_acquisition(acq, lo, hi, s.config.acq_grid_size, it_seed);
  p.x = s.problem.from_unit(r.x.cwiseMax(lo).cwiseMin(hi));
  p.value = r.value;
  p.random_fallback = r.random_fallback;
  return p;
}

/// Next (box, input) for a decoupled method: each box's term is optimized
/// alone and the box with the largest maximum wins.
inline Proposal propose_decoupled(const BoState& s) {
  const auto d = static_cast<Eigen::Index>(s.problem.dim);
  const Vector lo = Vector::Zero(d), hi = Vector::Ones(d);
  const std::uint64_t it_seed = derive_seed(s.config.seed, Stream::AcqGrid, s.iteration);
  const AcquisitionSet set = build_acquisition_set(s.obs, s.models, s.config,
                                                   derive_seed(s.config.seed, Stream::Rff, s.iteration));
  // Every box uses the same seeded grid, so its breakdown is computed once.
  Matrix cached_grid;
  std::vector<AcquisitionBreakdown> cached;
  auto parts_for = [&](const Matrix& xs) -> const std::vector<AcquisitionBreakdown>& {
    if (xs.rows() > 1 && cached_grid.rows() == xs.rows() && cached_grid == xs) return cached;
    auto parts = detail::breakdown_batch(s.config.method, xs, set);
    if (xs.rows() > 1) {
      cached_grid = xs;
      cached = std::move(parts);
      return cached;
    }
    thread_local std::vector<AcquisitionBreakdown> single;
    single = std::move(parts);
    return single;
  };

  std::vector<BoxCandidate> candidates;
  bool all_fallback = true;
  for (std::size_t b = 0; b < s.problem.num_boxes(); ++b) {
    auto acq = [&](const Matrix& xs) {
      const auto& parts = parts_for(xs);
      Vector v(static_cast<Eigen::Index>(parts.size()));
      for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parts[i].component(b);
      return v;
    };
    const auto r = optimize_acquisition(acq, lo, hi, s.config.acq_grid_size, it_seed);
    all_fallback = all_fallback && r.random_fallback;
    candidates.push_back({s.problem.box_at(b), r.x.cwiseMax(lo).cwiseMin(hi), r.value});
  }

  Proposal p;
  if (all_fallback) {
    std::mt19937_64 rng(derive_seed(s.config.seed, Stream::RandomPolicy, s.iteration, 1));
    std::uniform_int_distribution<std::size_t> pick(0, s.problem.num_boxes() - 1);
    p.boxes = {s.problem.box_at(pick(rng))};
    p.x = s.problem.from_unit(uniform_point(s.problem.dim, rng));
    p.random_fallback = true;
    return p;
  }
  for (auto& c : candidates)
    if (!std::isfinite(c.value)) c.value = -std::numeric_limits<double>::infinity();
  const auto best = decoupled_select(candidates);
  p.boxes = {best.box};
  p.x = s.problem.from_unit(best.x);
  p.value = best.value;
  return p;
}

inline void apply_proposal(BoState& state, const Proposal& p) {
  ++state.iteration;
  for (const auto& box : p.boxes) evaluate_and_record(state, box, p.x, p.random_fallback);
  refit(state);
}

/// One coupled iteration: all K + C boxes evaluated at the chosen input.
inline void bo_step_coupled(BoState& state) { apply_proposal(state, propose_coupled(state)); }

/// One decoupled iteration: exactly one black-box evaluation.
inline void bo_step_decoupled(BoState& state) { apply_proposal(state, propose_decoupled(state)); }

inline void bo_step(BoState& state) {
  if (is_decoupled(state.config.method)) bo_step_decoupled(state);
  else bo_step_coupled(state);
}

inline RecommendationSet recommend(const BoState& state) {
  return recommend(state.obs, state.models, state.config.recommend_grid_size,
                   derive_seed(state.config.seed, Stream::Recommend, state.iteration));
}

// ---------------------------------------------------------------------------
// Whole runs.

struct RunTrace {
  ProblemSpec problem;
  RunConfig config;
  std::vector<TraceRow> rows;
  std::vector<double> metric;                     // per iteration 0..T
  std::vector<std::vector<std::size_t>> counts;   // cumulative per-box counts per iteration
  std::vector<double> wall_seconds;               // per iteration (not deterministic)
  bool aborted = false;
  std::string abort_reason;

  std::size_t iterations_completed() const { return metric.empty() ? 0 : metric.size() - 1; }
};

inline RunTrace run_bo(const ProblemSpec& problem, const RunConfig& config, const BlackBox& black_box,
                       const Scorer& scorer = {}) {
  RunTrace trace;
  using clock = std::chrono::steady_clock;
  auto started = clock::now();
  auto snapshot = [&](const BoState& s) {
    trace.rows = s.rows;
    trace.metric.push_back(scorer ? scorer(recommend(s)) : std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> c;
    for (std::size_t b = 0; b < s.problem.num_boxes(); ++b) c.push_back(s.obs.count(s.problem.box_at(b)));
    trace.counts.push_back(std::move(c));
    const auto now = clock::now();
    trace.wall_seconds.push_back(std::chrono::duration<double>(now - started).count());
    started = now;
  };

  BoState state;
  try {
    state = init_state(problem, config, black_box);
  } catch (const std::exception& e) {
    trace.problem = problem;
    trace.config = config;
    trace.aborted = true;
    trace.abort_reason = e.what();
    return trace;
  }
  trace.problem = state.problem;
  trace.config = state.config;
  snapshot(state);
  for (std::size_t t = 0; t < state.config.iterations; ++t) {
    try {
      bo_step(state);
    } catch (const std::exception& e) {
      trace.rows = state.rows;
      trace.aborted = true;
      trace.abort_reason = e.what();
      spdlog::error("run aborted at iteration {}: {}", state.iteration, e.what());
      return trace;
    }
    snapshot(state);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// GP-sampled synthetic problems.

struct SyntheticSpec {
  std::size_t dim = 2;
  std::size_t num_objectives = 2;
  std::size_t num_constraints = 1;
  double noise_variance = 0.0;
  double amplitude = 1.0;
  double lengthscale = 0.3;  // on the unit cube
  std::size_t features = 500;
  std::size_t hv_grid = 100000;
};

/// True black-boxes drawn from a zero-mean Matern-5/2 GP prior on [0, 1]^d.
struct SyntheticProblem {
  SyntheticSpec settings;
  ProblemSpec spec;
  std::vector<RffFunctionSample> truth;  // objectives first
  Vector reference;
  double hv_max = 0.0;
  std::uint64_t seed = 0;
  std::size_t attempts = 1;

  /// Noiseless values, (K + C) x n, at the rows of xs (problem coordinates).
  Matrix evaluate_batch(const Matrix& xs) const {
    Matrix out(static_cast<Eigen::Index>(truth.size()), xs.rows());
    constexpr Eigen::Index chunk = 4096;
    for (Eigen::Index s = 0; s < xs.rows(); s += chunk) {
      const Eigen::Index len = std::min(chunk, xs.rows() - s);
      const Matrix part = xs.middleRows(s, len);
      for (std::size_t b = 0; b < truth.size(); ++b)
        out.row(static_cast<Eigen::Index>(b)).segment(s, len) = truth[b].evaluate_batch(part).transpose();
    }
    return out;
  }

  double evaluate(const BlackBoxId& box, const Vector& x) const {
    return truth.at(spec.flat_index(box)).evaluate(x);
  }
};

namespace detail {

// Feasible non-dominated objective vectors of a (K + C) x n value matrix.
inline std::vector<Vector> feasible_front(const Matrix& values, std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(k);
  const Eigen::Index c = values.rows() - kk;
  std::vector<Vector> pts;
  for (Eigen::Index i = 0; i < values.cols(); ++i)
    if (c == 0 || (values.col(i).tail(c).array() >= 0.0).all()) pts.push_back(values.col(i).head(kk));
  return non_dominated(pts);
}

inline std::uint64_t hash_input(const Vector& x) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &x[i], sizeof bits);
    h = splitmix64(h ^ bits);
  }
  return h;
}

}  // namespace detail

/// Draws a problem instance. Instances without any feasible point on the
/// hypervolume grid are redrawn from the next derived seed.
inline SyntheticProblem make_synthetic_problem(const SyntheticSpec& settings, std::uint64_t seed) {
  ProblemSpec spec;
  spec.dim = settings.dim;
  spec.lower = Vector::Zero(static_cast<Eigen::Index>(settings.dim));
  spec.upper = Vector::Ones(static_cast<Eigen::Index>(settings.dim));
  spec.num_objectives = settings.num_objectives;
  spec.num_constraints = settings.num_constraints;
  spec.noise_variance.assign(spec.num_boxes(), settings.noise_variance);
  spec = make_problem(spec);
  const KernelParams kp = KernelParams::isotropic(settings.dim, settings.amplitude, settings.lengthscale, 0.0);

  std::mt19937_64 grid_rng(derive_seed(seed, Stream::Problem, 0));
  const Matrix grid = uniform_grid(settings.hv_grid, settings.dim, grid_rng);
  for (std::size_t attempt = 1; attempt <= 100; ++attempt) {
    SyntheticProblem p;
    p.settings = settings;
    p.spec = spec;
    p.seed = seed;
    p.attempts = attempt;
    for (std::size_t b = 0; b < spec.num_boxes(); ++b) {
      std::mt19937_64 rng(derive_seed(seed, Stream::Problem, attempt, b));
      p.truth.push_back(draw_prior_sample(kp, settings.features, rng));
    }
    const Matrix values = p.evaluate_batch(grid);
    const auto front = detail::feasible_front(values, spec.num_objectives);
    if (front.empty()) continue;
    const auto k = static_cast<Eigen::Index>(spec.num_objectives);
    const Vector hi = values.topRows(k).rowwise().maxCoeff();
    const Vector lo = values.topRows(k).rowwise().minCoeff();
    p.reference = hi + 0.1 * (hi - lo);
    p.hv_max = hypervolume(front, p.reference);
    if (!(p.hv_max > 0.0)) continue;
    return p;
  }
  throw Error("make_synthetic_problem: no feasible instance after 100 attempts");
}

/// Observations from the true functions plus Gaussian noise of the instance's
/// variance. The noise draw is a deterministic function of (seed, box, x).
inline BlackBox synthetic_black_box(const SyntheticProblem& problem, std::uint64_t noise_seed) {
  return [&problem, noise_seed](const BlackBoxId& box, const Vector& x) {
    double y = problem.evaluate(box, x);
    const double var = problem.spec.noise(box);
    if (var > 0.0) {
      std::mt19937_64 rng(derive_seed(noise_seed, Stream::Noise, problem.spec.flat_index(box),
                                      detail::hash_input(x)));
      y += std::sqrt(var) * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    return y;
  };
}

/// Log hypervolume relative difference of a recommendation, scored with the
/// true functions: infeasible recommended points contribute nothing.
inline double score_recommendation(const SyntheticProblem& problem, const RecommendationSet& rec) {
  double hv = 0.0;
  if (!rec.inputs.empty()) {
    Matrix xs(static_cast<Eigen::Index>(rec.size()), static_cast<Eigen::Index>(problem.spec.dim));
    for (std::size_t i = 0; i < rec.size(); ++i) xs.row(static_cast<Eigen::Index>(i)) = rec.inputs[i].transpose();
    hv = hypervolume(detail::feasible_front(problem.evaluate_batch(xs), problem.spec.num_objectives),
                     problem.reference);
  }
  return log_hv_rel_diff(hv, problem.hv_max);
}

inline RunTrace run_synthetic(const SyntheticProblem& problem, const RunConfig& config) {
  return run_bo(problem.spec, config, synthetic_black_box(problem, config.seed),
                [&](const RecommendationSet& rec) { return score_recommendation(problem, rec); });
}

// ---------------------------------------------------------------------------
// Benchmark harness.

struct BenchmarkConfig {
  SyntheticSpec problem;
  std::size_t reps = 1;
  std::vector<Method> methods;
  RunConfig run;  // run.seed is the master seed
};

struct RepResult {
  Method method = Method::Random;
  std::size_t rep = 0;
  std::vector<double> metric;  // iterations 0..T
  std::vector<std::vector<std::size_t>> counts;
  bool aborted = false;
};

struct BenchRow {
  Method method = Method::Random;
  std::size_t iteration = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t reps = 0;
};

inline std::uint64_t rep_problem_seed(std::uint64_t master, std::size_t rep) {
  return derive_seed(master, Stream::Problem, rep);
}
inline std::uint64_t rep_run_seed(std::uint64_t master, std::size_t rep) {
  return derive_seed(master, Stream::Benchmark, rep);
}

/// Runs every (method, rep) pair not supplied by `cached`, in parallel over
/// pairs. Every rep uses the same problem instance and run seed for all
/// methods. `on_done` is called (serialized) as each new pair finishes.
inline std::vector<RepResult> run_benchmark(
    const BenchmarkConfig& cfg,
    const std::function<std::optional<RepResult>(Method, std::size_t)>& cached = {},
    const std::function<void(const RepResult&)>& on_done = {}) {
  if (cfg.reps == 0) throw Error("benchmark: reps must be >= 1");
  if (cfg.methods.empty()) throw Error("benchmark: no methods");
  std::vector<SyntheticProblem> problems(cfg.reps);
  parallel_for(cfg.reps, [&](std::size_t r) {
    problems[r] = make_synthetic_problem(cfg.problem, rep_problem_seed(cfg.run.seed, r));
  });

  const std::size_t pairs = cfg.methods.size() * cfg.reps;
  std::vector<RepResult> results(pairs);
  std::mutex done_mutex;
  parallel_for(pairs, [&](std::size_t i) {
    const Method method = cfg.methods[i / cfg.reps];
    const std::size_t rep = i % cfg.reps;
    if (cached) {
      if (auto hit = cached(method, rep)) {
        results[i] = std::move(*hit);
        return;
      }
    }
    RunConfig rc = cfg.run;
    rc.method = method;
    rc.seed = rep_run_seed(cfg.run.seed, rep);
    const RunTrace trace = run_synthetic(problems[rep], rc);
    results[i] = {method, rep, trace.metric, trace.counts, trace.aborted};
    if (on_done) {
      std::lock_guard lock(done_mutex);
      on_done(results[i]);
    }
  });
  return results;
}

/// Mean and standard error over reps of the metric, per method and iteration 1..T.
inline std::vector<BenchRow> aggregate_benchmark(const BenchmarkConfig& cfg,
                                                 const std::vector<RepResult>& results) {
  std::vector<BenchRow> rows;
  for (Method method : cfg.methods) {
    for (std::size_t t = 1; t <= cfg.run.iterations; ++t) {
      std::vector<double> vals;
      for (const auto& r : results)
        if (r.method == method && t < r.metric.size()) vals.push_back(r.metric[t]);
      BenchRow row{method, t, std::numeric_limits<double>::quiet_NaN(), 0.0, vals.size()};
      if (!vals.empty()) {
        double sum = 0.0;
        for (double v : vals) sum += v;
        row.mean = sum / static_cast<double>(vals.size());
        double ss = 0.0;
        for (double v : vals) ss += (v - row.mean) * (v - row.mean);
        row.stderr_ = vals.size() > 1
                          ? std::sqrt(ss / static_cast<double>(vals.size() - 1) / static_cast<double>(vals.size()))
                          : 0.0;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace paretomax
