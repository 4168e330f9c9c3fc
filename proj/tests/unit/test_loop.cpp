#include <catch_amalgamated.hpp>

#include <atomic>
#include <set>

#include "oracles.hpp"
#include "paretomax/loop.hpp"

using namespace paretomax;

namespace {

RunConfig fast_config(Method method, std::size_t iterations, std::uint64_t seed) {
  RunConfig c;
  c.method = method;
  c.iterations = iterations;
  c.seed = seed;
  c.num_front_samples = 3;
  c.front_size = 10;
  c.rff_features = 200;
  c.acq_grid_size = 100;
  c.front_grid_size = 200;
  c.recommend_grid_size = 300;
  c.hyper_sampling.kind = HyperSampling::Kind::Fixed;
  c.hyper_sampling.fixed.lengthscales = {0.3};
  c.hyper_sampling.fixed.noise_variance = 1e-4;
  return c;
}

SyntheticSpec small_spec(std::size_t k = 2, std::size_t c = 1) {
  SyntheticSpec s;
  s.num_objectives = k;
  s.num_constraints = c;
  s.features = 200;
  s.hv_grid = 5000;
  return s;
}

std::vector<std::size_t> counts(const BoState& s) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < s.problem.num_boxes(); ++b) out.push_back(s.obs.count(s.problem.box_at(b)));
  return out;
}

}  // namespace

TEST_CASE("coupled steps evaluate every box once", "[loop]") {
  const auto problem = make_synthetic_problem(small_spec(), 3);
  for (Method m : {Method::MesmocPlus, Method::MesmocPlusLog, Method::Mesmoc, Method::Random}) {
    auto state = init_state(problem.spec, fast_config(m, 2, 5), synthetic_black_box(problem, 5));
    const auto before = counts(state);
    CHECK(before == std::vector<std::size_t>(3, 6));
    bo_step(state);
    const auto after = counts(state);
    for (std::size_t b = 0; b < 3; ++b) CHECK(after[b] == before[b] + 1);
    CHECK(state.iteration == 1);
    // The new rows share one input.
    const auto n = state.rows.size();
    CHECK(state.rows[n - 1].x == state.rows[n - 3].x);
    CHECK(state.rows[n - 1].iteration == 1);
  }
}

TEST_CASE("decoupled steps evaluate exactly one box", "[loop]") {
  const auto problem = make_synthetic_problem(small_spec(), 4);
  for (Method m : {Method::MesmocPlusDec, Method::MesmocDec}) {
    auto state = init_state(problem.spec, fast_config(m, 3, 6), synthetic_black_box(problem, 6));
    for (int t = 0; t < 3; ++t) {
      const auto before = counts(state);
      bo_step(state);
      const auto after = counts(state);
      std::size_t changed = 0;
      for (std::size_t b = 0; b < 3; ++b) {
        CHECK(after[b] >= before[b]);
        changed += after[b] - before[b];
      }
      CHECK(changed == 1);
    }
  }
}

TEST_CASE("random policy is seeded", "[loop]") {
  const auto problem = make_synthetic_problem(small_spec(), 5);
  auto a = init_state(problem.spec, fast_config(Method::Random, 1, 9), synthetic_black_box(problem, 9));
  auto b = init_state(problem.spec, fast_config(Method::Random, 1, 9), synthetic_black_box(problem, 9));
  auto c = init_state(problem.spec, fast_config(Method::Random, 1, 10), synthetic_black_box(problem, 10));
  bo_step(a);
  bo_step(b);
  bo_step(c);
  CHECK(a.rows.back().x == b.rows.back().x);
  CHECK(a.rows.back().x != c.rows.back().x);
}

TEST_CASE("runs are deterministic given the seed", "[loop]") {
  const auto problem = make_synthetic_problem(small_spec(), 6);
  for (Method m : {Method::MesmocPlus, Method::MesmocPlusDec}) {
    auto cfg = fast_config(m, 3, 21);
    cfg.hyper_sampling.kind = HyperSampling::Kind::Slice;
    cfg.hyper_sampling.samples = 2;
    const auto a = run_synthetic(problem, cfg);
    const auto b = run_synthetic(problem, cfg);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].x == b.rows[i].x);
      CHECK(a.rows[i].y == b.rows[i].y);
      CHECK(a.rows[i].box == b.rows[i].box);
    }
    CHECK(a.metric == b.metric);
    CHECK(a.counts == b.counts);
  }
}

TEST_CASE("budget accounting over a run", "[loop]") {
  const auto problem = make_synthetic_problem(small_spec(), 7);
  const auto coupled = run_synthetic(problem, fast_config(Method::MesmocPlus, 4, 1));
  REQUIRE_FALSE(coupled.aborted);
  CHECK(coupled.iterations_completed() == 4);
  CHECK(coupled.metric.size() == 5);
  CHECK(coupled.counts.back() == std::vector<std::size_t>(3, 10));
  CHECK(coupled.rows.size() == 30);

  const auto dec = run_synthetic(problem, fast_config(Method::MesmocPlusDec, 4, 1));
  REQUIRE_FALSE(dec.aborted);
  std::size_t total = 0;
  for (auto c : dec.counts.back()) total += c;
  CHECK(total == 18 + 4);
  for (std::size_t t = 1; t < dec.counts.size(); ++t) {
    std::size_t prev = 0, cur = 0;
    for (auto c : dec.counts[t - 1]) prev += c;
    for (auto c : dec.counts[t]) cur += c;
    CHECK(cur == prev + 1);
  }
  for (double v : dec.metric) CHECK(std::isfinite(v));
}

TEST_CASE("a failing black-box aborts with a partial trace", "[loop]") {
  const auto problem = make_synthetic_problem(small_spec(), 8);
  std::atomic<int> calls{0};
  auto inner = synthetic_black_box(problem, 2);
  BlackBox bb = [&](const BlackBoxId& id, const Vector& x) {
    if (++calls > 18 + 3 * 2) throw std::runtime_error("device offline");
    return inner(id, x);
  };
  const auto trace = run_bo(problem.spec, fast_config(Method::MesmocPlus, 5, 2), bb);
  CHECK(trace.aborted);
  CHECK(trace.abort_reason.find("device offline") != std::string::npos);
  CHECK(trace.iterations_completed() == 2);
  CHECK(trace.rows.size() == 24);

  BlackBox nan_box = [](const BlackBoxId&, const Vector&) { return std::numeric_limits<double>::quiet_NaN(); };
  const auto bad = run_bo(problem.spec, fast_config(Method::Random, 2, 2), nan_box);
  CHECK(bad.aborted);
  CHECK(bad.iterations_completed() == 0);
}

TEST_CASE("recommendations", "[loop]") {
  SECTION("unconstrained: the mean Pareto set of grid and observations") {
    const auto problem = make_synthetic_problem(small_spec(2, 0), 9);
    auto state = init_state(problem.spec, fast_config(Method::Random, 0, 3), synthetic_black_box(problem, 3));
    const auto rec = recommend(state.obs, state.models, 400, 77);
    REQUIRE(rec.size() > 0);
    CHECK_FALSE(rec.fallback);
    CHECK(oracle::brute_non_dominated(rec.fronts).size() == rec.size());
    // Reproduce the candidate means independently and check nothing dominates the set.
    std::mt19937_64 rng(77);
    Matrix grid = uniform_grid(400, 2, rng);
    std::vector<Vector> all;
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
      Vector f(2);
      for (int b = 0; b < 2; ++b) f[b] = state.models[b].models[0].predict_mean(grid.row(i))[0];
      all.push_back(f);
    }
    for (const auto& r : rec.fronts)
      for (const auto& a : all) CHECK_FALSE(((a.array() <= r.array()).all() && (a.array() < r.array()).any()));
    for (std::size_t i = 0; i < rec.size(); ++i) {
      Vector f(2);
      for (int b = 0; b < 2; ++b) f[b] = state.models[b].models[0].predict_mean(rec.inputs[i].transpose())[0];
      CHECK((f - rec.fronts[i]).norm() < 1e-9);
    }
  }
  SECTION("constraint means are non-negative on feasible recommendations") {
    const auto problem = make_synthetic_problem(small_spec(2, 1), 10);
    auto state = init_state(problem.spec, fast_config(Method::Random, 0, 4), synthetic_black_box(problem, 4));
    const auto rec = recommend(state);
    REQUIRE(rec.size() > 0);
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (!rec.feasible[i]) continue;
      CHECK(state.models[2].models[0].predict_mean(rec.inputs[i].transpose())[0] >= 0.0);
    }
  }
  SECTION("nothing feasible falls back to the least-violating points") {
    const auto problem = make_synthetic_problem(small_spec(2, 1), 11);
    auto inner = synthetic_black_box(problem, 5);
    BlackBox bb = [&](const BlackBoxId& id, const Vector& x) {
      return id.is_objective() ? inner(id, x) : -5.0 - x[0];
    };
    auto cfg = fast_config(Method::Random, 0, 5);
    auto state = init_state(problem.spec, cfg, bb);
    const auto rec = recommend(state);
    CHECK(rec.fallback);
    REQUIRE(rec.size() > 0);
    for (bool f : rec.feasible) CHECK_FALSE(f);
    CHECK(oracle::brute_non_dominated(rec.fronts).size() == rec.size());
  }
}

TEST_CASE("synthetic problems", "[loop]") {
  const auto p = make_synthetic_problem(small_spec(), 12);
  const auto q = make_synthetic_problem(small_spec(), 12);
  CHECK(p.hv_max > 0.0);
  CHECK(p.hv_max == q.hv_max);
  const Vector x = Vector::Constant(2, 0.37);
  CHECK(p.evaluate(BlackBoxId::objective(1), x) == q.evaluate(BlackBoxId::objective(1), x));

  auto noisy_spec = small_spec();
  noisy_spec.noise_variance = 0.01;
  const auto n = make_synthetic_problem(noisy_spec, 12);
  auto bb1 = synthetic_black_box(n, 1), bb2 = synthetic_black_box(n, 2);
  const double a = bb1(BlackBoxId::objective(0), x);
  CHECK(a == bb1(BlackBoxId::objective(0), x));
  CHECK(a != bb2(BlackBoxId::objective(0), x));
  CHECK(a != n.evaluate(BlackBoxId::objective(0), x));

  // A recommendation with the true front scores close to zero gap.
  RecommendationSet empty;
  CHECK(std::isfinite(score_recommendation(p, empty)));
}

TEST_CASE("benchmark seeds and aggregation", "[loop]") {
  std::set<std::uint64_t> seeds;
  for (std::size_t r = 0; r < 50; ++r) {
    seeds.insert(rep_problem_seed(2024, r));
    seeds.insert(rep_run_seed(2024, r));
  }
  CHECK(seeds.size() == 100);

  BenchmarkConfig cfg;
  cfg.problem = small_spec();
  cfg.reps = 2;
  cfg.methods = {Method::Random, Method::MesmocPlus};
  cfg.run = fast_config(Method::Random, 2, 13);
  std::size_t done = 0;
  const auto results = run_benchmark(cfg, {}, [&](const RepResult&) { ++done; });
  CHECK(done == 4);
  CHECK(results.size() == 4);
  const auto rows = aggregate_benchmark(cfg, results);
  CHECK(rows.size() == 4);
  for (const auto& row : rows) {
    std::vector<double> v;
    for (const auto& r : results)
      if (r.method == row.method) v.push_back(r.metric[row.iteration]);
    const double mean = 0.5 * (v[0] + v[1]);
    CHECK(row.mean == Catch::Approx(mean));
    CHECK(row.stderr_ == Catch::Approx(std::abs(v[0] - v[1]) / 2.0).margin(1e-15));
    CHECK(row.reps == 2);
  }

  // Cached pairs are not rerun.
  std::size_t reran = 0;
  auto cached = [&](Method m, std::size_t rep) -> std::optional<RepResult> {
    for (const auto& r : results)
      if (r.method == m && r.rep == rep && m == Method::Random) return r;
    return std::nullopt;
  };
  const auto again = run_benchmark(cfg, cached, [&](const RepResult&) { ++reran; });
  CHECK(reran == 2);
  for (std::size_t i = 0; i < results.size(); ++i) CHECK(again[i].metric == results[i].metric);
}
