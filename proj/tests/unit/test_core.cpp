#include <catch_amalgamated.hpp>

#include "paretomax/core.hpp"
#include "paretomax/parallel.hpp"

using namespace paretomax;

namespace {

ProblemSpec unit_square(std::size_t k = 2, std::size_t c = 1) {
  ProblemSpec s;
  s.dim = 2;
  s.lower = Vector::Zero(2);
  s.upper = Vector::Ones(2);
  s.num_objectives = k;
  s.num_constraints = c;
  s.noise_variance = {0.0};
  return make_problem(s);
}

}  // namespace

TEST_CASE("make_problem validates bounds and noise", "[core]") {
  const auto spec = unit_square();
  CHECK(spec.num_boxes() == 3);
  CHECK(spec.noise_variance.size() == 3);

  ProblemSpec inverted;
  inverted.dim = 1;
  inverted.lower = Vector::Ones(1);
  inverted.upper = Vector::Zero(1);
  CHECK_THROWS_AS(make_problem(inverted), Error);

  ProblemSpec negative = unit_square();
  negative.noise_variance = {-0.1};
  CHECK_THROWS_AS(make_problem(negative), Error);
}

TEST_CASE("record appends to one box only", "[core]") {
  const auto spec = unit_square();
  ObservationSet obs(spec);
  const Vector x = Vector::Constant(2, 0.5);
  auto next = record(obs, BlackBoxId::objective(0), x, 1.0);
  CHECK(next.count(BlackBoxId::objective(0)) == 1);
  CHECK(next.count(BlackBoxId::constraint(0)) == 0);
  CHECK(obs.count(BlackBoxId::objective(0)) == 0);

  next = record(next, BlackBoxId::objective(0), x, 1.0);
  CHECK(next.count(BlackBoxId::objective(0)) == 2);

  CHECK_THROWS_AS(record(next, BlackBoxId::objective(0), Vector::Constant(2, 1.5), 0.0), Error);
  CHECK_THROWS_AS(record(next, BlackBoxId::constraint(3), x, 0.0), Error);
}

TEST_CASE("black-box ids order objectives first", "[core]") {
  CHECK(BlackBoxId::objective(1) < BlackBoxId::constraint(0));
  CHECK(BlackBoxId::objective(0) < BlackBoxId::objective(1));
  CHECK(to_string(BlackBoxId::constraint(2)) == "constraint:2");
  const auto spec = unit_square(2, 2);
  for (std::size_t b = 0; b < spec.num_boxes(); ++b) CHECK(spec.flat_index(spec.box_at(b)) == b);
}

TEST_CASE("run config resolution", "[core]") {
  const auto spec = unit_square();
  const auto cfg = resolve(RunConfig{}, spec);
  CHECK(cfg.initial_design_size == 6);
  CHECK(cfg.num_front_samples == 10);
  CHECK(cfg.front_size == 50);
  CHECK(cfg.rff_features == 500);
  CHECK(cfg.acq_grid_size == 1000);
  CHECK(cfg.hyper_sampling.samples == 10);
  RunConfig bad;
  bad.front_size = 0;
  CHECK_THROWS_AS(resolve(bad, spec), Error);
  for (Method m : {Method::MesmocPlus, Method::MesmocPlusDec, Method::MesmocPlusLog, Method::Mesmoc,
                   Method::MesmocDec, Method::Random})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_FALSE(parse_method("Bogus").has_value());
}

TEST_CASE("seed streams are distinct and stable", "[core]") {
  CHECK(derive_seed(1, Stream::Rff, 0) == derive_seed(1, Stream::Rff, 0));
  CHECK(derive_seed(1, Stream::Rff, 0) != derive_seed(1, Stream::Rff, 1));
  CHECK(derive_seed(1, Stream::Rff, 0) != derive_seed(1, Stream::Hypers, 0));
  CHECK(derive_seed(1, Stream::Rff, 0) != derive_seed(2, Stream::Rff, 0));
  CHECK(derive_seed(1, Stream::Rff, 0, 1) != derive_seed(1, Stream::Rff, 1, 0));
}

TEST_CASE("parallel_for covers every index and propagates errors", "[core]") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; }, 4);
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS(parallel_for(10, [](std::size_t i) { if (i == 7) throw Error("boom"); }, 3));
}
