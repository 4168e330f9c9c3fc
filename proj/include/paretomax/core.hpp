#pragma once

// Problem definition, per-box observation bookkeeping, run configuration and
// deterministic seed derivation.

#include <Eigen/Core>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace paretomax {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class BoxKind : std::uint8_t { Objective = 0, Constraint = 1 };

/// Identifies one black-box. Orders objectives before constraints, then by index.
struct BlackBoxId {
  BoxKind kind = BoxKind::Objective;
  std::size_t index = 0;

  static constexpr BlackBoxId objective(std::size_t i) { return {BoxKind::Objective, i}; }
  static constexpr BlackBoxId constraint(std::size_t i) { return {BoxKind::Constraint, i}; }

  bool is_objective() const { return kind == BoxKind::Objective; }
  auto operator<=>(const BlackBoxId&) const = default;
};

inline std::string to_string(const BlackBoxId& id) {
  return (id.is_objective() ? "objective:" : "constraint:") + std::to_string(id.index);
}

struct ProblemSpec {
  std::size_t dim = 0;
  Vector lower;
  Vector upper;
  std::size_t num_objectives = 1;
  std::size_t num_constraints = 0;
  // One entry per black-box, objectives first.
  std::vector<double> noise_variance;

  std::size_t num_boxes() const { return num_objectives + num_constraints; }

  std::size_t flat_index(const BlackBoxId& id) const {
    return id.is_objective() ? id.index : num_objectives + id.index;
  }

  BlackBoxId box_at(std::size_t flat) const {
    return flat < num_objectives ? BlackBoxId::objective(flat)
                                 : BlackBoxId::constraint(flat - num_objectives);
  }

  bool valid_box(const BlackBoxId& id) const {
    return id.is_objective() ? id.index < num_objectives : id.index < num_constraints;
  }

  double noise(const BlackBoxId& id) const { return noise_variance.at(flat_index(id)); }

  bool contains(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != dim) return false;
    for (std::size_t i = 0; i < dim; ++i) {
      if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
    }
    return true;
  }

  Vector to_unit(const Vector& x) const { return (x - lower).cwiseQuotient(upper - lower); }
  Vector from_unit(const Vector& u) const {
    return lower + u.cwiseProduct(upper - lower);
  }
};

/// Validates a problem. A scalar noise entry is broadcast to every box.
inline ProblemSpec make_problem(ProblemSpec spec) {
  if (spec.dim == 0) throw Error("problem: dim must be positive");
  if (static_cast<std::size_t>(spec.lower.size()) != spec.dim ||
      static_cast<std::size_t>(spec.upper.size()) != spec.dim)
    throw Error("problem: bounds must have length dim");
  for (std::size_t i = 0; i < spec.dim; ++i) {
    if (!(spec.lower[i] < spec.upper[i]))
      throw Error("problem: lower[" + std::to_string(i) + "] must be < upper[" +
                  std::to_string(i) + "]");
  }
  if (spec.num_objectives == 0) throw Error("problem: at least one objective required");
  if (spec.noise_variance.empty()) spec.noise_variance.assign(spec.num_boxes(), 0.0);
  if (spec.noise_variance.size() == 1 && spec.num_boxes() > 1)
    spec.noise_variance.assign(spec.num_boxes(), spec.noise_variance.front());
  if (spec.noise_variance.size() != spec.num_boxes())
    throw Error("problem: noise_variance needs one entry per black-box");
  for (double v : spec.noise_variance) {
    if (!(v >= 0.0)) throw Error("problem: noise variance must be >= 0");
  }
  return spec;
}

/// Per-box observation lists; boxes may hold different inputs and counts.
class ObservationSet {
public:
  ObservationSet() = default;
  explicit ObservationSet(const ProblemSpec& spec)
      : spec_(spec), inputs_(spec.num_boxes()), values_(spec.num_boxes()) {}

  const ProblemSpec& problem() const { return spec_; }

  void append(const BlackBoxId& box, const Vector& x, double y) {
    if (!spec_.valid_box(box)) throw Error("record: unknown black-box " + to_string(box));
    if (!spec_.contains(x)) throw Error("record: input outside bounds");
    const auto b = spec_.flat_index(box);
    inputs_[b].push_back(x);
    values_[b].push_back(y);
  }

  std::size_t count(const BlackBoxId& box) const { return values_.at(spec_.flat_index(box)).size(); }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  const std::vector<Vector>& inputs(const BlackBoxId& box) const {
    return inputs_.at(spec_.flat_index(box));
  }
  const std::vector<double>& values(const BlackBoxId& box) const {
    return values_.at(spec_.flat_index(box));
  }

  /// Inputs of one box as an n x d matrix, optionally mapped to the unit cube.
  Matrix input_matrix(const BlackBoxId& box, bool unit = false) const {
    const auto& xs = inputs(box);
    Matrix m(xs.size(), spec_.dim);
    for (std::size_t i = 0; i < xs.size(); ++i)
      m.row(i) = (unit ? spec_.to_unit(xs[i]) : xs[i]).transpose();
    return m;
  }

  Vector value_vector(const BlackBoxId& box) const {
    const auto& ys = values(box);
    return Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  }

  /// Every distinct input observed on any box.
  std::vector<Vector> distinct_inputs() const {
    std::vector<Vector> out;
    for (const auto& box : inputs_) {
      for (const auto& x : box) {
        bool seen = false;
        for (const auto& y : out) {
          if (y == x) {
            seen = true;
            break;
          }
        }
        if (!seen) out.push_back(x);
      }
    }
    return out;
  }

private:
  ProblemSpec spec_;
  std::vector<std::vector<Vector>> inputs_;
  std::vector<std::vector<double>> values_;
};

inline ObservationSet record(ObservationSet obs, const BlackBoxId& box, const Vector& x, double y) {
  obs.append(box, x, y);
  return obs;
}

enum class Method { MesmocPlus, MesmocPlusDec, MesmocPlusLog, Mesmoc, MesmocDec, Random };

inline constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::MesmocPlus: return "MesmocPlus";
    case Method::MesmocPlusDec: return "MesmocPlusDec";
    case Method::MesmocPlusLog: return "MesmocPlusLog";
    case Method::Mesmoc: return "Mesmoc";
    case Method::MesmocDec: return "MesmocDec";
    case Method::Random: return "Random";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::MesmocPlus, Method::MesmocPlusDec, Method::MesmocPlusLog,
                   Method::Mesmoc, Method::MesmocDec, Method::Random}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

inline bool is_decoupled(Method m) { return m == Method::MesmocPlusDec || m == Method::MesmocDec; }

/// Kernel hyperparameters shared by every box when hyper sampling is disabled.
struct FixedHypers {
  double amplitude = 1.0;
  std::vector<double> lengthscales;  // unit-cube scale; a single entry is broadcast
  double noise_variance = 1e-6;
};

struct HyperSampling {
  enum class Kind { Slice, Fixed };
  Kind kind = Kind::Slice;
  std::size_t samples = 10;
  FixedHypers fixed;
};

struct RunConfig {
  Method method = Method::MesmocPlus;
  std::size_t iterations = 20;
  std::uint64_t seed = 0;
  std::size_t num_front_samples = 10;
  std::size_t front_size = 50;
  std::size_t rff_features = 500;
  std::size_t acq_grid_size = 1000;
  std::size_t front_grid_size = 1000;
  std::size_t recommend_grid_size = 5000;
  HyperSampling hyper_sampling;
  std::size_t initial_design_size = 0;  // 0 resolves to 2(d+1)
};

inline RunConfig resolve(RunConfig cfg, const ProblemSpec& spec) {
  if (cfg.initial_design_size == 0) cfg.initial_design_size = 2 * (spec.dim + 1);
  auto& ls = cfg.hyper_sampling.fixed.lengthscales;
  if (ls.empty()) ls.assign(spec.dim, 1.0);
  if (ls.size() == 1 && spec.dim > 1) ls.assign(spec.dim, ls.front());
  if (cfg.num_front_samples == 0 || cfg.front_size == 0 || cfg.rff_features == 0 ||
      cfg.acq_grid_size == 0 || cfg.front_grid_size == 0 || cfg.recommend_grid_size == 0 ||
      cfg.hyper_sampling.samples == 0)
    throw Error("run: all counts must be positive");
  if (ls.size() != spec.dim) throw Error("run: fixed lengthscales need one entry per dimension");
  return cfg;
}

// ---------------------------------------------------------------------------
// Seed derivation. A master seed is split into independent per-purpose streams
// by chaining splitmix64 over (master, stream tag, indices...).

enum class Stream : std::uint64_t {
  InitialDesign = 1,
  Hypers = 2,
  Rff = 3,
  AdfOrder = 4,
  AcqGrid = 5,
  FrontGrid = 6,
  Noise = 7,
  RandomPolicy = 8,
  Recommend = 9,
  Problem = 10,
  Benchmark = 11,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                           std::uint64_t a = 0, std::uint64_t b = 0,
                                           std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0xD1B54A32D192ED03ULL));
  h = splitmix64(h ^ (c * 0x8CB92BA72F3D8DD7ULL));
  return h;
}

}  // namespace paretomax
