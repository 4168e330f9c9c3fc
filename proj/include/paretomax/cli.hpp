#pragma once

// Batch front-end: JSON configs with line-precise schema errors, reproducible
// CSV/JSON writers, and the run / bench / acq-map commands.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "paretomax/acquisition.hpp"
#include "paretomax/core.hpp"
#include "paretomax/loop.hpp"

namespace paretomax::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kConfigError = 2, kRunAborted = 3 };

class ConfigError : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Formatting.

/// 17 significant digits, enough for a bit-faithful round trip.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

/// Writes through a temporary file and renames it into place.
inline void atomic_write(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string box_column(const BlackBoxId& id) {
  return (id.is_objective() ? "obj" : "con") + std::to_string(id.index);
}

// ---------------------------------------------------------------------------
// Key locations: JSON pointer -> 1-based line of the key (or array element).

inline std::map<std::string, std::size_t> locate_keys(std::string_view text) {
  struct Frame {
    bool object;
    std::string path;
    std::string key;
    std::size_t index = 0;
    bool expect_key = true;
  };
  std::map<std::string, std::size_t> lines;
  std::vector<Frame> stack;
  std::size_t line = 1;
  auto value_start = [&]() {
    if (stack.empty()) return;
    Frame& f = stack.back();
    if (!f.object) lines.emplace(f.path + "/" + std::to_string(f.index), line);
  };
  auto child_path = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.path + "/" + (f.object ? f.key : std::to_string(f.index));
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
    } else if (ch == '"') {
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        if (text[i] == '\n') ++line;
        s.push_back(text[i]);
      }
      if (!stack.empty() && stack.back().object && stack.back().expect_key) {
        stack.back().key = s;
        stack.back().expect_key = false;
        lines.emplace(stack.back().path + "/" + s, line);
      } else {
        value_start();
      }
    } else if (ch == '{' || ch == '[') {
      value_start();
      std::string p = child_path();
      stack.push_back({ch == '{', p, "", 0, true});
    } else if (ch == '}' || ch == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (ch == ',') {
      if (!stack.empty()) {
        if (stack.back().object) stack.back().expect_key = true;
        else ++stack.back().index;
      }
    } else if (!std::isspace(static_cast<unsigned char>(ch)) && ch != ':') {
      value_start();
      while (i + 1 < text.size() && !std::strchr(",}]\n \t\r", text[i + 1])) ++i;
    }
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Config model.

struct FixtureObservation {
  Vector x;
  std::vector<double> values;  // K + C, objectives first
};

struct ProblemConfig {
  std::string kind = "synthetic";  // synthetic | fixture
  SyntheticSpec synthetic;
  std::uint64_t instance_seed = 0;
  ProblemSpec fixture;
};

struct BenchBlock {
  std::size_t reps = 1;
  std::vector<Method> methods{Method::MesmocPlus, Method::Mesmoc, Method::Random};
};

struct AcqMapBlock {
  std::size_t grid = 100;
  bool per_box = true;
  bool exact = true;
  QuadSpec quad;
  std::vector<FixtureObservation> observations;
};

struct ConfigFile {
  std::string name = "run";
  ProblemConfig problem;
  RunConfig run;
  BenchBlock bench;
  AcqMapBlock acq_map;
};

inline ProblemSpec problem_spec(const ProblemConfig& p) {
  if (p.kind == "fixture") return make_problem(p.fixture);
  ProblemSpec s;
  s.dim = p.synthetic.dim;
  s.lower = Vector::Zero(static_cast<Eigen::Index>(s.dim));
  s.upper = Vector::Ones(static_cast<Eigen::Index>(s.dim));
  s.num_objectives = p.synthetic.num_objectives;
  s.num_constraints = p.synthetic.num_constraints;
  s.noise_variance.assign(s.num_boxes(), p.synthetic.noise_variance);
  return make_problem(s);
}

// ---------------------------------------------------------------------------
// Reading.

class ConfigReader {
public:
  ConfigReader(std::string file, std::map<std::string, std::size_t> lines)
      : file_(std::move(file)), lines_(std::move(lines)) {}

  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    std::string where = file_;
    std::string p = ptr;
    while (true) {
      auto it = lines_.find(p);
      if (it != lines_.end()) {
        where += ":" + std::to_string(it->second);
        break;
      }
      const auto slash = p.rfind('/');
      if (slash == std::string::npos || p.empty()) break;
      p = p.substr(0, slash);
    }
    throw ConfigError(where + ": " + (ptr.empty() ? "/" : ptr) + ": " + msg);
  }

  void object(const json& j, const std::string& ptr, std::initializer_list<std::string_view> allowed) const {
    if (!j.is_object()) fail(ptr, "expected an object");
    for (const auto& [key, _] : j.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || a == key;
      if (!ok) fail(ptr + "/" + key, "unknown key '" + key + "'");
    }
  }

  double real(const json& j, const std::string& ptr) const {
    if (!j.is_number()) fail(ptr, "expected a number");
    return j.get<double>();
  }

  std::size_t count(const json& j, const std::string& ptr, bool allow_zero = false) const {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
      fail(ptr, "expected a non-negative integer");
    const auto v = j.get<std::uint64_t>();
    if (v == 0 && !allow_zero) fail(ptr, "must be positive");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t seed(const json& j, const std::string& ptr) const {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
      fail(ptr, "expected a non-negative integer seed");
    return j.get<std::uint64_t>();
  }

  bool boolean(const json& j, const std::string& ptr) const {
    if (!j.is_boolean()) fail(ptr, "expected true or false");
    return j.get<bool>();
  }

  std::string string(const json& j, const std::string& ptr) const {
    if (!j.is_string()) fail(ptr, "expected a string");
    return j.get<std::string>();
  }

  std::vector<double> reals(const json& j, const std::string& ptr) const {
    if (j.is_number()) return {j.get<double>()};
    if (!j.is_array()) fail(ptr, "expected a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(real(j[i], ptr + "/" + std::to_string(i)));
    return out;
  }

  Vector vector(const json& j, const std::string& ptr) const {
    const auto v = reals(j, ptr);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  Method method(const json& j, const std::string& ptr) const {
    const auto name = string(j, ptr);
    if (auto m = parse_method(name)) return *m;
    fail(ptr, "unknown method '" + name +
                  "' (expected MesmocPlus, MesmocPlusDec, MesmocPlusLog, Mesmoc, MesmocDec or Random)");
  }

private:
  std::string file_;
  std::map<std::string, std::size_t> lines_;
};

inline void read_problem(const ConfigReader& r, const json& j, ProblemConfig& p) {
  const std::string ptr = "/problem";
  if (!j.is_object()) r.fail(ptr, "expected an object");
  if (j.contains("kind")) p.kind = r.string(j["kind"], ptr + "/kind");
  if (p.kind == "synthetic") {
    r.object(j, ptr, {"kind", "dim", "num_objectives", "num_constraints", "noise_variance", "amplitude",
                      "lengthscale", "features", "hv_grid", "instance_seed"});
    auto& s = p.synthetic;
    if (j.contains("dim")) s.dim = r.count(j["dim"], ptr + "/dim");
    if (j.contains("num_objectives")) s.num_objectives = r.count(j["num_objectives"], ptr + "/num_objectives");
    if (j.contains("num_constraints"))
      s.num_constraints = r.count(j["num_constraints"], ptr + "/num_constraints", true);
    if (j.contains("noise_variance")) {
      s.noise_variance = r.real(j["noise_variance"], ptr + "/noise_variance");
      if (!(s.noise_variance >= 0.0)) r.fail(ptr + "/noise_variance", "must be >= 0");
    }
    if (j.contains("amplitude")) s.amplitude = r.real(j["amplitude"], ptr + "/amplitude");
    if (j.contains("lengthscale")) s.lengthscale = r.real(j["lengthscale"], ptr + "/lengthscale");
    if (!(s.amplitude > 0.0)) r.fail(ptr + "/amplitude", "must be > 0");
    if (!(s.lengthscale > 0.0)) r.fail(ptr + "/lengthscale", "must be > 0");
    if (j.contains("features")) s.features = r.count(j["features"], ptr + "/features");
    if (j.contains("hv_grid")) s.hv_grid = r.count(j["hv_grid"], ptr + "/hv_grid");
    if (j.contains("instance_seed")) p.instance_seed = r.seed(j["instance_seed"], ptr + "/instance_seed");
  } else if (p.kind == "fixture") {
    r.object(j, ptr, {"kind", "dim", "lower", "upper", "num_objectives", "num_constraints", "noise_variance"});
    auto& f = p.fixture;
    f.dim = j.contains("dim") ? r.count(j["dim"], ptr + "/dim") : 1;
    f.lower = j.contains("lower") ? r.vector(j["lower"], ptr + "/lower") : Vector::Zero(static_cast<Eigen::Index>(f.dim));
    f.upper = j.contains("upper") ? r.vector(j["upper"], ptr + "/upper") : Vector::Ones(static_cast<Eigen::Index>(f.dim));
    if (j.contains("num_objectives")) f.num_objectives = r.count(j["num_objectives"], ptr + "/num_objectives");
    if (j.contains("num_constraints"))
      f.num_constraints = r.count(j["num_constraints"], ptr + "/num_constraints", true);
    if (j.contains("noise_variance")) f.noise_variance = r.reals(j["noise_variance"], ptr + "/noise_variance");
  } else {
    r.fail(ptr + "/kind", "unknown problem kind '" + p.kind + "' (expected synthetic or fixture)");
  }
  try {
    problem_spec(p);
  } catch (const Error& e) {
    r.fail(ptr, e.what());
  }
}

inline void read_run(const ConfigReader& r, const json& j, RunConfig& c) {
  const std::string ptr = "/run";
  r.object(j, ptr, {"method", "iterations", "seed", "num_front_samples", "front_size", "rff_features",
                    "acq_grid_size", "front_grid_size", "recommend_grid_size", "hyper_sampling",
                    "initial_design_size"});
  if (j.contains("method")) c.method = r.method(j["method"], ptr + "/method");
  if (j.contains("iterations")) c.iterations = r.count(j["iterations"], ptr + "/iterations", true);
  if (j.contains("seed")) c.seed = r.seed(j["seed"], ptr + "/seed");
  if (j.contains("num_front_samples")) c.num_front_samples = r.count(j["num_front_samples"], ptr + "/num_front_samples");
  if (j.contains("front_size")) c.front_size = r.count(j["front_size"], ptr + "/front_size");
  if (j.contains("rff_features")) c.rff_features = r.count(j["rff_features"], ptr + "/rff_features");
  if (j.contains("acq_grid_size")) c.acq_grid_size = r.count(j["acq_grid_size"], ptr + "/acq_grid_size");
  if (j.contains("front_grid_size")) c.front_grid_size = r.count(j["front_grid_size"], ptr + "/front_grid_size");
  if (j.contains("recommend_grid_size"))
    c.recommend_grid_size = r.count(j["recommend_grid_size"], ptr + "/recommend_grid_size");
  if (j.contains("initial_design_size"))
    c.initial_design_size = r.count(j["initial_design_size"], ptr + "/initial_design_size");
  if (j.contains("hyper_sampling")) {
    const std::string hp = ptr + "/hyper_sampling";
    const json& h = j["hyper_sampling"];
    if (!h.is_object()) r.fail(hp, "expected an object");
    const std::string kind = h.contains("kind") ? r.string(h["kind"], hp + "/kind") : "slice";
    if (kind == "slice") {
      r.object(h, hp, {"kind", "samples"});
      c.hyper_sampling.kind = HyperSampling::Kind::Slice;
      if (h.contains("samples")) c.hyper_sampling.samples = r.count(h["samples"], hp + "/samples");
    } else if (kind == "fixed") {
      r.object(h, hp, {"kind", "amplitude", "lengthscales", "noise_variance"});
      c.hyper_sampling.kind = HyperSampling::Kind::Fixed;
      auto& f = c.hyper_sampling.fixed;
      if (h.contains("amplitude")) f.amplitude = r.real(h["amplitude"], hp + "/amplitude");
      if (h.contains("lengthscales")) f.lengthscales = r.reals(h["lengthscales"], hp + "/lengthscales");
      if (h.contains("noise_variance")) f.noise_variance = r.real(h["noise_variance"], hp + "/noise_variance");
      if (!(f.amplitude > 0.0)) r.fail(hp + "/amplitude", "must be > 0");
      for (double l : f.lengthscales)
        if (!(l > 0.0)) r.fail(hp + "/lengthscales", "must be > 0");
      if (!(f.noise_variance >= 0.0)) r.fail(hp + "/noise_variance", "must be >= 0");
    } else {
      r.fail(hp + "/kind", "unknown hyper sampling kind '" + kind + "' (expected slice or fixed)");
    }
  }
}

inline void read_bench(const ConfigReader& r, const json& j, BenchBlock& b) {
  const std::string ptr = "/benchmark";
  r.object(j, ptr, {"reps", "methods"});
  if (j.contains("reps")) b.reps = r.count(j["reps"], ptr + "/reps");
  if (j.contains("methods")) {
    const json& m = j["methods"];
    if (!m.is_array() || m.empty()) r.fail(ptr + "/methods", "expected a non-empty array of method names");
    b.methods.clear();
    for (std::size_t i = 0; i < m.size(); ++i) b.methods.push_back(r.method(m[i], ptr + "/methods/" + std::to_string(i)));
  }
}

inline void read_acq_map(const ConfigReader& r, const json& j, AcqMapBlock& a, const ProblemSpec& spec) {
  const std::string ptr = "/acq_map";
  r.object(j, ptr, {"grid", "per_box", "exact", "quad_points", "quad_width", "observations"});
  if (j.contains("grid")) a.grid = r.count(j["grid"], ptr + "/grid");
  if (j.contains("per_box")) a.per_box = r.boolean(j["per_box"], ptr + "/per_box");
  if (j.contains("exact")) a.exact = r.boolean(j["exact"], ptr + "/exact");
  if (j.contains("quad_points")) a.quad.points = r.count(j["quad_points"], ptr + "/quad_points");
  if (j.contains("quad_width")) a.quad.width = r.real(j["quad_width"], ptr + "/quad_width");
  if (j.contains("observations")) {
    const json& obs = j["observations"];
    if (!obs.is_array()) r.fail(ptr + "/observations", "expected an array");
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const std::string op = ptr + "/observations/" + std::to_string(i);
      r.object(obs[i], op, {"x", "objectives", "constraints"});
      if (!obs[i].contains("x") || !obs[i].contains("objectives"))
        r.fail(op, "needs 'x' and 'objectives'");
      FixtureObservation o;
      o.x = r.vector(obs[i]["x"], op + "/x");
      o.values = r.reals(obs[i]["objectives"], op + "/objectives");
      if (o.values.size() != spec.num_objectives) r.fail(op + "/objectives", "needs one value per objective");
      const auto cons = obs[i].contains("constraints") ? r.reals(obs[i]["constraints"], op + "/constraints")
                                                       : std::vector<double>{};
      if (cons.size() != spec.num_constraints) r.fail(op + "/constraints", "needs one value per constraint");
      o.values.insert(o.values.end(), cons.begin(), cons.end());
      if (!spec.contains(o.x)) r.fail(op + "/x", "input outside the problem bounds");
      a.observations.push_back(std::move(o));
    }
  }
}

/// Parses a config document. A meta.json written by a previous run is also
/// accepted: its "config" member is used.
inline ConfigFile parse_config(std::string_view text, const std::string& file = "<config>") {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw ConfigError(file + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  auto lines = locate_keys(text);
  if (doc.is_object() && doc.contains("config") && doc["config"].is_object()) {
    doc = json(doc["config"]);
    std::map<std::string, std::size_t> inner;
    for (const auto& [k, v] : lines)
      if (k.rfind("/config", 0) == 0) inner.emplace(k.substr(7), v);
    lines = std::move(inner);
  }
  const ConfigReader r(file, lines);
  r.object(doc, "", {"name", "problem", "run", "benchmark", "acq_map"});
  ConfigFile cfg;
  if (doc.contains("name")) {
    cfg.name = r.string(doc["name"], "/name");
    if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos || cfg.name == "." || cfg.name == "..")
      r.fail("/name", "must be a plain directory name");
  }
  if (doc.contains("problem")) read_problem(r, doc["problem"], cfg.problem);
  if (doc.contains("run")) read_run(r, doc["run"], cfg.run);
  if (doc.contains("benchmark")) read_bench(r, doc["benchmark"], cfg.bench);
  const ProblemSpec spec = problem_spec(cfg.problem);
  if (doc.contains("acq_map")) read_acq_map(r, doc["acq_map"], cfg.acq_map, spec);
  try {
    cfg.run = resolve(cfg.run, spec);
  } catch (const Error& e) {
    r.fail("/run", e.what());
  }
  return cfg;
}

inline ConfigFile load_config(const fs::path& path) {
  return parse_config(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Writing.

inline json reals_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

/// Fully resolved config in the input schema.
inline json config_json(const ConfigFile& c) {
  json j;
  j["name"] = c.name;
  json p;
  p["kind"] = c.problem.kind;
  if (c.problem.kind == "synthetic") {
    const auto& s = c.problem.synthetic;
    p["dim"] = s.dim;
    p["num_objectives"] = s.num_objectives;
    p["num_constraints"] = s.num_constraints;
    p["noise_variance"] = s.noise_variance;
    p["amplitude"] = s.amplitude;
    p["lengthscale"] = s.lengthscale;
    p["features"] = s.features;
    p["hv_grid"] = s.hv_grid;
    p["instance_seed"] = c.problem.instance_seed;
  } else {
    const auto spec = problem_spec(c.problem);
    p["dim"] = spec.dim;
    p["lower"] = reals_json(spec.lower);
    p["upper"] = reals_json(spec.upper);
    p["num_objectives"] = spec.num_objectives;
    p["num_constraints"] = spec.num_constraints;
    p["noise_variance"] = spec.noise_variance;
  }
  j["problem"] = p;
  const RunConfig& r = c.run;
  json run;
  run["method"] = std::string(method_name(r.method));
  run["iterations"] = r.iterations;
  run["seed"] = r.seed;
  run["num_front_samples"] = r.num_front_samples;
  run["front_size"] = r.front_size;
  run["rff_features"] = r.rff_features;
  run["acq_grid_size"] = r.acq_grid_size;
  run["front_grid_size"] = r.front_grid_size;
  run["recommend_grid_size"] = r.recommend_grid_size;
  run["initial_design_size"] = r.initial_design_size;
  json hs;
  if (r.hyper_sampling.kind == HyperSampling::Kind::Slice) {
    hs["kind"] = "slice";
    hs["samples"] = r.hyper_sampling.samples;
  } else {
    hs["kind"] = "fixed";
    hs["amplitude"] = r.hyper_sampling.fixed.amplitude;
    hs["lengthscales"] = r.hyper_sampling.fixed.lengthscales;
    hs["noise_variance"] = r.hyper_sampling.fixed.noise_variance;
  }
  run["hyper_sampling"] = hs;
  j["run"] = run;
  json b;
  b["reps"] = c.bench.reps;
  b["methods"] = json::array();
  for (Method m : c.bench.methods) b["methods"].push_back(std::string(method_name(m)));
  j["benchmark"] = b;
  json a;
  a["grid"] = c.acq_map.grid;
  a["per_box"] = c.acq_map.per_box;
  a["exact"] = c.acq_map.exact;
  a["quad_points"] = c.acq_map.quad.points;
  a["quad_width"] = c.acq_map.quad.width;
  a["observations"] = json::array();
  const auto spec = problem_spec(c.problem);
  for (const auto& o : c.acq_map.observations) {
    json e;
    e["x"] = reals_json(o.x);
    e["objectives"] = std::vector<double>(o.values.begin(), o.values.begin() + static_cast<long>(spec.num_objectives));
    e["constraints"] = std::vector<double>(o.values.begin() + static_cast<long>(spec.num_objectives), o.values.end());
    a["observations"].push_back(e);
  }
  j["acq_map"] = a;
  return j;
}

inline json meta_json(const ConfigFile& c, std::string_view command) {
  json m;
  m["command"] = std::string(command);
  m["version"] = std::string(kVersion);
  m["config"] = config_json(c);
  return m;
}

class CsvWriter {
public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

private:
  std::ostringstream out_;
};

inline std::string trace_csv(const RunTrace& trace) {
  std::vector<std::string> header{"iteration", "box"};
  for (std::size_t i = 0; i < trace.problem.dim; ++i) header.push_back("x" + std::to_string(i));
  header.push_back("y");
  header.push_back("metric");
  CsvWriter w(header);
  for (const auto& r : trace.rows) {
    std::vector<std::string> cells{std::to_string(r.iteration), box_column(r.box)};
    for (Eigen::Index i = 0; i < r.x.size(); ++i) cells.push_back(format_real(r.x[i]));
    cells.push_back(format_real(r.y));
    const double metric = r.iteration < trace.metric.size() ? trace.metric[r.iteration]
                                                            : std::numeric_limits<double>::quiet_NaN();
    cells.push_back(format_real(metric));
    w.row(cells);
  }
  return w.str();
}

/// Cumulative evaluations per black-box after each iteration.
inline std::string evalcounts_csv(const RunTrace& trace) {
  std::vector<std::string> header{"iteration"};
  for (std::size_t b = 0; b < trace.problem.num_boxes(); ++b) header.push_back(box_column(trace.problem.box_at(b)));
  header.push_back("total");
  CsvWriter w(header);
  for (std::size_t t = 0; t < trace.counts.size(); ++t) {
    std::vector<std::string> cells{std::to_string(t)};
    std::size_t total = 0;
    for (auto c : trace.counts[t]) {
      cells.push_back(std::to_string(c));
      total += c;
    }
    cells.push_back(std::to_string(total));
    w.row(cells);
  }
  return w.str();
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  CsvWriter w({"method", "iteration", "mean_metric", "stderr", "reps"});
  for (const auto& r : rows)
    w.row({std::string(method_name(r.method)), std::to_string(r.iteration), format_real(r.mean),
           format_real(r.stderr_), std::to_string(r.reps)});
  return w.str();
}

// ---------------------------------------------------------------------------
// Acquisition maps.

struct AcqMap {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t masked_points = 0;
  std::size_t degenerate_points = 0;
};

/// Observation set and models of an acq-map fixture.
inline ObservationSet fixture_observations(const ConfigFile& c) {
  ObservationSet obs(problem_spec(c.problem));
  for (const auto& o : c.acq_map.observations)
    for (std::size_t b = 0; b < o.values.size(); ++b) obs.append(obs.problem().box_at(b), o.x, o.values[b]);
  return obs;
}

inline AcquisitionSet fixture_acquisition_set(const ConfigFile& c) {
  const ObservationSet obs = fixture_observations(c);
  for (std::size_t b = 0; b < obs.problem().num_boxes(); ++b)
    if (obs.count(obs.problem().box_at(b)) == 0) throw ConfigError("acq_map: every black-box needs an observation");
  const auto models = fit_models(obs, c.run, derive_seed(c.run.seed, Stream::Hypers, 0));
  return build_acquisition_set(obs, models, c.run, derive_seed(c.run.seed, Stream::Rff, 0));
}

/// Acquisition values along the first input dimension (other coordinates at
/// the box centre). The MESMOC column is the unmasked sum of MES terms.
inline AcqMap compute_acq_map(const ConfigFile& c) {
  const ProblemSpec spec = problem_spec(c.problem);
  if (c.acq_map.exact && spec.num_boxes() > 3)
    throw ConfigError("acq_map: the exact column needs num_objectives + num_constraints <= 3");
  const AcquisitionSet set = fixture_acquisition_set(c);
  const std::size_t n = c.acq_map.grid;
  Matrix xs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.dim));
  for (std::size_t i = 0; i < n; ++i) {
    Vector u = Vector::Constant(static_cast<Eigen::Index>(spec.dim), 0.5);
    u[0] = n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1);
    xs.row(static_cast<Eigen::Index>(i)) = u.transpose();
  }
  const auto ent = entropy_reduction_batch(xs, set);
  const auto mes = mes_breakdown_batch(xs, set);
  const auto admitted = feasibility_mask_batch(xs, set);
  std::vector<ExactResult> exact(n);
  if (c.acq_map.exact)
    parallel_for(n, [&](std::size_t i) { exact[i] = exact_acquisition(xs.row(static_cast<Eigen::Index>(i)).transpose(), set, c.acq_map.quad); });

  AcqMap map;
  map.header = {"x", "mesmoc_plus", "mesmoc_plus_log", "mesmoc"};
  if (c.acq_map.exact) map.header.push_back("exact");
  if (c.acq_map.per_box) {
    for (std::size_t b = 0; b < spec.num_boxes(); ++b) {
      const std::string s = box_column(spec.box_at(b));
      map.header.push_back("mesmoc_plus_" + s);
      map.header.push_back("mesmoc_plus_log_" + s);
      map.header.push_back("mesmoc_" + s);
      if (c.acq_map.exact) map.header.push_back("exact_" + s);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row{spec.from_unit(xs.row(static_cast<Eigen::Index>(i)).transpose())[0],
                            ent[i].variance.total, ent[i].log_variance.total, mes[i].total};
    if (c.acq_map.exact) row.push_back(exact[i].total);
    if (c.acq_map.per_box) {
      for (std::size_t b = 0; b < spec.num_boxes(); ++b) {
        row.push_back(ent[i].variance.component(b));
        row.push_back(ent[i].log_variance.component(b));
        row.push_back(mes[i].component(b));
        if (c.acq_map.exact) row.push_back(exact[i].per_box[static_cast<Eigen::Index>(b)]);
      }
    }
    map.masked_points += admitted[i] ? 0 : 1;
    map.degenerate_points += exact[i].degenerate ? 1 : 0;
    map.rows.push_back(std::move(row));
  }
  return map;
}

inline std::string acq_map_csv(const AcqMap& map) {
  CsvWriter w(map.header);
  for (const auto& r : map.rows) {
    std::vector<std::string> cells;
    for (double v : r) cells.push_back(format_real(v));
    w.row(cells);
  }
  return w.str();
}

// ---------------------------------------------------------------------------
// Commands.

inline SyntheticProblem synthetic_problem(const ConfigFile& c) {
  if (c.problem.kind != "synthetic") throw ConfigError("this command needs a synthetic problem");
  return make_synthetic_problem(c.problem.synthetic, c.problem.instance_seed);
}

inline int cmd_run(const ConfigFile& c, const fs::path& out_root) {
  const fs::path dir = out_root / c.name;
  const SyntheticProblem problem = synthetic_problem(c);
  const RunTrace trace = run_synthetic(problem, c.run);
  json meta = meta_json(c, "run");
  meta["problem_instance"] = {{"attempts", problem.attempts},
                              {"hv_max", problem.hv_max},
                              {"reference", reals_json(problem.reference)}};
  meta["iterations_completed"] = trace.iterations_completed();
  meta["aborted"] = trace.aborted;
  if (trace.aborted) meta["abort_reason"] = trace.abort_reason;
  meta["wall_seconds"] = trace.wall_seconds;
  atomic_write(dir / "trace.csv", trace_csv(trace));
  atomic_write(dir / "evalcounts.csv", evalcounts_csv(trace));
  atomic_write(dir / "meta.json", meta.dump(2) + "\n");
  spdlog::info("wrote {}", (dir / "trace.csv").string());
  return trace.aborted ? kRunAborted : kOk;
}

namespace detail {

inline fs::path rep_path(const fs::path& dir, Method m, std::size_t rep) {
  return dir / "reps" / (std::string(method_name(m)) + "_" + std::to_string(rep) + ".csv");
}

inline std::string rep_csv(const RepResult& r) {
  CsvWriter w({"iteration", "metric"});
  for (std::size_t t = 0; t < r.metric.size(); ++t) w.row({std::to_string(t), format_real(r.metric[t])});
  return w.str();
}

inline std::optional<RepResult> load_rep(const fs::path& path, Method m, std::size_t rep, std::size_t iterations) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line) || line != "iteration,metric") return std::nullopt;
  RepResult r{m, rep, {}, {}, false};
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) return std::nullopt;
    try {
      if (std::stoul(line.substr(0, comma)) != r.metric.size()) return std::nullopt;
      r.metric.push_back(std::stod(line.substr(comma + 1)));
    } catch (...) {
      return std::nullopt;
    }
  }
  if (r.metric.size() != iterations + 1) return std::nullopt;
  return r;
}

}  // namespace detail

/// Runs the benchmark; completed (method, rep) pairs found under
/// <out>/<name>/reps are reused.
inline int cmd_bench(const ConfigFile& c, const fs::path& out_root) {
  if (c.problem.kind != "synthetic") throw ConfigError("bench needs a synthetic problem");
  const fs::path dir = out_root / c.name;
  BenchmarkConfig bc{c.problem.synthetic, c.bench.reps, c.bench.methods, c.run};
  std::size_t reused = 0;
  std::mutex reused_mutex;
  auto cached = [&](Method m, std::size_t rep) {
    auto r = detail::load_rep(detail::rep_path(dir, m, rep), m, rep, c.run.iterations);
    if (r) {
      std::lock_guard lock(reused_mutex);
      ++reused;
    }
    return r;
  };
  auto done = [&](const RepResult& r) {
    if (!r.aborted) atomic_write(detail::rep_path(dir, r.method, r.rep), detail::rep_csv(r));
  };
  const auto results = run_benchmark(bc, cached, done);
  atomic_write(dir / "bench.csv", bench_csv(aggregate_benchmark(bc, results)));
  json meta = meta_json(c, "bench");
  meta["reused_pairs"] = reused;
  json finals = json::object();
  for (Method m : c.bench.methods) {
    json arr = json::array();
    for (const auto& r : results)
      if (r.method == m) arr.push_back(r.metric.empty() ? std::numeric_limits<double>::quiet_NaN() : r.metric.back());
    finals[std::string(method_name(m))] = arr;
  }
  meta["final_metric_per_rep"] = finals;
  atomic_write(dir / "meta.json", meta.dump(2) + "\n");
  bool aborted = false;
  for (const auto& r : results) aborted = aborted || r.aborted;
  spdlog::info("wrote {} ({} pairs reused)", (dir / "bench.csv").string(), reused);
  return aborted ? kRunAborted : kOk;
}

inline int cmd_acq_map(const ConfigFile& c, const fs::path& out_root) {
  if (c.problem.kind != "fixture") throw ConfigError("acq-map needs a fixture problem");
  const fs::path dir = out_root / c.name;
  const AcqMap map = compute_acq_map(c);
  atomic_write(dir / "acqmap.csv", acq_map_csv(map));
  json meta = meta_json(c, "acq-map");
  meta["masked_points"] = map.masked_points;
  meta["degenerate_points"] = map.degenerate_points;
  atomic_write(dir / "meta.json", meta.dump(2) + "\n");
  spdlog::info("wrote {}", (dir / "acqmap.csv").string());
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int main(int argc, char** argv) {
  CLI::App app{"Constrained multi-objective Bayesian optimization by entropy search"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  for (const char* name : {"run", "bench", "acq-map"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config (or a previous meta.json)")->required();
    sub->add_option("--out", out_dir, "output root; files go to <out>/<name>/");
    sub->add_option("--seed", seed, "overrides run.seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    ConfigFile cfg = load_config(config_path);
    if (seed) cfg.run.seed = *seed;
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "run") return cmd_run(cfg, out_dir);
    if (cmd == "bench") return cmd_bench(cfg, out_dir);
    return cmd_acq_map(cfg, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace paretomax::cli
