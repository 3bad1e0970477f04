// Copyright 2026 The collapse-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// collapse-lab: batch runner for experiment configs, plus preset listing.
//
//   collapse-lab run CONFIG [--set path=value]... [--workers N] [--output-dir DIR] [--check]
//   collapse-lab list-presets
//   collapse-lab describe PRESET
//
// Exit codes: 0 all analyses passed, 1 an analysis failed, 2 invalid config or
// arguments, 3 runtime failure.

#include <CLI11.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "collapse_lab/collapse_lab.hpp"

namespace fs = std::filesystem;
using namespace collapse_lab;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Strict object reader: every key must be consumed, errors carry the field path.
// ---------------------------------------------------------------------------

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const std::string& path() const noexcept { return path_; }
  std::string at(const std::string& key) const { return path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(at(key) + ": missing");
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key) + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(at(key) + ": expected a finite number");
    return x;
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
  std::optional<double> maybe_number(const std::string& key) {
    return has(key) ? std::optional<double>(number(key)) : std::nullopt;
  }

  double positive(const std::string& key) {
    const double x = number(key);
    if (!(x > 0.0)) throw ConfigError(at(key) + ": must be > 0");
    return x;
  }
  double positive(const std::string& key, double fallback) { return has(key) ? positive(key) : fallback; }

  double probability(const std::string& key, double fallback) {
    const double x = number(key, fallback);
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(at(key) + ": must lie in [0, 1]");
    return x;
  }

  std::uint64_t count(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(at(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) { return has(key) ? count(key) : fallback; }

  std::string text(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) { return has(key) ? text(key) : fallback; }

  std::string choice(const std::string& key, std::initializer_list<const char*> options, const std::string& fallback) {
    const auto v = text(key, fallback);
    std::string list;
    for (const char* o : options) {
      if (v == o) return v;
      list += std::string(list.empty() ? "" : ", ") + o;
    }
    throw ConfigError(at(key) + ": '" + v + "' is not one of " + list);
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(at(key) + ": expected a non-empty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  void done() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.contains(key)) throw ConfigError(at(key) + ": unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct PresetParameter {
  const char* name;
  double value;
  const char* meaning;
};

struct Preset {
  const char* name;
  const char* kind;
  const char* equation;
  std::vector<PresetParameter> parameters;
  std::vector<const char*> notes;
};

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table{
      {"pure_collapse",
       "scalar",
       "dp = sqrt(gamma) p (1 - p) dW",
       {{"gamma", 1.0, "collapse rate"}},
       {"p is the population of the +1/2 eigenstate of O = sigma_z / 2",
        "equivalent qubit model: G = gamma / 4 with O = sigma_z / 2"}},
      {"thermal",
       "scalar",
       "dp = lambda (p_eq - p) dt + sqrt(gamma) p (1 - p) dW",
       {{"lambda", 1.0, "relaxation rate"},
        {"p_eq", 0.5, "equilibrium population"},
        {"gamma", 400.0, "collapse rate"}},
       {"jump rates in the large-gamma limit: 0 -> 1 at lambda p_eq, 1 -> 0 at lambda (1 - p_eq)",
        "equivalent qubit model: channels sqrt(lambda (1 - p_eq)) sigma_-, sqrt(lambda p_eq) sigma_+, G = gamma / 4"}},
      {"coherent",
       "qubit",
       "d rho = -i [H, rho] dt + G D[O] rho dt + sqrt(G) H[O] rho dW, H = (omega / 2) sigma_y, O = sigma_z / 2",
       {{"omega", 1.0, "Rabi frequency"}, {"gamma", 1.0, "measurement rate G of the qubit equation"}},
       {"jump rate omega^2 / G in both directions for G >> omega",
        "the scalar convention rate is 4 G"}},
      {"transmon",
       "qubit",
       "d rho = -i [H, rho] dt + sum_k D[L_k] rho dt + G D[O] rho dt + sqrt(eta G) H[O] rho dW, H = omega sigma_y, O = sigma_z",
       {{"omega", 2.0 * std::numbers::pi / 5.2, "Rabi drive (rad / us)"},
        {"gamma_1", 1.0 / 765.3, "energy relaxation rate (1 / us)"},
        {"gamma_phi", 1.0 / 17.9, "extra dephasing rate (1 / us)"},
        {"gamma_d", 1.0 / 0.9, "measurement-induced dephasing rate (1 / us)"},
        {"eta_d", 0.34, "detection efficiency"}},
       {"time unit: microseconds",
        "L_1 = sqrt(gamma_1 / 2) sigma_-, L_2 = i sqrt(gamma_1 / 2) sigma_-, L_3 = sqrt(gamma_phi / 2) sigma_z",
        "G = gamma_d / 2, eta = eta_d; the alternative reading G = (gamma_d / 2)^2 is not used"}},
      {"wright_fisher",
       "scalar",
       "dp = sqrt(gamma p (1 - p)) dW",
       {{"gamma", 1.0, "diffusion rate"}},
       {"absorbed at p = 0 and p = 1 in finite time; contrast process for the collapse equation"}},
  };
  return table;
}

const Preset* find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (name == p.name) return &p;
  return nullptr;
}

json describe_preset(const Preset& p) {
  json j;
  j["name"] = p.name;
  j["kind"] = p.kind;
  j["equation"] = p.equation;
  json params = json::array();
  for (const auto& q : p.parameters) params.push_back({{"name", q.name}, {"default", q.value}, {"meaning", q.meaning}});
  j["parameters"] = std::move(params);
  j["notes"] = p.notes;
  return j;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct Model {
  std::string label;  // preset name or the inline model name
  json parameters = json::object();
  std::optional<ScalarModelSpec> scalar;
  std::optional<ModelSpec> matrix;

  bool is_scalar() const noexcept { return scalar.has_value(); }
  std::size_t dim() const { return is_scalar() ? 2 : matrix->dim(); }

  /// G (nu_max - nu_min)^2 of the measured operator; gamma / 4 for the scalar equations.
  double measurement_rate() const {
    if (is_scalar()) return scalar->gamma / 4.0;
    const auto& nu = matrix->collapse_op().eigenvalues();
    const double spread = nu.back() - nu.front();
    return matrix->collapse_rate() * spread * spread;
  }

  /// Qubit form of a scalar model; the matrix model itself otherwise.
  ModelSpec qubit() const { return is_scalar() ? to_matrix_model(*scalar) : *matrix; }

  json to_json() const {
    if (!is_scalar()) {
      json j = model_to_json(*matrix);
      if (!parameters.empty()) j["parameters"] = parameters;
      return j;
    }
    json j;
    j["preset"] = label;
    j["parameters"] = parameters;
    return j;
  }
};

Model build_preset(const Preset& preset, Section& s) {
  Model m;
  m.label = preset.name;
  std::map<std::string, double> v;
  for (const auto& q : preset.parameters) {
    v[q.name] = s.number(q.name, q.value);
    m.parameters[q.name] = v[q.name];
  }
  s.done();
  const std::string name = preset.name;
  const auto nonneg = [&](const char* key) {
    if (!(v[key] >= 0.0)) throw ConfigError(s.at(key) + ": must be >= 0");
  };
  for (const auto& q : preset.parameters)
    if (std::string(q.name) != "omega") nonneg(q.name);
  if (name == "pure_collapse") {
    m.scalar = ScalarModelSpec{0.0, 0.5, v["gamma"], ScalarVariant::pure_collapse};
  } else if (name == "thermal") {
    if (v["p_eq"] > 1.0) throw ConfigError(s.at("p_eq") + ": must lie in [0, 1]");
    m.scalar = ScalarModelSpec{v["lambda"], v["p_eq"], v["gamma"], ScalarVariant::collapse_thermal};
  } else if (name == "wright_fisher") {
    m.scalar = ScalarModelSpec{0.0, 0.5, v["gamma"], ScalarVariant::wright_fisher};
  } else if (name == "coherent") {
    m.matrix = coherent_qubit_model(v["omega"], v["gamma"]);
  } else {
    if (!(v["eta_d"] > 0.0 && v["eta_d"] <= 1.0)) throw ConfigError(s.at("eta_d") + ": must lie in (0, 1]");
    m.matrix = transmon_preset({v["omega"], v["gamma_1"], v["gamma_phi"], v["gamma_d"], v["eta_d"]});
  }
  return m;
}

Model parse_model(const json& j) {
  const std::string path = "config.model";
  if (j.is_string()) {
    const auto* p = find_preset(j.get<std::string>());
    if (!p) throw ConfigError(path + ": unknown preset '" + j.get<std::string>() + "'");
    const json empty = json::object();
    Section s(empty, path);
    return build_preset(*p, s);
  }
  if (!j.is_object()) throw ConfigError(path + ": expected a preset name or an object");
  if (j.contains("preset")) {
    Section s(j, path);
    const auto name = s.text("preset");
    const auto* p = find_preset(name);
    if (!p) throw ConfigError(s.at("preset") + ": unknown preset '" + name + "'");
    return build_preset(*p, s);
  }
  Model m;
  try {
    m.matrix = model_from_json(j);
  } catch (const Error& e) {
    throw ConfigError(std::string("config.") + e.what());
  }
  m.label = m.matrix->name();
  return m;
}

struct Initial {
  double p = 0.0;  // scalar models
  DensityMatrix rho;
  double population = 0.0;  // rho(0, 0) or p
};

Initial parse_initial(const json& j, const Model& model) {
  Section s(j, "config.initial");
  const int given = static_cast<int>(s.has("p")) + static_cast<int>(s.has("basis")) + static_cast<int>(s.has("rho"));
  if (given != 1) throw ConfigError("config.initial: give exactly one of p, basis, rho");
  Initial init;
  if (s.has("p")) {
    const double p = s.probability("p", 0.0);
    if (model.dim() != 2) throw ConfigError(s.at("p") + ": only defined for two-level models");
    init.p = p;
    const std::vector<cplx> psi{std::sqrt(p), std::sqrt(1.0 - p)};
    init.rho = DensityMatrix::pure(psi);
  } else if (s.has("basis")) {
    const auto k = s.count("basis");
    if (k >= model.dim()) throw ConfigError(s.at("basis") + ": index out of range");
    init.rho = DensityMatrix::basis(model.dim(), k);
    init.p = k == 0 ? 1.0 : 0.0;
  } else {
    if (model.is_scalar()) throw ConfigError(s.at("rho") + ": scalar models take p or basis");
    try {
      init.rho = DensityMatrix(matrix_from_json(s.raw("rho"), model.dim(), s.at("rho")));
    } catch (const Error& e) {
      throw ConfigError(std::string(s.at("rho")) + ": " + e.what());
    }
  }
  s.done();
  init.population = model.is_scalar() ? init.p : init.rho(0, 0).real();
  return init;
}

struct BornParams {
  double threshold = 0.99;
  double z_max = 3.0;
  std::optional<double> tolerance;
  std::optional<double> expected;
};

struct DecayParams {
  std::string quantity = "distance";
  std::optional<double> expected_rate;
  double tolerance = 0.05;
  double t_start = 0.0;
  double noise_factor = 10.0;
};

struct JumpsParams {
  double theta = kDefaultHysteresis;
  double tolerance = 0.10;
  double confidence = 0.95;
  std::uint64_t min_events = 10;
  bool dwell = true;
};

struct SpikesParams {
  SpikeThresholds thresholds;
  SpikeLaw law;
  std::uint64_t windows = 10;
  std::vector<double> height_edges{0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5};
  std::vector<double> survival_heights{0.05, 0.07, 0.1, 0.15, 0.2, 0.3, 0.5};
  double slope_tolerance = 0.1;
  bool write_events = true;
};

struct HmmParams {
  std::string mode = "smoothing";
  FilterParams filter;
  double horizon = 0.0;
  double dt = 0.0;
  double min_height = 0.3;
  double max_ratio = 0.1;
  bool write_path = true;
  std::uint64_t n = 1000;
  std::vector<double> checkpoints{1.0, 5.0, 20.0};
  double ks_max = 0.06;
  double alpha = 0.05;
};

struct AveragedParams {
  double z_max = 3.0;
  double dt = 0.0;
};

using AnalysisParams = std::variant<BornParams, DecayParams, JumpsParams, SpikesParams, HmmParams, AveragedParams>;

struct Analysis {
  std::string type;
  std::string name;
  AnalysisParams params;
};

struct Experiment {
  std::string label;  // sweep point label, empty without a sweep
  Model model;
  Initial initial;
  GridSpec grid;
  std::uint64_t n_traj = 1;
  std::uint64_t master_seed = 0;
  Scheme scheme = Scheme::kraus;
  bool clamp = true;
  std::uint64_t write_trajectories = 0;
  std::vector<Analysis> analyses;
  std::vector<std::string> warnings;

  ScalarOptions scalar_options() const { return {clamp, scheme}; }
  std::string prefixed(const std::string& name) const { return label.empty() ? name : label + "_" + name; }
};

const ScalarModelSpec* thermal_of(const Model& m) {
  return m.is_scalar() && m.scalar->variant == ScalarVariant::collapse_thermal ? &*m.scalar : nullptr;
}

Analysis parse_analysis(const json& j, std::size_t index, const Experiment& ex) {
  Section s(j, "config.analyses[" + std::to_string(index) + "]");
  Analysis a;
  a.type = s.choice("type", {"born", "decay", "jumps", "spikes", "hmm", "averaged_me"}, "");
  a.name = s.text("name", a.type);
  if (a.name.empty() || a.name.find_first_of("/\\") != std::string::npos || a.name[0] == '.')
    throw ConfigError(s.at("name") + ": must be a plain file name");
  const auto& m = ex.model;

  if (a.type == "born") {
    BornParams p;
    p.threshold = s.number("threshold", p.threshold);
    if (!(p.threshold > 0.5 && p.threshold < 1.0)) throw ConfigError(s.at("threshold") + ": must lie in (0.5, 1)");
    p.z_max = s.positive("z_max", p.z_max);
    p.tolerance = s.maybe_number("tolerance");
    p.expected = s.maybe_number("expected");
    if (m.dim() != 2) throw ConfigError(s.at("type") + ": born needs a two-level model");
    a.params = p;
  } else if (a.type == "decay") {
    DecayParams p;
    p.quantity = s.choice("quantity", {"distance", "coherence"}, p.quantity);
    p.expected_rate = s.maybe_number("expected_rate");
    p.tolerance = s.positive("tolerance", p.tolerance);
    p.t_start = s.number("t_start", p.t_start);
    p.noise_factor = s.positive("noise_factor", p.noise_factor);
    if (m.dim() != 2) throw ConfigError(s.at("type") + ": decay needs a two-level model");
    if (p.quantity == "coherence" && m.is_scalar())
      throw ConfigError(s.at("quantity") + ": coherence needs a qubit model (scalar models carry no phase)");
    if (!p.expected_rate) {
      // Pure measurement of a two-level operator: both quantities decay at G (nu_1 - nu_0)^2 / 2.
      const bool pure = m.is_scalar() ? m.scalar->variant == ScalarVariant::pure_collapse
                                      : m.matrix->channels().empty() && m.matrix->hamiltonian().max_abs() == 0.0;
      if (!pure) throw ConfigError(s.at("expected_rate") + ": missing (no closed form for this model)");
      p.expected_rate = m.measurement_rate() / 2.0;
    }
    a.params = p;
  } else if (a.type == "jumps") {
    JumpsParams p;
    p.theta = s.number("theta", p.theta);
    if (!(p.theta > 0.0 && p.theta < 0.5)) throw ConfigError(s.at("theta") + ": must lie in (0, 0.5)");
    p.tolerance = s.positive("tolerance", p.tolerance);
    p.confidence = s.number("confidence", p.confidence);
    if (!(p.confidence > 0.0 && p.confidence < 1.0)) throw ConfigError(s.at("confidence") + ": must lie in (0, 1)");
    p.min_events = s.count("min_events", p.min_events);
    p.dwell = s.flag("dwell_test", p.dwell);
    if (m.is_scalar() && m.scalar->variant == ScalarVariant::wright_fisher)
      throw ConfigError(s.at("type") + ": the wright_fisher preset has no jump process");
    a.params = p;
  } else if (a.type == "spikes") {
    SpikesParams p;
    p.thresholds.epsilon = s.number("epsilon", p.thresholds.epsilon);
    p.thresholds.delta = s.number("delta", p.thresholds.delta);
    if (!(p.thresholds.delta > 0.0 && p.thresholds.delta < p.thresholds.epsilon && p.thresholds.epsilon < 0.5))
      throw ConfigError(s.path() + ": needs 0 < delta < epsilon < 0.5");
    const auto* th = thermal_of(m);
    if (th) {
      p.law = {th->lambda, th->p_eq};
      if (s.has("lambda") || s.has("p_eq"))
        throw ConfigError(s.path() + ": lambda and p_eq come from the thermal model");
    } else {
      if (m.dim() != 2) throw ConfigError(s.at("type") + ": spikes needs a two-level model");
      p.law = {s.positive("lambda"), s.probability("p_eq", 0.5)};
    }
    p.windows = s.count("windows", p.windows);
    if (p.windows < 1) throw ConfigError(s.at("windows") + ": must be >= 1");
    p.height_edges = s.numbers("height_edges", p.height_edges);
    if (p.height_edges.size() < 2 || !std::is_sorted(p.height_edges.begin(), p.height_edges.end()) ||
        !(p.height_edges.front() > 0.0))
      throw ConfigError(s.at("height_edges") + ": must be positive and increasing");
    p.survival_heights = s.numbers("survival_heights", p.survival_heights);
    p.slope_tolerance = s.positive("slope_tolerance", p.slope_tolerance);
    p.write_events = s.flag("write_events", p.write_events);
    const double load = ex.grid.dt * m.measurement_rate();
    if (load > 0.05) {
      std::ostringstream msg;
      msg << "config.grid.dt: dt * rate = " << format_double(load) << " exceeds 0.05, the limit for spike analyses";
      throw ConfigError(msg.str());
    }
    a.params = p;
  } else if (a.type == "hmm") {
    HmmParams p;
    p.mode = s.choice("mode", {"smoothing", "equivalence"}, p.mode);
    const auto* th = thermal_of(m);
    p.filter.lambda = th && !s.has("lambda") ? th->lambda : s.positive("lambda");
    p.filter.p_eq = th && !s.has("p_eq") ? th->p_eq : s.number("p_eq");
    if (!(p.filter.p_eq > 0.0 && p.filter.p_eq < 1.0)) throw ConfigError(s.at("p_eq") + ": must lie in (0, 1)");
    p.filter.gamma = th && !s.has("gamma") ? th->gamma : s.positive("gamma");
    p.filter.p0 = s.probability("p0", p.filter.p_eq);
    p.horizon = s.positive("horizon", ex.grid.t_final());
    p.dt = s.positive("dt", ex.grid.dt);
    if (p.filter.lambda * p.dt >= 1.0) throw ConfigError(s.at("dt") + ": lambda * dt must be < 1");
    if (p.mode == "smoothing") {
      p.min_height = s.number("min_height", p.min_height);
      p.max_ratio = s.number("max_ratio", p.max_ratio);
      p.write_path = s.flag("write_path", p.write_path);
    } else {
      p.n = s.count("n", ex.n_traj);
      if (p.n < 1000) throw ConfigError(s.at("n") + ": equivalence needs n >= 1000");
      p.checkpoints = s.numbers("checkpoints", p.checkpoints);
      p.ks_max = s.positive("ks_max", p.ks_max);
      p.alpha = s.positive("alpha", p.alpha);
    }
    a.params = p;
  } else {
    AveragedParams p;
    p.z_max = s.positive("z_max", p.z_max);
    p.dt = s.positive("dt", std::min(ex.grid.dt, 1e-3));
    if (m.is_scalar() && m.scalar->variant == ScalarVariant::wright_fisher)
      throw ConfigError(s.at("type") + ": the wright_fisher preset has no averaged master equation");
    const double scale = m.qubit().rate_scale();
    if (p.dt * scale > 0.1) throw ConfigError(s.at("dt") + ": dt * rate scale must be <= 0.1");
    a.params = p;
  }
  s.done();
  return a;
}

Experiment parse_experiment(const json& config, std::string label) {
  Section root(config, "config");
  Experiment ex;
  ex.label = std::move(label);
  ex.model = parse_model(root.raw("model"));
  ex.initial = parse_initial(root.raw("initial"), ex.model);

  Section g(root.raw("grid"), "config.grid");
  const double dt = g.positive("dt");
  const double t_final = g.positive("t_final");
  const auto stride = g.count("record_stride", 1);
  if (stride < 1) throw ConfigError(g.at("record_stride") + ": must be >= 1");
  g.done();
  ex.grid = GridSpec::covering(t_final, dt, stride);
  if (ex.grid.n_steps < 1 || std::abs(ex.grid.t_final() - t_final) > 1e-9 * t_final)
    throw ConfigError("config.grid.t_final: must be a whole number of steps dt");

  Section e(root.raw("ensemble"), "config.ensemble");
  ex.n_traj = e.count("n_traj");
  if (ex.n_traj < 1) throw ConfigError(e.at("n_traj") + ": must be >= 1");
  ex.master_seed = e.count("master_seed");
  e.done();

  ex.scheme = scheme_from_string(root.choice("scheme", {"euler", "kraus"}, ""));
  ex.clamp = root.flag("clamp", true);
  if (ex.model.is_scalar() && ex.model.scalar->variant == ScalarVariant::wright_fisher && ex.scheme == Scheme::kraus)
    throw ConfigError("config.scheme: the wright_fisher preset only supports euler");
  ex.write_trajectories = root.count("write_trajectories", ex.n_traj);
  if (ex.write_trajectories > ex.n_traj) throw ConfigError("config.write_trajectories: exceeds ensemble.n_traj");

  if (root.has("output_dir")) root.text("output_dir");
  if (root.has("sweep")) root.raw("sweep");

  const double load = ex.grid.dt * ex.model.measurement_rate();
  if (load > 0.5) ex.warnings.push_back("dt * rate = " + format_double(load) + " exceeds 0.5; results may be biased");

  if (root.has("analyses")) {
    const auto& list = root.raw("analyses");
    if (!list.is_array()) throw ConfigError("config.analyses: expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < list.size(); ++i) {
      ex.analyses.push_back(parse_analysis(list[i], i, ex));
      if (!names.insert(ex.analyses.back().name).second)
        throw ConfigError("config.analyses[" + std::to_string(i) + "].name: duplicate '" + ex.analyses.back().name + "'");
    }
  }
  root.done();
  return ex;
}

json::json_pointer pointer_of(const std::string& dotted, const std::string& where) {
  if (dotted.empty()) throw ConfigError(where + ": empty path");
  std::string ptr;
  std::stringstream ss(dotted);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError(where + ": empty segment in '" + dotted + "'");
    ptr += "/" + part;
  }
  return json::json_pointer(ptr);
}

void assign(json& config, const std::string& dotted, const json& value, const std::string& where) {
  const auto ptr = pointer_of(dotted, where);
  try {
    config[ptr] = value;
  } catch (const json::exception& e) {
    throw ConfigError(where + ": cannot set '" + dotted + "': " + e.what());
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

std::vector<Experiment> expand(const json& config) {
  if (!config.is_object()) throw ConfigError("config: expected an object");
  if (!config.contains("sweep")) return {parse_experiment(config, "")};
  Section sw(config.at("sweep"), "config.sweep");
  const auto parameter = sw.text("parameter");
  const auto& values = sw.raw("values");
  sw.done();
  if (parameter == "sweep" || parameter.starts_with("sweep."))
    throw ConfigError(sw.at("parameter") + ": cannot sweep the sweep itself");
  if (!values.is_array() || values.empty()) throw ConfigError(sw.at("values") + ": expected a non-empty array");
  const auto leaf = parameter.substr(parameter.rfind('.') + 1);
  std::vector<Experiment> out;
  std::set<std::string> labels;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& v = values[i];
    if (!v.is_number() && !v.is_string())
      throw ConfigError(sw.at("values") + "[" + std::to_string(i) + "]: expected a number or a string");
    json point = config;
    point.erase("sweep");
    assign(point, parameter, v, sw.at("parameter"));
    const std::string label = leaf + "_" + (v.is_string() ? v.get<std::string>() : format_double(v.get<double>()));
    if (!labels.insert(label).second) throw ConfigError(sw.at("values") + ": duplicate value " + v.dump());
    try {
      out.push_back(parse_experiment(point, label));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (sweep point " + parameter + " = " + v.dump() + ")");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

template <typename Fn>
auto with_context(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const RunFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw RunFailure(what + ": " + e.what());
  }
}

std::string trajectory_context(const Experiment& ex, std::size_t i) {
  return (ex.label.empty() ? std::string() : ex.label + ", ") + "trajectory " + std::to_string(i) + " (seed " +
         std::to_string(ex.master_seed) + ")";
}

TrajectoryRecord simulate_one(const Experiment& ex, std::size_t i) {
  return with_context(trajectory_context(ex, i), [&] {
    const RandomnessSpec rs{ex.master_seed, i};
    if (ex.model.is_scalar()) {
      auto r = simulate(*ex.model.scalar, ex.initial.p, ex.grid, rs, ex.scalar_options());
      r.model_name = ex.model.label;
      return r;
    }
    return simulate(*ex.model.matrix, ex.initial.rho, ex.grid, rs, ex.scheme);
  });
}

/// Runs fn(observe) once per trajectory, where observe(t, rho00 or p, rho) sees every step.
template <typename Observer>
StepDiagnostics stream_one(const Experiment& ex, std::size_t i, Observer&& observe) {
  return with_context(trajectory_context(ex, i), [&] {
    const RandomnessSpec rs{ex.master_seed, i};
    if (ex.model.is_scalar())
      return simulate_observed(*ex.model.scalar, ex.initial.p, ex.grid, rs, ex.scalar_options(),
                               [&](std::uint64_t, double t, double p) { observe(t, p, nullptr); });
    return simulate_observed(*ex.model.matrix, ex.initial.rho, ex.grid, rs, ex.scheme,
                             [&](std::uint64_t, double t, const ComplexMatrix& rho) { observe(t, rho(0, 0).real(), &rho); });
  });
}

json diagnostics_json(const StepDiagnostics& d) {
  return {{"clamp_events", d.clamp_events},
          {"absorptions", d.absorptions},
          {"positivity_violations", d.positivity_violations},
          {"repairs", d.repairs},
          {"purity_violations", d.purity_violations},
          {"min_eigenvalue", d.min_eigenvalue}};
}

struct Outputs {
  fs::path root;

  void text(const fs::path& rel, const std::string& content) const {
    const auto path = root / rel;
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RunFailure("cannot write " + path.string());
    os << content;
    if (!os) throw RunFailure("write failed for " + path.string());
  }
  void json_file(const fs::path& rel, const json& j) const { text(rel, j.dump(2) + "\n"); }
};

std::string padded(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

Report failed_report(const std::string& test, const std::string& error) {
  Report r;
  r.test = test;
  r.pass = false;
  r.details["error"] = error;
  return r;
}

double final_entry(const TrajectoryRecord& r, std::size_t i, std::size_t j, bool imag) {
  if (r.is_scalar()) return i == 0 && j == 0 ? r.populations().back() : (i == 1 && j == 1 ? 1.0 - r.populations().back() : 0.0);
  const cplx z = r.densities().back()(i, j);
  return imag ? z.imag() : z.real();
}

Report run_born(const Experiment& ex, const BornParams& p, const std::vector<TrajectoryRecord>& ens) {
  const auto b = born_statistics(ens, p.threshold);
  Report r;
  r.test = "born_rule";
  r.expected = p.expected.value_or(ex.initial.population);
  r.estimate = b.fraction_up;
  r.stderr_ = b.stderr_;
  r.z_score = Report::z(r.estimate, r.expected, std::max(r.stderr_, std::sqrt(r.expected * (1 - r.expected) / b.n)));
  r.pass = p.tolerance ? std::abs(r.estimate - r.expected) <= *p.tolerance : std::abs(r.z_score) <= p.z_max;
  r.parameters = {{"threshold", p.threshold}, {"n_traj", b.n}};
  if (p.tolerance)
    r.parameters["tolerance"] = *p.tolerance;
  else
    r.parameters["z_max"] = p.z_max;
  r.details = {{"n_up", b.n_up}, {"n_down", b.n_down}, {"n_unresolved", b.n_unresolved}};
  return r;
}

Report run_decay(const DecayParams& p, const std::vector<TrajectoryRecord>& ens) {
  const auto& times = ens.front().times;
  std::vector<double> mean, se;
  if (p.quantity == "distance") {
    std::tie(mean, se) =
        ensemble_profile(ens, [](const TrajectoryRecord& r, std::size_t k) { return collapse_distance(r.population(k)); });
  } else {
    const auto [re, re_se] = ensemble_profile(ens, [](const TrajectoryRecord& r, std::size_t k) {
      return r.densities()[k](0, 1).real();
    });
    const auto [im, im_se] = ensemble_profile(ens, [](const TrajectoryRecord& r, std::size_t k) {
      return r.densities()[k](0, 1).imag();
    });
    for (std::size_t k = 0; k < re.size(); ++k) {
      mean.push_back(std::hypot(re[k], im[k]));
      se.push_back(std::hypot(re_se[k], im_se[k]));
    }
  }
  const auto window = decay_window(times, mean, se, p.t_start, p.noise_factor);
  const auto fit = fit_exponential_decay(times, mean, window);
  Report r;
  r.test = "decay_rate";
  r.parameters = {{"quantity", p.quantity}, {"t_start", p.t_start}, {"noise_factor", p.noise_factor},
                  {"tolerance", p.tolerance}, {"n_traj", ens.size()}};
  r.estimate = fit.rate;
  r.stderr_ = fit.rate_stderr;
  r.expected = *p.expected_rate;
  r.z_score = Report::z(fit.rate, r.expected, fit.rate_stderr);
  r.pass = std::abs(fit.rate / r.expected - 1.0) <= p.tolerance;
  r.details = {{"window", {window.first, window.second}}, {"r_squared", fit.r_squared}, {"n_points", fit.n_points}};
  return r;
}

Report run_jumps(const Experiment& ex, const JumpsParams& p, unsigned workers, StepDiagnostics& diag) {
  const auto qubit = ex.model.qubit();
  const auto& o = qubit.collapse_op();
  const auto theory = theoretical_rates(qubit);
  struct Part {
    JumpStatistics stats;
    StepDiagnostics diag;
  };
  const auto parts = parallel_map(ex.n_traj, workers, [&](std::size_t i) {
    JumpTracker tracker(o.dim(), p.theta, false);
    std::vector<double> f(o.dim());
    const auto d = stream_one(ex, i, [&](double t, double pop, const ComplexMatrix* rho) {
      if (rho) {
        for (std::size_t k = 0; k < o.dim(); ++k) f[k] = o.fidelity(*rho, k);
        tracker.observe(t, f);
      } else {
        tracker.observe_population(t, pop);
      }
    });
    return Part{tracker.statistics(), d};
  });
  JumpStatistics s(o.dim());
  for (const auto& part : parts) {
    s.merge(part.stats);
    diag.merge(part.diag);
  }
  const auto emp = empirical_rates(s, p.confidence, p.min_events);

  Report r;
  r.test = "jump_rates";
  r.parameters = {{"theta", p.theta}, {"tolerance", p.tolerance}, {"confidence", p.confidence},
                  {"min_events", p.min_events}, {"n_traj", ex.n_traj}};
  r.pass = emp.sufficient;
  double worst = -1.0;
  json entries = json::array();
  for (std::size_t j = 0; j < s.dim; ++j)
    for (std::size_t i = 0; i < s.dim; ++i) {
      if (i == j) continue;
      const double t = theory(i, j), e = emp.estimate(i, j);
      const double rel = t > 0.0 ? std::abs(e / t - 1.0) : (e == 0.0 ? 0.0 : INFINITY);
      if (!(rel <= p.tolerance)) r.pass = false;
      entries.push_back({{"to", i}, {"from", j}, {"theory", t}, {"estimate", e}, {"ci_low", emp.ci_low(i, j)},
                         {"ci_high", emp.ci_high(i, j)}, {"count", s.count(i, j)},
                         {"relative_error", std::isfinite(rel) ? json(rel) : json("inf")}});
      if (rel > worst) {
        worst = rel;
        r.estimate = e;
        r.expected = t;
        const double half = 0.5 * (emp.ci_high(i, j) - emp.ci_low(i, j));
        r.stderr_ = half / boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * p.confidence);
        r.z_score = Report::z(e, t, r.stderr_);
      }
    }
  r.details["rates"] = std::move(entries);
  r.details["theoretical"] = theory.to_json();
  r.details["empirical"] = emp.estimate.to_json();
  r.details["occupation"] = s.occupation;
  r.details["unassigned_time"] = s.unassigned_time;
  r.details["total_time"] = s.total_time;
  r.details["warnings"] = emp.warnings;
  if (p.dwell) {
    try {
      const auto dwell = dwell_time_test(s, theory);
      r.details["dwell"] = to_json(dwell);
      if (!dwell.pass) r.pass = false;
    } catch (const InsufficientData& e) {
      r.details["dwell"] = {{"error", e.what()}};
      r.pass = false;
    }
  }
  return r;
}

Report run_spikes(const Experiment& ex, const Analysis& a, const SpikesParams& p, unsigned workers,
                  const Outputs& out, StepDiagnostics& diag) {
  const double window = ex.grid.t_final() / static_cast<double>(p.windows);
  struct Part {
    SpikeDetection detection;
    StepDiagnostics diag;
  };
  auto parts = parallel_map(ex.n_traj, workers, [&](std::size_t i) {
    SpikeDetector det(p.thresholds, i, p.windows > 1 ? window : 0.0);
    const auto d = stream_one(ex, i, [&](double t, double pop, const ComplexMatrix*) { det.observe(t, pop); });
    return Part{{std::move(det.events()), det.exposure(), ex.grid.t_final()}, d};
  });
  std::vector<SpikeDetection> detections;
  for (auto& part : parts) {
    diag.merge(part.diag);
    detections.push_back(std::move(part.detection));
  }
  const auto d = merge_detections(std::move(detections));
  if (p.write_events) {
    std::ostringstream os;
    write_spikes_csv(os, d.events);
    out.text(fs::path("reports") / (ex.prefixed(a.name) + "_events.csv"), os.str());
  }

  Report r;
  r.test = "spike_law";
  r.parameters = {{"epsilon", p.thresholds.epsilon}, {"delta", p.thresholds.delta}, {"lambda", p.law.lambda},
                  {"p_eq", p.law.p_eq}, {"windows", p.windows}, {"slope_tolerance", p.slope_tolerance},
                  {"n_traj", ex.n_traj}};
  r.expected = -1.0;
  r.details["n_events"] = d.events.size();
  r.details["exposure"] = {{"zero", d.exposure.zero}, {"one", d.exposure.one}};
  r.pass = true;
  try {
    const auto surv = spike_survival(d.events, p.survival_heights, d.exposure.zero + d.exposure.one);
    const auto fit = survival_power_law(surv);
    r.estimate = fit.slope;
    r.stderr_ = fit.slope_stderr;
    r.z_score = Report::z(fit.slope, -1.0, fit.slope_stderr);
    if (!(std::abs(fit.slope + 1.0) <= p.slope_tolerance)) r.pass = false;
    json rows = json::array();
    for (std::size_t k = 0; k < surv.heights.size(); ++k)
      rows.push_back({{"h", surv.heights[k]}, {"count", surv.counts[k]}, {"rate", surv.rate[k]},
                      {"rate_stderr", surv.rate_stderr[k]},
                      {"limit_rate", (p.law.rate(SpikeOrigin::from_zero) * d.exposure.zero +
                                      p.law.rate(SpikeOrigin::from_one) * d.exposure.one) /
                                         surv.exposure / surv.heights[k]}});
    r.details["survival"] = std::move(rows);
  } catch (const InsufficientData& e) {
    r.details["survival"] = {{"error", e.what()}};
    r.pass = false;
  }
  try {
    const auto chi = poisson_count_test(d, p.law, SpikePartition{p.windows, p.height_edges});
    r.details["poisson"] = to_json(chi);
    if (!chi.pass) r.pass = false;
  } catch (const Error& e) {
    r.details["poisson"] = {{"error", e.what()}};
    r.pass = false;
  }
  return r;
}

Report run_hmm_analysis(const Experiment& ex, const Analysis& a, const HmmParams& p, unsigned workers,
                        const Outputs& out) {
  if (p.mode == "equivalence") {
    EquivalenceOptions opt;
    opt.dt = p.dt;
    opt.checkpoints = p.checkpoints;
    opt.ks_max = p.ks_max;
    opt.alpha = p.alpha;
    opt.master_seed = ex.master_seed;
    opt.direct_scheme = ex.scheme;
    opt.workers = workers;
    return with_context("hmm equivalence", [&] {
      return filtered_law_equivalence(p.filter.lambda, p.filter.p_eq, p.filter.gamma, p.n, opt);
    });
  }
  const auto run = with_context("hmm run (seed " + std::to_string(ex.master_seed) + ")", [&] {
    return run_hmm(p.filter, p.horizon, p.dt, {ex.master_seed, 0}, true);
  });
  std::vector<double> t(run.filtered.size());
  std::vector<int> hidden(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    t[k] = p.dt * static_cast<double>(k);
    hidden[k] = run.telegraph.value_at(t[k]);
  }
  if (p.write_path) {
    std::ostringstream os;
    write_hmm_csv(os, p.dt, hidden, run.filtered, run.smoothed);
    out.text(fs::path("reports") / (ex.prefixed(a.name) + "_path.csv"), os.str());
  }
  const auto nf = count_spikes(detect_spikes(t, run.filtered).events, p.min_height);
  const auto nfb = count_spikes(detect_spikes(t, run.smoothed).events, p.min_height);
  std::size_t wrong_f = 0, wrong_fb = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    wrong_f += (run.filtered[k] > 0.5 ? 1 : 0) != hidden[k];
    wrong_fb += (run.smoothed[k] > 0.5 ? 1 : 0) != hidden[k];
  }
  Report r;
  r.test = "smoothing_spikes";
  r.parameters = {{"lambda", p.filter.lambda}, {"p_eq", p.filter.p_eq}, {"gamma", p.filter.gamma}, {"p0", p.filter.p0},
                  {"horizon", p.horizon}, {"dt", p.dt}, {"min_height", p.min_height}, {"max_ratio", p.max_ratio}};
  r.estimate = nf > 0 ? static_cast<double>(nfb) / static_cast<double>(nf) : 0.0;
  r.expected = p.max_ratio;
  r.pass = nf > 0 && r.estimate <= p.max_ratio;
  const double n = static_cast<double>(t.size());
  r.details = {{"spikes_filtered", nf}, {"spikes_smoothed", nfb},
               {"switches", run.telegraph.switch_times.size()},
               {"classification_error_filtered", static_cast<double>(wrong_f) / n},
               {"classification_error_smoothed", static_cast<double>(wrong_fb) / n}};
  return r;
}

Report run_averaged(const Experiment& ex, const AveragedParams& p, const std::vector<TrajectoryRecord>& ens) {
  const auto qubit = ex.model.qubit();
  const double t_final = ens.front().times.back();
  const auto ref = with_context("averaged master equation", [&] {
    return averaged_me_evolve(qubit, ex.initial.rho, t_final, p.dt);
  });
  Report r;
  r.test = "averaged_master_equation";
  r.parameters = {{"t", t_final}, {"dt", p.dt}, {"z_max", p.z_max}, {"n_traj", ens.size()}};
  r.pass = true;
  json entries = json::array();
  double worst = -1.0;
  const std::size_t dim = ex.model.is_scalar() ? 1 : qubit.dim();
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i; j < dim; ++j)
      for (bool imag : {false, true}) {
        if (imag && (i == j || ex.model.is_scalar())) continue;
        stats::RunningStats s;
        for (const auto& rec : ens) s.add(final_entry(rec, i, j, imag));
        const double target = imag ? ref(i, j).imag() : ref(i, j).real();
        const double se = s.stderr_mean();
        const double dev = std::abs(s.mean() - target);
        const double z = Report::z(s.mean(), target, se);
        const bool ok = dev <= p.z_max * se || dev <= 1e-12;
        if (!ok) r.pass = false;
        entries.push_back({{"entry", {i, j}}, {"part", imag ? "im" : "re"}, {"ensemble", s.mean()}, {"stderr", se},
                           {"reference", target}, {"z_score", std::isfinite(z) ? json(z) : json(nullptr)}, {"pass", ok}});
        const double az = std::isfinite(z) ? std::abs(z) : (dev <= 1e-12 ? 0.0 : 1e300);
        if (az > worst) {
          worst = az;
          r.estimate = s.mean();
          r.expected = target;
          r.stderr_ = se;
          r.z_score = std::isfinite(z) ? z : 0.0;
        }
      }
  r.details["entries"] = std::move(entries);
  return r;
}

struct Outcome {
  std::string name;
  std::string type;
  std::string report_path;
  bool pass = false;
};

bool needs_ensemble(const Experiment& ex) {
  if (ex.write_trajectories > 0) return true;
  for (const auto& a : ex.analyses)
    if (a.type == "born" || a.type == "decay" || a.type == "averaged_me") return true;
  return false;
}

json run_experiment(const Experiment& ex, unsigned workers, const Outputs& out, std::vector<Outcome>& outcomes) {
  for (const auto& w : ex.warnings) std::cerr << "warning: " << (ex.label.empty() ? "" : ex.label + ": ") << w << '\n';

  StepDiagnostics diag;
  std::vector<TrajectoryRecord> ens;
  if (needs_ensemble(ex)) {
    bool full = false;
    for (const auto& a : ex.analyses)
      if (a.type == "born" || a.type == "decay" || a.type == "averaged_me") full = true;
    const std::size_t n = full ? ex.n_traj : ex.write_trajectories;
    ens = parallel_map(n, workers, [&](std::size_t i) { return simulate_one(ex, i); });
    for (const auto& r : ens) diag.merge(r.diagnostics);
    const auto model_json = ex.model.to_json();
    for (std::size_t i = 0; i < ex.write_trajectories; ++i) {
      std::ostringstream os;
      write_trajectory_csv(os, ens[i]);
      const auto stem = ex.prefixed("traj_" + padded(i));
      out.text(fs::path("trajectories") / (stem + ".csv"), os.str());
      out.json_file(fs::path("trajectories") / (stem + ".json"), trajectory_header(ens[i], model_json));
    }
  }

  for (const auto& a : ex.analyses) {
    Report rep;
    try {
      if (const auto* p = std::get_if<BornParams>(&a.params))
        rep = run_born(ex, *p, ens);
      else if (const auto* p = std::get_if<DecayParams>(&a.params))
        rep = run_decay(*p, ens);
      else if (const auto* p = std::get_if<JumpsParams>(&a.params))
        rep = run_jumps(ex, *p, workers, diag);
      else if (const auto* p = std::get_if<SpikesParams>(&a.params))
        rep = run_spikes(ex, a, *p, workers, out, diag);
      else if (const auto* p = std::get_if<HmmParams>(&a.params))
        rep = run_hmm_analysis(ex, a, *p, workers, out);
      else
        rep = run_averaged(ex, std::get<AveragedParams>(a.params), ens);
    } catch (const RunFailure&) {
      throw;
    } catch (const Error& e) {
      rep = failed_report(a.type, e.what());
    }
    const auto rel = fs::path("reports") / (ex.prefixed(a.name) + ".json");
    json j = to_json(rep);
    j["analysis"] = {{"name", a.name}, {"type", a.type}};
    if (!ex.label.empty()) j["analysis"]["sweep_point"] = ex.label;
    out.json_file(rel, j);
    outcomes.push_back({ex.prefixed(a.name), a.type, rel.generic_string(), rep.pass});
    std::cout << (rep.pass ? "PASS " : "FAIL ") << ex.prefixed(a.name) << '\n';
  }

  json point;
  if (!ex.label.empty()) point["label"] = ex.label;
  point["model"] = ex.model.to_json();
  point["grid"] = {{"dt", ex.grid.dt}, {"n_steps", ex.grid.n_steps}, {"record_stride", ex.grid.record_stride}};
  point["trajectories_written"] = ex.write_trajectories;
  point["diagnostics"] = diagnostics_json(diag);
  point["warnings"] = ex.warnings;
  return point;
}

json load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(path + ": cannot open");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets, std::optional<unsigned> workers_flag,
            const std::string& output_flag, bool check_only) {
  json config;
  std::vector<Experiment> points;
  fs::path output_dir;
  try {
    config = load_config(config_path);
    if (!config.is_object()) throw ConfigError("config: expected an object");
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set " + s + ": expected path=value");
      assign(config, s.substr(0, eq), parse_value(s.substr(eq + 1)), "--set " + s.substr(0, eq));
    }
    if (!output_flag.empty()) config["output_dir"] = output_flag;
    if (!config.contains("output_dir") || !config["output_dir"].is_string() ||
        config["output_dir"].get<std::string>().empty())
      throw ConfigError("config.output_dir: missing (or pass --output-dir)");
    output_dir = config["output_dir"].get<std::string>();
    points = expand(config);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  if (check_only) {
    std::size_t n = 0;
    for (const auto& ex : points) n += ex.analyses.size();
    std::cout << "config ok: " << points.size() << " run(s), " << n << " analyses\n";
    return 0;
  }

  const unsigned workers = workers_flag.value_or(default_workers());
  try {
    const Outputs out{output_dir};
    fs::create_directories(output_dir);
    out.json_file("config.json", config);
    std::vector<Outcome> outcomes;
    json runs = json::array();
    for (const auto& ex : points) runs.push_back(run_experiment(ex, workers, out, outcomes));

    bool all = true;
    json analyses = json::array();
    for (const auto& o : outcomes) {
      all = all && o.pass;
      analyses.push_back({{"name", o.name}, {"type", o.type}, {"pass", o.pass}, {"report", o.report_path}});
    }
    json summary;
    summary["code_version"] = kVersion;
    summary["pass"] = all;
    summary["analyses"] = std::move(analyses);
    summary["runs"] = std::move(runs);
    out.json_file("summary.json", summary);
    std::cout << (all ? "all analyses passed" : "some analyses failed") << " (" << outcomes.size() << " analyses); see "
              << (output_dir / "summary.json").string() << '\n';
    return all ? 0 : kExitFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collapse-lab: continuous-measurement collapse experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  auto* run = app.add_subcommand("run", "Run an experiment config");
  std::string config_path, output_dir;
  std::vector<std::string> sets;
  unsigned workers = 0;
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--set", sets, "Override a config field: dotted.path=value (value parsed as JSON if possible)");
  auto* workers_opt = run->add_option("--workers", workers, "Worker threads (default: COLLAPSE_LAB_WORKERS or all cores)")
                          ->check(CLI::PositiveNumber);
  run->add_option("--output-dir", output_dir, "Output directory (overrides config.output_dir)");
  bool check_only = false;
  run->add_flag("--check", check_only, "Validate the config and exit without running");

  auto* list = app.add_subcommand("list-presets", "Print the preset names, one per line");

  auto* describe = app.add_subcommand("describe", "Print a preset's equation and parameters as JSON");
  std::string preset_name;
  describe->add_option("preset", preset_name, "Preset name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*run)
    return cmd_run(config_path, sets, *workers_opt ? std::optional<unsigned>(workers) : std::nullopt, output_dir,
                   check_only);
  if (*list) {
    for (const auto& p : presets()) std::cout << p.name << '\n';
    return 0;
  }
  if (*describe) {
    const auto* p = find_preset(preset_name);
    if (!p) {
      std::cerr << "error: unknown preset '" << preset_name << "' (see list-presets)\n";
      return kExitConfig;
    }
    std::cout << describe_preset(*p).dump(2) << '\n';
    return 0;
  }
  return kExitConfig;
}
