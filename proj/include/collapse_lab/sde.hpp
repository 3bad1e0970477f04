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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "collapse_lab/core.hpp"
#include "collapse_lab/models.hpp"
#include "collapse_lab/parallel.hpp"
#include "collapse_lab/random.hpp"

namespace collapse_lab {

/// A step failed; carries the step index.
class StepError : public Error {
 public:
  StepError(std::uint64_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

enum class Scheme { euler, kraus };

inline const char* to_string(Scheme s) { return s == Scheme::euler ? "euler" : "kraus"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "euler") return Scheme::euler;
  if (s == "kraus") return Scheme::kraus;
  throw Error("unknown scheme '" + s + "' (expected euler or kraus)");
}

struct GridSpec {
  double dt = 1e-3;
  std::uint64_t n_steps = 1;
  std::uint64_t record_stride = 1;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvariantViolation("GridSpec: dt must be > 0");
    if (n_steps < 1) throw InvariantViolation("GridSpec: n_steps must be >= 1");
    if (record_stride < 1) throw InvariantViolation("GridSpec: record_stride must be >= 1");
  }

  double t_final() const noexcept { return dt * static_cast<double>(n_steps); }

  /// States are recorded every record_stride steps and at the final step.
  bool records(std::uint64_t step) const noexcept { return step % record_stride == 0 || step == n_steps; }

  std::size_t n_records() const noexcept {
    return static_cast<std::size_t>(n_steps / record_stride + 1 + (n_steps % record_stride != 0 ? 1 : 0));
  }

  static GridSpec covering(double t_final, double dt, std::uint64_t stride = 1) {
    return {dt, static_cast<std::uint64_t>(std::llround(t_final / dt)), stride};
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Counters accumulated over a run; nothing here is ever silently repaired away.
struct StepDiagnostics {
  std::uint64_t clamp_events = 0;           // scalar Euler overshoots clamped into [0, 1]
  std::uint64_t absorptions = 0;            // Wright-Fisher steps absorbed at a boundary
  std::uint64_t positivity_violations = 0;  // steps ending with min eigenvalue < -kPositivityCheck
  std::uint64_t repairs = 0;                // projections that moved a state by more than tolerance
  std::uint64_t purity_violations = 0;      // scalar (p, u) steps ending with |u|^2 > p(1 - p)
  double min_eigenvalue = 1.0;

  static constexpr double kPositivityCheck = 1e-12;

  void merge(const StepDiagnostics& o) {
    clamp_events += o.clamp_events;
    absorptions += o.absorptions;
    positivity_violations += o.positivity_violations;
    repairs += o.repairs;
    purity_violations += o.purity_violations;
    min_eigenvalue = std::min(min_eigenvalue, o.min_eigenvalue);
  }
};

// ---------------------------------------------------------------------------
// Scalar stepping
// ---------------------------------------------------------------------------

/// p + drift dt + diffusion dW, without clamping.
inline double euler_step_scalar_raw(double p, double drift, double diffusion, double dt, double dw) {
  if (!(dt > 0.0)) throw InvariantViolation("euler_step_scalar: dt must be > 0");
  if (!std::isfinite(p) || !std::isfinite(drift) || !std::isfinite(diffusion) || !std::isfinite(dw))
    throw InvariantViolation("euler_step_scalar: non-finite input");
  return p + drift * dt + diffusion * dw;
}

/// Euler step clamped to [0, 1].
inline double euler_step_scalar(double p, double drift, double diffusion, double dt, double dw) {
  return std::clamp(euler_step_scalar_raw(p, drift, diffusion, dt, dw), 0.0, 1.0);
}

struct ScalarOptions {
  bool clamp = true;  // Euler only; ignored by Wright-Fisher, which absorbs at the boundary
  Scheme scheme = Scheme::euler;
};

/// The Kraus step of the matching qubit model (O = sigma_z / 2, G = g / 4) restricted to
/// diagonal states: stays in [0, 1] without clamping.
inline double kraus_step_scalar(const ScalarModelSpec& spec, double p, double dt, double dw) {
  if (spec.variant == ScalarVariant::wright_fisher)
    throw InvariantViolation("kraus_step_scalar: the Wright-Fisher process has no Kraus form");
  if (!(dt > 0.0) || !std::isfinite(p) || !std::isfinite(dw)) throw InvariantViolation("kraus_step_scalar: bad input");
  const bool thermal = spec.variant == ScalarVariant::collapse_thermal;
  const double up = thermal ? spec.lambda_up() : 0.0, down = thermal ? spec.lambda_down() : 0.0;
  const double g = scalar_gamma_to_sme(spec.gamma), sg = std::sqrt(g);
  const double dy = sg * (2.0 * p - 1.0) * dt + dw;
  const double m0 = 1.0 - (0.5 * up + 0.125 * g) * dt + 0.5 * sg * dy;
  const double m1 = 1.0 - (0.5 * down + 0.125 * g) * dt - 0.5 * sg * dy;
  const double a0 = m0 * m0 * p + dt * down * (1.0 - p);
  const double a1 = m1 * m1 * (1.0 - p) + dt * up * p;
  const double tr = a0 + a1;
  if (!(tr > 1e-300)) throw InvariantViolation("kraus_step_scalar: vanishing trace denominator (dt too large)");
  return a0 / tr;
}

namespace detail {

inline double scalar_step(const ScalarModelSpec& spec, double p, double dt, double dw, const ScalarOptions& opt,
                          StepDiagnostics& diag) {
  if (opt.scheme == Scheme::kraus) return kraus_step_scalar(spec, p, dt, dw);
  const auto dd = scalar_drift_diffusion(spec, p);
  const double next = euler_step_scalar_raw(p, dd.drift, dd.diffusion, dt, dw);
  if (spec.variant == ScalarVariant::wright_fisher) {
    if (next <= 0.0 || next >= 1.0) {
      if (p > 0.0 && p < 1.0) ++diag.absorptions;
      return next <= 0.0 ? 0.0 : 1.0;
    }
    return next;
  }
  if (opt.clamp && (next < 0.0 || next > 1.0)) {
    ++diag.clamp_events;
    return std::clamp(next, 0.0, 1.0);
  }
  return next;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SME stepping
// ---------------------------------------------------------------------------

/// Precomputed operators of one model for repeated steps.
class SmeStepper {
 public:
  SmeStepper(const ModelSpec& model, Scheme scheme)
      : scheme_(scheme),
        dim_(model.dim()),
        gamma_(model.collapse_rate()),
        eta_(model.efficiency()),
        o_(model.collapse_op().matrix()),
        od_(o_.adjoint()),
        o_sum_(o_ + od_),
        channels_(model.channels()) {
    // K = -i H - 1/2 sum_j L_j^dag L_j - 1/2 G O^dag O
    k_ = model.hamiltonian() * (-kI);
    for (const auto& l : channels_) {
      channels_dag_.push_back(l.adjoint());
      k_.add_scaled(channels_dag_.back() * l, -0.5);
    }
    k_.add_scaled(od_ * o_, -0.5 * gamma_);
    noise_amplitude_ = std::sqrt(eta_ * gamma_);
  }

  Scheme scheme() const noexcept { return scheme_; }
  std::size_t dim() const noexcept { return dim_; }

  ComplexMatrix step(const ComplexMatrix& rho, double dt, double dw, StepDiagnostics& diag) const {
    if (rho.dim() != dim_) throw DimensionMismatch("SME step: state and model dimensions differ");
    ComplexMatrix next = scheme_ == Scheme::euler ? euler(rho, dt, dw) : kraus(rho, dt, dw);
    project(next, diag);
    const double lmin = min_eigenvalue(next);
    diag.min_eigenvalue = std::min(diag.min_eigenvalue, lmin);
    if (lmin < -StepDiagnostics::kPositivityCheck) ++diag.positivity_violations;
    return next;
  }

 private:
  // rho + [K rho + rho K^dag + sum_j L rho L^dag + G O rho O^dag] dt + sqrt(eta G) H[O](rho) dW
  ComplexMatrix euler(const ComplexMatrix& rho, double dt, double dw) const {
    const ComplexMatrix krho = k_ * rho;
    ComplexMatrix drift = krho + krho.adjoint();
    for (std::size_t j = 0; j < channels_.size(); ++j) drift += channels_[j] * rho * channels_dag_[j];
    const ComplexMatrix orho = o_ * rho;
    if (gamma_ > 0.0) drift.add_scaled(orho * od_, gamma_);

    ComplexMatrix next = rho;
    next.add_scaled(drift, dt);
    if (noise_amplitude_ > 0.0) {
      ComplexMatrix innovation = orho + rho * od_;
      innovation.add_scaled(rho, -(o_sum_ * rho).trace());
      next.add_scaled(innovation, noise_amplitude_ * dw);
    }
    return next;
  }

  // [M rho M^dag + dt sum_j L rho L^dag + (1 - eta) G dt O rho O^dag] / tr[...]
  // M = I + K dt + sqrt(eta G) O dY,  dY = sqrt(eta G) tr[(O + O^dag) rho] dt + dW
  ComplexMatrix kraus(const ComplexMatrix& rho, double dt, double dw) const {
    const double dy = noise_amplitude_ * (o_sum_ * rho).trace().real() * dt + dw;
    ComplexMatrix m = ComplexMatrix::identity(dim_);
    m.add_scaled(k_, dt);
    if (noise_amplitude_ > 0.0) m.add_scaled(o_, noise_amplitude_ * dy);
    ComplexMatrix next = m * rho * m.adjoint();
    for (std::size_t j = 0; j < channels_.size(); ++j) next.add_scaled(channels_[j] * rho * channels_dag_[j], dt);
    if (eta_ < 1.0 && gamma_ > 0.0) next.add_scaled(o_ * rho * od_, (1.0 - eta_) * gamma_ * dt);
    const double tr = next.trace().real();
    if (!(tr > 1e-300) || !std::isfinite(tr))
      throw InvariantViolation("kraus_step_sme: vanishing trace denominator (dt too large)");
    next *= 1.0 / tr;
    return next;
  }

  // Sanctioned projection: Hermitize and renormalize the trace.
  static void project(ComplexMatrix& m, StepDiagnostics& diag) {
    if (!m.is_finite()) throw InvariantViolation("SME step produced non-finite entries");
    const double herm = m.hermiticity_error();
    const double trace_err = std::abs(m.trace() - 1.0);
    if (herm > tol::kAbortFactor * tol::kHermitian || trace_err > tol::kAbortFactor * tol::kTrace)
      throw InvariantViolation("SME step broke Hermiticity or trace beyond repair tolerance");
    if (herm > tol::kHermitian || trace_err > tol::kTrace) ++diag.repairs;
    m = hermitian_part(m);
    m *= 1.0 / m.trace().real();
  }

  Scheme scheme_;
  std::size_t dim_;
  double gamma_, eta_, noise_amplitude_ = 0.0;
  ComplexMatrix o_, od_, o_sum_, k_;
  std::vector<ComplexMatrix> channels_, channels_dag_;
};

inline DensityMatrix euler_step_sme(const DensityMatrix& rho, const ModelSpec& model, double dt, double dw) {
  if (rho.dim() != model.dim()) throw DimensionMismatch("euler_step_sme: state and model dimensions differ");
  StepDiagnostics diag;
  return DensityMatrix::assume_valid(SmeStepper(model, Scheme::euler).step(rho.matrix(), dt, dw, diag));
}

inline DensityMatrix kraus_step_sme(const DensityMatrix& rho, const ModelSpec& model, double dt, double dw) {
  if (rho.dim() != model.dim()) throw DimensionMismatch("kraus_step_sme: state and model dimensions differ");
  StepDiagnostics diag;
  return DensityMatrix::assume_valid(SmeStepper(model, Scheme::kraus).step(rho.matrix(), dt, dw, diag));
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

struct TrajectoryRecord {
  GridSpec grid;
  RandomnessSpec randomness;
  Scheme scheme = Scheme::euler;
  std::string model_name;
  std::vector<double> times;
  std::variant<std::vector<double>, std::vector<DensityMatrix>> states;
  StepDiagnostics diagnostics;

  bool is_scalar() const noexcept { return std::holds_alternative<std::vector<double>>(states); }
  std::size_t size() const noexcept { return times.size(); }

  const std::vector<double>& populations() const { return std::get<std::vector<double>>(states); }
  const std::vector<DensityMatrix>& densities() const { return std::get<std::vector<DensityMatrix>>(states); }

  /// p = <+|rho|+>_z (entry (0, 0)) for either representation.
  double population(std::size_t k) const {
    return is_scalar() ? populations()[k] : densities()[k](0, 0).real();
  }
};

/// Bit-level equality of two records (times, states and diagnostics).
inline bool identical(const TrajectoryRecord& a, const TrajectoryRecord& b) {
  if (a.grid != b.grid || !(a.randomness == b.randomness) || a.scheme != b.scheme || a.times != b.times) return false;
  if (a.is_scalar() != b.is_scalar()) return false;
  if (a.is_scalar()) return a.populations() == b.populations();
  const auto &x = a.densities(), &y = b.densities();
  if (x.size() != y.size()) return false;
  for (std::size_t k = 0; k < x.size(); ++k)
    if (!(x[k].matrix() == y[k].matrix())) return false;
  return a.diagnostics.positivity_violations == b.diagnostics.positivity_violations &&
         a.diagnostics.clamp_events == b.diagnostics.clamp_events;
}

/// Runs a scalar model and calls observer(step, t, p) at every step, including step 0.
template <typename Observer>
StepDiagnostics simulate_observed(const ScalarModelSpec& spec, double p0, const GridSpec& grid,
                                  const RandomnessSpec& randomness, const ScalarOptions& options, Observer&& observer) {
  spec.validate();
  grid.validate();
  if (!(p0 >= 0.0 && p0 <= 1.0)) throw InvariantViolation("simulate: initial p outside [0, 1]");
  StepDiagnostics diag;
  NormalStream noise(randomness, Lane::wiener);
  const double sqrt_dt = std::sqrt(grid.dt);
  double p = p0;
  observer(std::uint64_t{0}, 0.0, p);
  for (std::uint64_t k = 0; k < grid.n_steps; ++k) {
    try {
      p = detail::scalar_step(spec, p, grid.dt, sqrt_dt * noise(k), options, diag);
    } catch (const Error& e) {
      throw StepError(k, e.what());
    }
    observer(k + 1, grid.dt * static_cast<double>(k + 1), p);
  }
  return diag;
}

/// Runs a matrix model and calls observer(step, t, rho) at every step, including step 0.
template <typename Observer>
StepDiagnostics simulate_observed(const ModelSpec& model, const DensityMatrix& initial, const GridSpec& grid,
                                  const RandomnessSpec& randomness, Scheme scheme, Observer&& observer) {
  grid.validate();
  if (initial.dim() != model.dim()) throw DimensionMismatch("simulate: initial state and model dimensions differ");
  const SmeStepper stepper(model, scheme);
  StepDiagnostics diag;
  diag.min_eigenvalue = initial.min_eigenvalue();
  NormalStream noise(randomness, Lane::wiener);
  const double sqrt_dt = std::sqrt(grid.dt);
  ComplexMatrix rho = initial.matrix();
  observer(std::uint64_t{0}, 0.0, static_cast<const ComplexMatrix&>(rho));
  for (std::uint64_t k = 0; k < grid.n_steps; ++k) {
    try {
      rho = stepper.step(rho, grid.dt, sqrt_dt * noise(k), diag);
    } catch (const Error& e) {
      throw StepError(k, e.what());
    }
    observer(k + 1, grid.dt * static_cast<double>(k + 1), static_cast<const ComplexMatrix&>(rho));
  }
  return diag;
}

inline TrajectoryRecord simulate(const ScalarModelSpec& spec, double p0, const GridSpec& grid,
                                 const RandomnessSpec& randomness, const ScalarOptions& options = {}) {
  TrajectoryRecord rec;
  rec.grid = grid;
  rec.randomness = randomness;
  rec.scheme = options.scheme;
  rec.model_name = "scalar";
  std::vector<double> states;
  states.reserve(grid.n_records());
  rec.times.reserve(grid.n_records());
  rec.diagnostics = simulate_observed(spec, p0, grid, randomness, options, [&](std::uint64_t k, double t, double p) {
    if (grid.records(k)) {
      rec.times.push_back(t);
      states.push_back(p);
    }
  });
  rec.states = std::move(states);
  return rec;
}

inline TrajectoryRecord simulate(const ModelSpec& model, const DensityMatrix& initial, const GridSpec& grid,
                                 const RandomnessSpec& randomness, Scheme scheme) {
  TrajectoryRecord rec;
  rec.grid = grid;
  rec.randomness = randomness;
  rec.scheme = scheme;
  rec.model_name = model.name();
  std::vector<DensityMatrix> states;
  states.reserve(grid.n_records());
  rec.times.reserve(grid.n_records());
  rec.diagnostics =
      simulate_observed(model, initial, grid, randomness, scheme, [&](std::uint64_t k, double t, const ComplexMatrix& rho) {
        if (grid.records(k)) {
          rec.times.push_back(t);
          states.push_back(DensityMatrix::assume_valid(rho));
        }
      });
  rec.states = std::move(states);
  return rec;
}

/// Trajectory i uses RandomnessSpec{master_seed, i}.
inline std::vector<TrajectoryRecord> simulate_ensemble(const ScalarModelSpec& spec, double p0, const GridSpec& grid,
                                                       std::uint64_t master_seed, std::size_t n_traj,
                                                       const ScalarOptions& options = {},
                                                       unsigned workers = default_workers()) {
  if (n_traj < 1) throw InvariantViolation("simulate_ensemble: n_traj must be >= 1");
  return parallel_map(n_traj, workers, [&](std::size_t i) {
    return simulate(spec, p0, grid, RandomnessSpec{master_seed, i}, options);
  });
}

inline std::vector<TrajectoryRecord> simulate_ensemble(const ModelSpec& model, const DensityMatrix& initial,
                                                       const GridSpec& grid, std::uint64_t master_seed,
                                                       std::size_t n_traj, Scheme scheme,
                                                       unsigned workers = default_workers()) {
  if (n_traj < 1) throw InvariantViolation("simulate_ensemble: n_traj must be >= 1");
  return parallel_map(n_traj, workers, [&](std::size_t i) {
    return simulate(model, initial, grid, RandomnessSpec{master_seed, i}, scheme);
  });
}

// ---------------------------------------------------------------------------
// Scalar qubit pair (p, u)
// ---------------------------------------------------------------------------

struct PhaseTrajectory {
  std::vector<double> times;
  std::vector<double> p;
  std::vector<cplx> u;
  StepDiagnostics diagnostics;
};

/// Pure collapse in the scalar convention: p follows the drift-free form of the population
/// equation and u the coherence equation, both driven by the same Wiener increments.
inline PhaseTrajectory simulate_phase(double p0, cplx u0, double gamma, const GridSpec& grid,
                                      const RandomnessSpec& randomness) {
  grid.validate();
  const QubitState start(p0, u0);
  if (!(gamma >= 0.0)) throw InvariantViolation("simulate_phase: gamma must be >= 0");
  const ScalarModelSpec spec{0.0, 0.5, gamma, ScalarVariant::pure_collapse};
  PhaseTrajectory out;
  out.times.reserve(grid.n_records());
  out.p.reserve(grid.n_records());
  out.u.reserve(grid.n_records());
  NormalStream noise(randomness, Lane::wiener);
  const double sqrt_dt = std::sqrt(grid.dt);
  double p = start.p;
  cplx u = start.u;
  auto record = [&](std::uint64_t k) {
    if (!grid.records(k)) return;
    out.times.push_back(grid.dt * static_cast<double>(k));
    out.p.push_back(p);
    out.u.push_back(u);
  };
  record(0);
  for (std::uint64_t k = 0; k < grid.n_steps; ++k) {
    const double dw = sqrt_dt * noise(k);
    const cplx du = -gamma * u / 8.0 * grid.dt + 0.5 * std::sqrt(gamma) * (2.0 * p - 1.0) * u * dw;
    try {
      p = detail::scalar_step(spec, p, grid.dt, dw, ScalarOptions{}, out.diagnostics);
    } catch (const Error& e) {
      throw StepError(k, e.what());
    }
    u += du;
    if (std::norm(u) > p * (1.0 - p) + tol::kPurity) ++out.diagnostics.purity_violations;
    record(k + 1);
  }
  return out;
}

}  // namespace collapse_lab
