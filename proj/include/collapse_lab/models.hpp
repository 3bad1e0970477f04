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

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "collapse_lab/core.hpp"

namespace collapse_lab {

// ---------------------------------------------------------------------------
// Convention mapping between the scalar equations and the matrix SME.
//
// The scalar population equation is written as dp = ... + sqrt(g) p(1-p) dW and
// the phase equation with drift -g u / 8. Expanding the SME
//   d rho = L(rho) dt + G D[O](rho) dt + sqrt(G) H[O](rho) dW
// with O = a * sigma_z gives a population noise 4 a sqrt(G) p(1-p) and a coherence
// drift -2 a^2 G u. Both match the scalar form exactly when
//   G = g / (16 a^2),
// i.e. G = g for O = sigma_z / 4 and G = g / 4 for O = sigma_z / 2.
// Every cross-check between the two code paths goes through these two functions.
// ---------------------------------------------------------------------------

/// SME rate G equivalent to scalar rate g for O = alpha * sigma_z.
inline double scalar_gamma_to_sme(double scalar_gamma, double alpha = 0.5) {
  return scalar_gamma / (16.0 * alpha * alpha);
}

inline double sme_gamma_to_scalar(double sme_gamma, double alpha = 0.5) { return sme_gamma * 16.0 * alpha * alpha; }

// ---------------------------------------------------------------------------
// Matrix models
// ---------------------------------------------------------------------------

/// d rho = [-i[H, rho] + sum_j D[L_j] rho + G D[O] rho] dt + sqrt(eta G) H[O] rho dW
class ModelSpec {
 public:
  ModelSpec() = default;

  ModelSpec(std::string name, ComplexMatrix hamiltonian, std::vector<ComplexMatrix> channels,
            CollapseOperator collapse_op, double collapse_rate, double efficiency = 1.0)
      : name_(std::move(name)),
        hamiltonian_(std::move(hamiltonian)),
        channels_(std::move(channels)),
        collapse_op_(std::move(collapse_op)),
        collapse_rate_(collapse_rate),
        efficiency_(efficiency) {
    const std::size_t d = collapse_op_.dim();
    if (hamiltonian_.dim() != d) throw DimensionMismatch("ModelSpec: Hamiltonian dimension differs from O");
    if (hamiltonian_.hermiticity_error() > tol::kHermitian * std::max(1.0, hamiltonian_.max_abs()))
      throw InvariantViolation("ModelSpec: Hamiltonian must be Hermitian");
    for (const auto& l : channels_)
      if (l.dim() != d) throw DimensionMismatch("ModelSpec: Lindblad operator dimension differs from O");
    if (!(collapse_rate_ >= 0.0) || !std::isfinite(collapse_rate_))
      throw InvariantViolation("ModelSpec: collapse rate must be >= 0");
    if (!(efficiency_ > 0.0 && efficiency_ <= 1.0)) throw InvariantViolation("ModelSpec: efficiency must lie in (0, 1]");
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t dim() const noexcept { return collapse_op_.dim(); }
  const ComplexMatrix& hamiltonian() const noexcept { return hamiltonian_; }
  const std::vector<ComplexMatrix>& channels() const noexcept { return channels_; }
  const CollapseOperator& collapse_op() const noexcept { return collapse_op_; }
  double collapse_rate() const noexcept { return collapse_rate_; }
  double efficiency() const noexcept { return efficiency_; }

  /// Upper bound on the fastest rate of the averaged dynamics, used for step-size checks.
  double rate_scale() const {
    double s = collapse_rate_ * std::norm(collapse_op_.matrix().frobenius_norm()) + hamiltonian_.frobenius_norm();
    for (const auto& l : channels_) s += std::norm(l.frobenius_norm());
    return s;
  }

  /// Collapse strength expressed in the scalar convention, 4 G (nu_max - nu_min)^2.
  double scalar_collapse_rate() const {
    const auto& nu = collapse_op_.eigenvalues();
    const double spread = nu.back() - nu.front();
    return 4.0 * collapse_rate_ * spread * spread;
  }

 private:
  std::string name_;
  ComplexMatrix hamiltonian_;
  std::vector<ComplexMatrix> channels_;
  CollapseOperator collapse_op_;
  double collapse_rate_ = 0.0;
  double efficiency_ = 1.0;
};

/// L(rho) = -i[H, rho] + sum_j D[L_j](rho)
inline ComplexMatrix apply_liouvillian(const ModelSpec& model, const ComplexMatrix& rho) {
  ComplexMatrix r = commutator(model.hamiltonian(), rho);
  r *= -kI;
  for (const auto& l : model.channels()) r += lindblad_dissipator(l, rho);
  return r;
}

/// Noise-averaged generator L(rho) + G D[O](rho).
inline ComplexMatrix averaged_generator(const ModelSpec& model, const ComplexMatrix& rho) {
  ComplexMatrix r = apply_liouvillian(model, rho);
  if (model.collapse_rate() > 0.0) r.add_scaled(lindblad_dissipator(model.collapse_op().matrix(), rho), model.collapse_rate());
  return r;
}

/// Collapse only, O = sigma_z / 2.
inline ModelSpec pure_collapse_model(double gamma) {
  return ModelSpec("pure_collapse", ComplexMatrix(2), {}, CollapseOperator(0.5 * pauli_z()), gamma);
}

/// Qubit relaxing towards p_eq = lambda_down / (lambda_up + lambda_down) under collapse of
/// O = sigma_z / 2. Index 0 (|+>_z) is the ground state: lambda_up excites |+> -> |->
/// (operator |-><+|), lambda_down relaxes |-> -> |+> (operator |+><-|).
inline ModelSpec thermal_qubit_model(double lambda_up, double lambda_down, double gamma) {
  if (lambda_up < 0.0 || lambda_down < 0.0) throw InvariantViolation("thermal_qubit_model: rates must be >= 0");
  std::vector<ComplexMatrix> channels;
  if (lambda_up > 0.0) channels.push_back(std::sqrt(lambda_up) * sigma_minus());
  if (lambda_down > 0.0) channels.push_back(std::sqrt(lambda_down) * sigma_plus());
  return ModelSpec("thermal", ComplexMatrix(2), std::move(channels), CollapseOperator(0.5 * pauli_z()), gamma);
}

/// Rabi drive H = (omega / 2) sigma_y against collapse of O = sigma_z / 2.
inline ModelSpec coherent_qubit_model(double omega, double gamma) {
  return ModelSpec("coherent", (0.5 * omega) * pauli_y(), {}, CollapseOperator(0.5 * pauli_z()), gamma);
}

/// Continuously monitored transmon (times in microseconds, rates in 1/us).
struct TransmonParameters {
  double omega = 2.0 * std::numbers::pi / 5.2;  // Rabi drive, H = omega * sigma_y
  double gamma_1 = 1.0 / 765.3;                 // energy relaxation
  double gamma_phi = 1.0 / 17.9;                // extra dephasing
  double gamma_d = 1.0 / 0.9;                   // measurement-induced dephasing
  double eta_d = 0.34;                          // detection efficiency
};

/// The measurement channel L_w = sqrt(Gamma_d / 2) sigma_z is carried by the collapse
/// term (O = sigma_z, G = Gamma_d / 2, eta = eta_d), whose G D[O] is exactly D[L_w];
/// the stochastic term is then sqrt(eta_d Gamma_d / 2) H[sigma_z] dW. Reading the
/// rate outside the square root instead would give G = (Gamma_d / 2)^2.
inline ModelSpec transmon_preset(const TransmonParameters& p = {}) {
  std::vector<ComplexMatrix> channels;
  channels.push_back(std::sqrt(p.gamma_1 / 2.0) * sigma_minus());
  channels.push_back((kI * std::sqrt(p.gamma_1 / 2.0)) * sigma_minus());
  channels.push_back(std::sqrt(p.gamma_phi / 2.0) * pauli_z());
  return ModelSpec("transmon", p.omega * pauli_y(), std::move(channels), CollapseOperator(pauli_z()), p.gamma_d / 2.0,
                   p.eta_d);
}

// ---------------------------------------------------------------------------
// Scalar models
// ---------------------------------------------------------------------------

enum class ScalarVariant { collapse_thermal, pure_collapse, wright_fisher };

struct ScalarModelSpec {
  double lambda = 0.0;  // relaxation rate
  double p_eq = 0.5;
  double gamma = 0.0;   // collapse rate, scalar convention
  ScalarVariant variant = ScalarVariant::collapse_thermal;

  void validate() const {
    if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw InvariantViolation("ScalarModelSpec: rates must be >= 0");
    if (!(p_eq >= 0.0 && p_eq <= 1.0)) throw InvariantViolation("ScalarModelSpec: p_eq outside [0, 1]");
  }

  double lambda_down() const noexcept { return lambda * p_eq; }
  double lambda_up() const noexcept { return lambda * (1.0 - p_eq); }
};

struct DriftDiffusion {
  double drift = 0.0;
  double diffusion = 0.0;
};

inline DriftDiffusion scalar_drift_diffusion(const ScalarModelSpec& spec, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvariantViolation("scalar_drift_diffusion: p outside [0, 1]");
  const double q = p * (1.0 - p);
  switch (spec.variant) {
    case ScalarVariant::collapse_thermal:
      return {spec.lambda * (spec.p_eq - p), std::sqrt(spec.gamma) * q};
    case ScalarVariant::pure_collapse:
      return {0.0, std::sqrt(spec.gamma) * q};
    case ScalarVariant::wright_fisher:
      return {0.0, std::sqrt(spec.gamma * q)};
  }
  return {};
}

struct ComplexDriftDiffusion {
  cplx drift{};
  cplx diffusion{};
};

/// Coherence equation of pure collapse: du = -g u / 8 dt + (sqrt(g) / 2)(2p - 1) u dW.
inline ComplexDriftDiffusion phase_drift_diffusion(double p, cplx u, double gamma) {
  if (!(p >= -tol::kPurity && p <= 1.0 + tol::kPurity)) throw InvariantViolation("phase_drift_diffusion: p outside [0, 1]");
  if (std::norm(u) > p * (1.0 - p) + tol::kPurity)
    throw InvariantViolation("phase_drift_diffusion: |u|^2 exceeds p(1-p)");
  return {-gamma * u / 8.0, 0.5 * std::sqrt(gamma) * (2.0 * p - 1.0) * u};
}

/// Matrix model carrying the same population physics as a scalar spec (O = sigma_z / 2).
inline ModelSpec to_matrix_model(const ScalarModelSpec& spec) {
  spec.validate();
  const double g = scalar_gamma_to_sme(spec.gamma);
  switch (spec.variant) {
    case ScalarVariant::collapse_thermal:
      return thermal_qubit_model(spec.lambda_up(), spec.lambda_down(), g);
    case ScalarVariant::pure_collapse:
      return pure_collapse_model(g);
    case ScalarVariant::wright_fisher:
      break;
  }
  throw InvariantViolation("to_matrix_model: the Wright-Fisher process has no quantum counterpart");
}

// ---------------------------------------------------------------------------
// Averaged master equation
// ---------------------------------------------------------------------------

/// RK4 integration of d rho / dt = L(rho) + G D[O](rho) from 0 to t.
inline DensityMatrix averaged_me_evolve(const ModelSpec& model, const DensityMatrix& rho0, double t, double dt) {
  if (rho0.dim() != model.dim()) throw DimensionMismatch("averaged_me_evolve: state and model dimensions differ");
  if (!(dt > 0.0) || !(t >= 0.0)) throw InvariantViolation("averaged_me_evolve: need dt > 0 and t >= 0");
  if (dt * model.rate_scale() > 0.1)
    throw InvariantViolation("averaged_me_evolve: step too large for the model rates (dt * rate > 0.1)");

  ComplexMatrix rho = rho0.matrix();
  const auto n_steps = static_cast<long>(std::ceil(t / dt - 1e-9));
  const double h = n_steps > 0 ? t / static_cast<double>(n_steps) : 0.0;
  for (long k = 0; k < n_steps; ++k) {
    const ComplexMatrix k1 = averaged_generator(model, rho);
    const ComplexMatrix k2 = averaged_generator(model, rho + (0.5 * h) * k1);
    const ComplexMatrix k3 = averaged_generator(model, rho + (0.5 * h) * k2);
    const ComplexMatrix k4 = averaged_generator(model, rho + h * k3);
    rho.add_scaled(k1, h / 6.0).add_scaled(k2, h / 3.0).add_scaled(k3, h / 3.0).add_scaled(k4, h / 6.0);
  }
  if (std::abs(rho.trace() - 1.0) > tol::kTrace) throw InvariantViolation("averaged_me_evolve: trace drifted");
  return DensityMatrix::assume_valid(hermitian_part(rho));
}

}  // namespace collapse_lab
