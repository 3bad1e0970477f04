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

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "collapse_lab/models.hpp"
#include "collapse_lab/sde.hpp"

using namespace collapse_lab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("scalar drift and diffusion", "[models]") {
  const ScalarModelSpec thermal{1.0, 0.5, 400.0, ScalarVariant::collapse_thermal};
  auto dd = scalar_drift_diffusion(thermal, 0.5);
  CHECK(dd.drift == 0.0);
  CHECK(dd.diffusion == 5.0);

  dd = scalar_drift_diffusion({0.0, 0.5, 123.0, ScalarVariant::pure_collapse}, 1.0);
  CHECK(dd.drift == 0.0);
  CHECK(dd.diffusion == 0.0);

  dd = scalar_drift_diffusion({0.0, 0.5, 1.0, ScalarVariant::wright_fisher}, 0.5);
  CHECK(dd.drift == 0.0);
  CHECK(dd.diffusion == 0.5);

  dd = scalar_drift_diffusion({2.0, 0.25, 4.0, ScalarVariant::collapse_thermal}, 0.75);
  CHECK_THAT(dd.drift, WithinAbs(-1.0, 1e-15));
  CHECK_THAT(dd.diffusion, WithinAbs(2.0 * 0.1875, 1e-15));

  CHECK_THROWS_AS(scalar_drift_diffusion(thermal, 1.01), InvariantViolation);
  CHECK_THROWS_AS((ScalarModelSpec{-1.0, 0.5, 1.0}.validate()), InvariantViolation);
  CHECK_THROWS_AS((ScalarModelSpec{1.0, 1.5, 1.0}.validate()), InvariantViolation);
  CHECK(thermal.lambda_down() == 0.5);
  CHECK(ScalarModelSpec{2.0, 0.25, 0.0}.lambda_up() == 1.5);
}

TEST_CASE("phase drift and diffusion", "[models]") {
  auto dd = phase_drift_diffusion(0.3, 0.0, 5.0);
  CHECK(dd.drift == cplx(0.0));
  CHECK(dd.diffusion == cplx(0.0));

  dd = phase_drift_diffusion(0.5, 0.4, 8.0);
  CHECK_THAT(dd.drift.real(), WithinAbs(-0.4, 1e-15));
  CHECK(dd.diffusion == cplx(0.0));

  const cplx u(1e-3, -2e-3);
  dd = phase_drift_diffusion(1.0 - 1e-5, u, 16.0);
  CHECK_THAT(std::abs(dd.drift), WithinRel(16.0 * std::abs(u) / 8.0, 1e-12));
  CHECK_THROWS_AS(phase_drift_diffusion(0.5, 0.6, 1.0), InvariantViolation);
}

TEST_CASE("scalar and matrix collapse rates are related by 16 alpha^2", "[models]") {
  CHECK(scalar_gamma_to_sme(400.0) == 100.0);
  CHECK(scalar_gamma_to_sme(400.0, 0.25) == 400.0);
  CHECK(scalar_gamma_to_sme(4.0, 1.0) == 0.25);
  CHECK(sme_gamma_to_scalar(scalar_gamma_to_sme(3.7)) == 3.7);
  CHECK(pure_collapse_model(25.0).scalar_collapse_rate() == 100.0);
  CHECK(to_matrix_model({1.0, 0.3, 40.0}).collapse_rate() == 10.0);
}

TEST_CASE("thermal SME diagonal matches the scalar step", "[models]") {
  const ScalarModelSpec spec{1.3, 0.3, 40.0, ScalarVariant::collapse_thermal};
  const ModelSpec model = to_matrix_model(spec);
  const double dt = 1e-6;
  NormalStream noise({17, 0});
  for (std::uint64_t k = 0; k < 200; ++k) {
    const double p = 0.005 * static_cast<double>(k);
    const double dw = std::sqrt(dt) * noise(k);
    const auto dd = scalar_drift_diffusion(spec, p);
    const double scalar = euler_step_scalar(p, dd.drift, dd.diffusion, dt, dw);
    const auto rho = euler_step_sme(to_density(QubitState(p, 0.0)), model, dt, dw);
    CHECK_THAT(rho(0, 0).real(), WithinAbs(scalar, 1e-13));
    CHECK(std::abs(rho(0, 1)) == 0.0);
    // The Kraus scalar step is the diagonal restriction of the matrix Kraus step.
    const auto kr = kraus_step_sme(to_density(QubitState(p, 0.0)), model, dt, dw);
    CHECK_THAT(kr(0, 0).real(), WithinAbs(kraus_step_scalar(spec, p, dt, dw), 1e-13));
  }
  CHECK_THROWS_AS(to_matrix_model({0.0, 0.5, 1.0, ScalarVariant::wright_fisher}), InvariantViolation);
}

TEST_CASE("thermal qubit model", "[models]") {
  const auto model = thermal_qubit_model(0.5, 0.5, 8.0);
  CHECK(model.channels().size() == 2);
  CHECK(thermal_qubit_model(0.0, 0.0, 8.0).channels().empty());
  CHECK_THROWS_AS(thermal_qubit_model(-0.1, 0.5, 1.0), InvariantViolation);

  // Averaged diagonal: dp/dt = -lambda_up p + lambda_down (1 - p).
  for (auto [up, down] : {std::pair{0.5, 0.5}, std::pair{0.2, 1.8}}) {
    const auto m = thermal_qubit_model(up, down, 8.0);
    const double lambda = up + down, p_eq = down / lambda;
    for (double t : {0.5, 2.0, 10.0}) {
      const auto rho = averaged_me_evolve(m, DensityMatrix::basis(2, 1), t, 1e-3);
      CHECK_THAT(rho(0, 0).real(), WithinAbs(p_eq * (1.0 - std::exp(-lambda * t)), 1e-10));
    }
    const auto late = averaged_me_evolve(m, DensityMatrix::basis(2, 0), 40.0, 1e-2);
    CHECK_THAT(late(0, 0).real(), WithinAbs(p_eq, 1e-10));
  }

  // Diagonal states stay diagonal along a trajectory.
  const auto rec = simulate(model, to_density(QubitState(0.2, 0.0)), GridSpec{1e-3, 5000, 1}, {4, 0}, Scheme::euler);
  double max_u = 0.0;
  for (const auto& rho : rec.densities()) max_u = std::max(max_u, std::abs(rho(0, 1)));
  CHECK(max_u <= 1e-12);
}

TEST_CASE("coherent qubit model", "[models]") {
  const auto free = coherent_qubit_model(1.0, 0.0);
  const GridSpec grid{1e-5, 700000, 1000};
  for (Scheme s : {Scheme::euler, Scheme::kraus}) {
    const auto rec = simulate(free, DensityMatrix::basis(2, 0), grid, {1, 0}, s);
    double err = 0.0;
    for (std::size_t k = 0; k < rec.size(); ++k)
      err = std::max(err, std::abs(rec.population(k) - std::pow(std::cos(rec.times[k] / 2.0), 2)));
    INFO("scheme " << to_string(s));
    // Euler's rotation error grows linearly in t dt; the Kraus map is exact to this order.
    CHECK(err <= (s == Scheme::kraus ? 1e-6 : 2.5 * grid.dt));
  }

  CHECK(coherent_qubit_model(0.0, 3.0).hamiltonian().max_abs() == 0.0);

  const auto model = coherent_qubit_model(1.0, 5.0);
  const auto rec = simulate(model, DensityMatrix::basis(2, 0), GridSpec{1e-4, 20000, 1}, {8, 0}, Scheme::euler);
  double max_im = 0.0;
  for (const auto& rho : rec.densities()) max_im = std::max(max_im, std::abs(rho(0, 1).imag()));
  CHECK(max_im <= 1e-12);
}

TEST_CASE("transmon preset", "[models]") {
  const TransmonParameters p;
  CHECK_THAT(p.omega, WithinRel(2.0 * std::numbers::pi / 5.2, 1e-15));
  CHECK_THAT(1.0 / p.gamma_1, WithinRel(765.3, 1e-12));
  CHECK_THAT(1.0 / p.gamma_phi, WithinRel(17.9, 1e-12));
  CHECK_THAT(1.0 / p.gamma_d, WithinRel(0.9, 1e-12));
  CHECK(p.eta_d == 0.34);

  const auto model = transmon_preset();
  CHECK(model.channels().size() == 3);
  CHECK(model.efficiency() == 0.34);
  CHECK_THAT(model.collapse_rate(), WithinRel(p.gamma_d / 2.0, 1e-15));
  CHECK(max_abs_diff(model.hamiltonian(), p.omega * pauli_y()) == 0.0);

  // Collapse term G D[sigma_z] equals the measurement channel D[sqrt(Gamma_d / 2) sigma_z].
  const auto rho = to_density(QubitState(0.3, cplx(0.2, 0.1)));
  CHECK(max_abs_diff(model.collapse_rate() * lindblad_dissipator(pauli_z(), rho),
                     lindblad_dissipator(std::sqrt(p.gamma_d / 2.0) * pauli_z(), rho)) < 1e-15);

  // Kraus trajectories stay valid.
  const auto rec = simulate(model, DensityMatrix::basis(2, 0), GridSpec{1e-3, 100000, 100}, {2, 0}, Scheme::kraus);
  CHECK(rec.diagnostics.min_eigenvalue >= -1e-12);
  CHECK(rec.diagnostics.positivity_violations == 0);
  CHECK(rec.diagnostics.repairs == 0);

  // With every rate but the drive switched off, H = Omega sigma_y turns the Bloch vector at 2 Omega,
  // so the population p = cos^2(Omega t) repeats every pi / Omega = 5.2 / 2 us.
  TransmonParameters drive_only;
  drive_only.gamma_1 = drive_only.gamma_phi = drive_only.gamma_d = 0.0;
  const auto rabi = transmon_preset(drive_only);
  const double half = 5.2 / 4.0, full = 5.2 / 2.0;
  CHECK_THAT(averaged_me_evolve(rabi, DensityMatrix::basis(2, 0), half, 1e-3)(0, 0).real(), WithinAbs(0.0, 1e-10));
  CHECK_THAT(averaged_me_evolve(rabi, DensityMatrix::basis(2, 0), full, 1e-3)(0, 0).real(), WithinAbs(1.0, 1e-10));
  CHECK_THAT(averaged_me_evolve(rabi, DensityMatrix::basis(2, 0), 5.2, 1e-3)(0, 0).real(), WithinAbs(1.0, 1e-10));
}

TEST_CASE("averaged master equation", "[models]") {
  const double g = 3.0;
  const auto model = pure_collapse_model(g);
  const DensityMatrix plus_x(ComplexMatrix{{0.5, 0.5}, {0.5, 0.5}});
  for (double t : {0.1, 1.0, 3.0}) {
    const auto rho = averaged_me_evolve(model, plus_x, t, 1e-3);
    // Rate G (nu_+ - nu_-)^2 / 2 with nu = +-1/2.
    CHECK_THAT(rho(0, 1).real(), WithinAbs(0.5 * std::exp(-g * t / 2.0), 1e-11));
    CHECK(rho(0, 0).real() == 0.5);
  }

  const ModelSpec still("still", ComplexMatrix(2), {}, CollapseOperator(pauli_z()), 0.0);
  const auto rho0 = to_density(QubitState(0.3, cplx(0.1, 0.3)));
  CHECK(max_abs_diff(averaged_me_evolve(still, rho0, 5.0, 0.01).matrix(), rho0.matrix()) < 1e-15);
  CHECK_THROWS_AS(averaged_me_evolve(pure_collapse_model(1000.0), rho0, 1.0, 1e-3), InvariantViolation);
  CHECK_THROWS_AS(averaged_me_evolve(model, DensityMatrix::maximally_mixed(3), 1.0, 1e-3), DimensionMismatch);
}

TEST_CASE("Wright-Fisher absorbs, collapse does not", "[models]") {
  const GridSpec grid{1e-4, 100000, 100000};
  const auto wf = simulate_ensemble({0.0, 0.5, 1.0, ScalarVariant::wright_fisher}, 0.5, grid, 12, 200);
  std::size_t absorbed = 0;
  for (const auto& r : wf) {
    const double p = r.populations().back();
    if (p == 0.0 || p == 1.0) ++absorbed;
  }
  CHECK(absorbed >= 190);

  // Sticky boundary.
  const auto stuck = simulate({0.0, 0.5, 1.0, ScalarVariant::wright_fisher}, 1.0, GridSpec{1e-3, 1000, 1}, {1, 0});
  for (double p : stuck.populations()) CHECK(p == 1.0);

  ScalarOptions raw;
  raw.clamp = false;
  const auto co = simulate_ensemble({0.0, 0.5, 1.0, ScalarVariant::collapse_thermal}, 0.5, GridSpec{1e-4, 100000, 1000},
                                    12, 50, raw);
  std::size_t hits = 0;
  for (const auto& r : co)
    for (double p : r.populations()) hits += (p == 0.0 || p == 1.0);
  CHECK(hits == 0);
}

TEST_CASE("model validation", "[models]") {
  CHECK_THROWS_AS(ModelSpec("bad", ComplexMatrix(3), {}, CollapseOperator(pauli_z()), 1.0), DimensionMismatch);
  CHECK_THROWS_AS(ModelSpec("bad", sigma_plus(), {}, CollapseOperator(pauli_z()), 1.0), InvariantViolation);
  CHECK_THROWS_AS(ModelSpec("bad", ComplexMatrix(2), {ComplexMatrix(3)}, CollapseOperator(pauli_z()), 1.0),
                  DimensionMismatch);
  CHECK_THROWS_AS(ModelSpec("bad", ComplexMatrix(2), {}, CollapseOperator(pauli_z()), -1.0), InvariantViolation);
  CHECK_THROWS_AS(ModelSpec("bad", ComplexMatrix(2), {}, CollapseOperator(pauli_z()), 1.0, 0.0), InvariantViolation);
}
