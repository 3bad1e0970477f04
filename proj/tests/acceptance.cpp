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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion followed by
// indented diagnostics; exits non-zero when any criterion fails. Criterion numbers
// given on the command line restrict the run to those criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "collapse_lab/collapse_lab.hpp"

using namespace collapse_lab;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    if (!ok) pass = false;
  }
  void note(const std::string& what) { notes.push_back("     " + what); }
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

unsigned workers() { return default_workers(); }

// 1. Born rule ----------------------------------------------------------------

Outcome born_rule() {
  Outcome out;
  const ScalarModelSpec spec{0.0, 0.5, 10.0, ScalarVariant::pure_collapse};
  const auto grid = GridSpec::covering(8.0, 1e-3, 8000);
  for (double p0 : {0.3, 0.7}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ens = simulate_ensemble(spec, p0, grid, 101, 10000, {}, workers());
    const auto b = born_statistics(ens);
    const double elapsed = seconds_since(t0);
    out.require(std::abs(b.fraction_up - p0) <= 0.02 && elapsed <= 60.0,
                fmt("p0 = %.1f: fraction collapsing to 1 = %.4f +- %.4f (target %.1f +- 0.02, unresolved %zu), %.1f s",
                    p0, b.fraction_up, b.stderr_, p0, b.n_unresolved, elapsed));
  }
  return out;
}

// 2. Collapse and decoherence rates --------------------------------------------

Outcome collapse_rates() {
  Outcome out;
  const double gamma = 4.0;
  const auto grid = GridSpec::covering(6.0, 1e-3, 50);

  const auto ens = simulate_ensemble({0.0, 0.5, gamma, ScalarVariant::pure_collapse}, 0.5, grid, 202, 2000, {}, workers());
  const auto [mean, se] =
      ensemble_profile(ens, [](const TrajectoryRecord& r, std::size_t k) { return collapse_distance(r.population(k)); });
  const auto& times = ens.front().times;
  const auto window = decay_window(times, mean, se, 0.0);
  const auto fit = fit_exponential_decay(times, mean, window);
  out.require(std::abs(fit.rate / (gamma / 8.0) - 1.0) <= 0.05,
              fmt("E[Delta_t] decay rate %.4f vs gamma/8 = %.4f (window [%.2f, %.2f], R^2 %.5f)", fit.rate, gamma / 8.0,
                  window.first, window.second, fit.r_squared));

  const auto phases = parallel_map(2000, workers(), [&](std::size_t i) {
    return simulate_phase(0.5, cplx(0.5, 0.0), gamma, grid, {203, i});
  });
  std::vector<stats::RunningStats> re(phases.front().times.size()), im(re.size());
  for (const auto& ph : phases)
    for (std::size_t k = 0; k < re.size(); ++k) {
      re[k].add(ph.u[k].real());
      im[k].add(ph.u[k].imag());
    }
  std::vector<double> modulus(re.size()), modulus_se(re.size());
  for (std::size_t k = 0; k < re.size(); ++k) {
    modulus[k] = std::hypot(re[k].mean(), im[k].mean());
    modulus_se[k] = std::hypot(re[k].stderr_mean(), im[k].stderr_mean());
  }
  const auto& pt = phases.front().times;
  const auto uw = decay_window(pt, modulus, modulus_se, 0.0);
  const auto ufit = fit_exponential_decay(pt, modulus, uw);
  out.require(std::abs(ufit.rate / (gamma / 8.0) - 1.0) <= 0.05,
              fmt("|E[u_t]| decay rate %.4f vs gamma/8 = %.4f (window [%.2f, %.2f])", ufit.rate, gamma / 8.0, uw.first,
                  uw.second));
  std::uint64_t purity = 0;
  for (const auto& ph : phases) purity += ph.diagnostics.purity_violations;
  out.note(fmt("|u|^2 > p(1-p) steps: %llu", static_cast<unsigned long long>(purity)));
  return out;
}

// 3. Thermal jump rates --------------------------------------------------------

Outcome thermal_rates() {
  Outcome out;
  const double lambda = 1.0, p_eq = 0.5, gamma = 400.0;
  const ScalarModelSpec scalar{lambda, p_eq, gamma, ScalarVariant::collapse_thermal};
  const auto model = to_matrix_model(scalar);
  const auto theory = theoretical_rates(model);
  // Eigen index 0 of sigma_z / 2 is |->, index 1 is |+>: 0 -> 1 relaxes at lambda_down, 1 -> 0 excites at lambda_up.
  out.require(std::abs(theory(1, 0) - scalar.lambda_down()) <= 1e-12 && std::abs(theory(0, 1) - scalar.lambda_up()) <= 1e-12,
              fmt("theoretical rates (%.15g, %.15g) equal (lambda p_eq, lambda (1 - p_eq)) = (%.15g, %.15g)",
                  theory(1, 0), theory(0, 1), scalar.lambda_down(), scalar.lambda_up()));

  StepDiagnostics diag;
  const auto grid = GridSpec::covering(2000.0, 5e-4);
  const auto s = stream_jump_statistics(model, DensityMatrix::basis(2, 0), grid, {301, 0}, Scheme::kraus,
                                        kDefaultHysteresis, &diag);
  const auto emp = empirical_rates(s);
  for (auto [i, j] : {std::pair{1, 0}, std::pair{0, 1}}) {
    const double m = emp.estimate(i, j);
    out.require(std::abs(m / 0.5 - 1.0) <= 0.10,
                fmt("M^(%d <- %d) = %.4f [%.4f, %.4f] from %llu jumps (target 0.5 +- 10%%)", i, j, m, emp.ci_low(i, j),
                    emp.ci_high(i, j), static_cast<unsigned long long>(s.count(i, j))));
  }
  const auto dwell = dwell_time_test(s, theory);
  out.require(dwell.pass, fmt("dwell-time KS: worst D = %.4f vs 5%% critical %.4f", dwell.estimate, dwell.expected));
  out.note(fmt("labeled time %.1f of %.1f, min eigenvalue %.3g", s.occupation[0] + s.occupation[1], s.total_time,
               diag.min_eigenvalue));
  return out;
}

// 4. Zeno scaling --------------------------------------------------------------

Outcome zeno_scaling() {
  Outcome out;
  const double omega = 1.0;
  struct Point {
    double gamma, horizon;
  };
  std::vector<double> pooled;
  for (const Point& pt : {Point{25.0, 25000.0}, Point{100.0, 60000.0}}) {
    const auto model = coherent_qubit_model(omega, pt.gamma);
    const double expected = omega * omega / pt.gamma;
    const auto theory = theoretical_rates(model);
    out.require(std::abs(theory(1, 0) / expected - 1.0) <= 1e-12 && std::abs(theory(0, 1) / expected - 1.0) <= 1e-12,
                fmt("gamma = %g: theoretical rate %.6g = omega^2 / gamma", pt.gamma, theory(1, 0)));
    const double dt = 0.05 / pt.gamma;
    const auto s =
        stream_jump_statistics(model, DensityMatrix::basis(2, 0), GridSpec::covering(pt.horizon, dt), {400, 0}, Scheme::kraus);
    const auto emp = empirical_rates(s);
    out.require(s.total_jumps() >= 150, fmt("gamma = %g: %llu jumps over T = %g (>= 150)", pt.gamma,
                                            static_cast<unsigned long long>(s.total_jumps()), pt.horizon));
    for (auto [i, j] : {std::pair{1, 0}, std::pair{0, 1}})
      out.require(std::abs(emp.estimate(i, j) / expected - 1.0) <= 0.20,
                  fmt("gamma = %g: M^(%d <- %d) = %.5f vs omega^2 / gamma = %.5f (20%%)", pt.gamma, i, j,
                      emp.estimate(i, j), expected));
    pooled.push_back(static_cast<double>(s.total_jumps()) / (s.occupation[0] + s.occupation[1]));
  }
  const double ratio = pooled[0] / pooled[1];
  out.require(std::abs(ratio / 4.0 - 1.0) <= 0.15, fmt("rate ratio gamma 25 / gamma 100 = %.3f (4 +- 15%%)", ratio));
  return out;
}

// 5. Spike law -----------------------------------------------------------------

Outcome spike_law() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const SpikeLaw law{1.0, 0.5};
  const SpikeThresholds th{0.02, 0.01};
  const auto grid = GridSpec::covering(1000.0, 5e-4);
  const ScalarOptions opt{true, Scheme::kraus};
  const auto d = stream_spikes({1.0, 0.5, 400.0, ScalarVariant::collapse_thermal}, 0.0, grid, {500, 0}, th, 100.0, opt);

  const auto n = count_spikes(d.events, 0.1);
  out.require(n >= 4275 && n <= 4725, fmt("spikes with height >= 0.1: %zu (target [4275, 4725])", n));
  out.note(fmt("completed jumps: %zu (limit law %.0f)", d.events.size() - count_spikes(d.events, 0.0),
               law.expected(d.exposure, 1.0, 1.5)));

  const std::vector<double> hs{0.05, 0.07, 0.1, 0.15, 0.2, 0.3, 0.5};
  const auto surv = spike_survival(d.events, hs, d.horizon);
  const auto fit = survival_power_law(surv);
  out.require(std::abs(fit.slope + 1.0) <= 0.1,
              fmt("log-log survival slope %.4f +- %.4f (target -1 +- 0.1)", fit.slope, fit.slope_stderr));

  const auto chi = poisson_count_test(d, law, SpikePartition{10, {0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5}});
  out.require(chi.pass, fmt("Poisson count chi-square p = %.4f, lag-1 window correlation z = %.3f",
                            chi.details["chi_square"]["p_value"].get<double>(),
                            chi.details.contains("window_lag1_correlation")
                                ? chi.details["window_lag1_correlation"]["z_score"].get<double>()
                                : 0.0));

  const auto d100 = stream_spikes({1.0, 0.5, 100.0, ScalarVariant::collapse_thermal}, 0.0, grid, {501, 0}, th, 0.0, opt);
  const std::vector<double> h02{0.2};
  const auto s400 = spike_survival(d.events, h02, d.horizon);
  const auto s100 = spike_survival(d100.events, h02, d100.horizon);
  const double diff = s400.rate[0] - s100.rate[0];
  const double err = std::hypot(s400.rate_stderr[0], s100.rate_stderr[0]);
  out.require(std::abs(diff) <= 1.96 * err, fmt("S(0.2): gamma 400 %.4f, gamma 100 %.4f, difference %.2f sigma (<= 1.96)",
                                                s400.rate[0], s100.rate[0], diff / err));
  const double elapsed = seconds_since(t0);
  out.require(elapsed <= 300.0, fmt("runtime %.1f s (<= 300 s)", elapsed));

  // Diagnostic only: the same run on a finer grid, where fewer short excursions fall between samples.
  const auto fine = stream_spikes({1.0, 0.5, 400.0, ScalarVariant::collapse_thermal}, 0.0,
                                  GridSpec::covering(1000.0, 7.8125e-6), {500, 0}, th, 100.0, opt);
  const auto fine_chi = poisson_count_test(fine, law, SpikePartition{10, {0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5}});
  out.note(fmt("dt = 7.8125e-6: spikes >= 0.1 = %zu, Poisson chi-square p = %.4f", count_spikes(fine.events, 0.1),
               fine_chi.details["chi_square"]["p_value"].get<double>()));
  return out;
}

// 6. Jump completion probability -----------------------------------------------

Outcome completion() {
  Outcome out;
  // delta << epsilon and gamma delta >> lambda: the regime of the limit law.
  const SpikeThresholds th{0.02, 1e-3};
  const double gamma = 1e4;
  const auto d = stream_spikes({1.0, 0.5, gamma, ScalarVariant::collapse_thermal}, 0.0, GridSpec::covering(400.0, 1e-6),
                               {600, 0}, th, 0.0, ScalarOptions{true, Scheme::kraus});
  for (double eps : {0.02, 0.1}) {
    std::vector<SpikeEvent> reached;
    for (const auto& e : d.events)
      if (e.law_height() >= eps) reached.push_back(e);
    const auto c = jump_completion_probability(reached);
    const double sigma = std::sqrt(eps * (1.0 - eps) / static_cast<double>(c.n_excursions));
    out.require(std::abs(c.probability - eps) <= 3.0 * sigma,
                fmt("eps = %.2f: P[complete] = %.5f from %zu excursions (%.2f sigma)", eps, c.probability,
                    c.n_excursions, (c.probability - eps) / sigma));
  }
  out.note(fmt("gamma = %g, delta = %g, dt = 1e-6, T = 400", gamma, th.delta));
  return out;
}

// 7. Hidden-Markov equivalence -------------------------------------------------

Outcome hmm_equivalence() {
  Outcome out;
  EquivalenceOptions opt;
  opt.dt = 5e-5;
  opt.workers = workers();
  const auto rep = filtered_law_equivalence(1.0, 0.5, 400.0, 2000, opt);
  for (const auto& row : rep.details["marginal_ks"])
    out.require(row["ks_statistic"].get<double>() <= opt.ks_max,
                fmt("t = %g: KS %.4f (<= %.2f), p = %.3f", row["t"].get<double>(), row["ks_statistic"].get<double>(),
                    opt.ks_max, row["p_value"].get<double>()));
  const auto& h = rep.details["spike_heights"];
  const bool chi_ok = !h["p_value"].is_null() && h["p_value"].get<double>() >= opt.alpha;
  out.require(chi_ok, fmt("spike heights two-sample chi-square %.2f on %.0f dof, p = %.4f",
                          h.value("chi_square", 0.0), h.value("dof", 0.0), h["p_value"].is_null() ? 0.0 : h["p_value"].get<double>()));
  out.note("filtered counts " + h["filtered"].dump());
  out.note("direct counts   " + h["direct"].dump());

  EquivalenceOptions bad = opt;
  bad.direct_gamma_factor = 0.25;
  bad.checkpoints = {1.0, 5.0};
  bad.dt = 1e-4;
  const auto neg = filtered_law_equivalence(1.0, 0.5, 400.0, 1000, bad);
  out.require(!neg.pass, fmt("mismatched gamma (x0.25) rejected: worst KS %.4f", neg.estimate));
  return out;
}

// 8. Smoothing removes spikes --------------------------------------------------

Outcome smoothing() {
  Outcome out;
  const FilterParams fp{1.0, 0.5, 400.0, 0.5};
  const double dt = 1e-4;
  const auto run = run_hmm(fp, 500.0, dt, {800, 0}, true);
  std::vector<double> t(run.filtered.size());
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = dt * static_cast<double>(k);
  const auto nf = count_spikes(detect_spikes(t, run.filtered).events, 0.3);
  const auto nfb = count_spikes(detect_spikes(t, run.smoothed).events, 0.3);
  out.require(nf > 0 && static_cast<double>(nfb) <= 0.1 * static_cast<double>(nf),
              fmt("spikes >= 0.3: filtered %zu, smoothed %zu (<= 10%%)", nf, nfb));
  return out;
}

// 9. Scheme positivity -----------------------------------------------------------

Outcome positivity() {
  Outcome out;
  const auto model = transmon_preset();
  const GridSpec grid{1e-3, 1000000, 1000000};
  const auto rho0 = DensityMatrix::basis(2, 0);
  const auto kraus = simulate_observed(model, rho0, grid, {900, 0}, Scheme::kraus, [](std::uint64_t, double, const ComplexMatrix&) {});
  out.require(kraus.min_eigenvalue >= -1e-12 && kraus.repairs == 0,
              fmt("Kraus: min eigenvalue %.3g, repairs %llu, violations %llu", kraus.min_eigenvalue,
                  static_cast<unsigned long long>(kraus.repairs),
                  static_cast<unsigned long long>(kraus.positivity_violations)));
  try {
    const auto euler =
        simulate_observed(model, rho0, grid, {900, 0}, Scheme::euler, [](std::uint64_t, double, const ComplexMatrix&) {});
    out.note(fmt("Euler (diagnostic): positivity violations %llu, min eigenvalue %.3g%s",
                 static_cast<unsigned long long>(euler.positivity_violations), euler.min_eigenvalue,
                 euler.positivity_violations >= 1 ? "" : " (expected >= 1)"));
  } catch (const StepError& e) {
    out.note(std::string("Euler (diagnostic) aborted: ") + e.what());
  }
  return out;
}

// 10. Averaged master equation --------------------------------------------------

Outcome averaged_me() {
  Outcome out;
  const auto model = coherent_qubit_model(1.0, 1.0);
  const auto rho0 = DensityMatrix::basis(2, 0);
  const auto grid = GridSpec::covering(2.0, 1e-3, 2000);
  const auto ens = simulate_ensemble(model, rho0, grid, 1000, 2000, Scheme::kraus, workers());
  const auto rk4 = averaged_me_evolve(model, rho0, 2.0, 1e-3);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      stats::RunningStats re, im;
      for (const auto& r : ens) {
        re.add(r.densities().back()(i, j).real());
        im.add(r.densities().back()(i, j).imag());
      }
      const cplx ref = rk4(i, j);
      const auto check = [&](const char* part, const stats::RunningStats& s, double target) {
        const double se = s.stderr_mean();
        const double dev = std::abs(s.mean() - target);
        out.require(dev <= 3.0 * se || dev <= 1e-12,
                    fmt("%s rho(%zu,%zu): ensemble %.5f +- %.5f, RK4 %.5f", part, i, j, s.mean(), se, target));
      };
      check("Re", re, ref.real());
      check("Im", im, ref.imag());
    }
  return out;
}

// 11. Wright-Fisher contrast ----------------------------------------------------

Outcome wright_fisher() {
  Outcome out;
  const auto wf = simulate_ensemble({0.0, 0.5, 1.0, ScalarVariant::wright_fisher}, 0.5, GridSpec::covering(10.0, 1e-3, 10000),
                                    1100, 1000, {}, workers());
  std::size_t absorbed = 0;
  for (const auto& r : wf)
    if (r.populations().back() == 0.0 || r.populations().back() == 1.0) ++absorbed;
  out.require(absorbed >= 990, fmt("Wright-Fisher absorbed by T = 10: %zu / 1000 (>= 99%%)", absorbed));

  const auto hits = parallel_map(100, workers(), [](std::size_t i) {
    std::uint64_t n = 0;
    const auto diag = simulate_observed(ScalarModelSpec{0.0, 0.5, 1.0, ScalarVariant::pure_collapse}, 0.5,
                                        GridSpec::covering(10.0, 1e-5), {1101, i}, ScalarOptions{false, Scheme::euler},
                                        [&](std::uint64_t, double, double p) { n += (p == 0.0 || p == 1.0); });
    return n + diag.clamp_events;
  });
  std::uint64_t total = 0;
  for (auto h : hits) total += h;
  out.require(total == 0, fmt("collapse model (no clamp, dt = 1e-5): %llu exact boundary hits over 100 runs",
                              static_cast<unsigned long long>(total)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"Born rule", born_rule},
      {"collapse and decoherence rates", collapse_rates},
      {"thermal jump rates", thermal_rates},
      {"Zeno scaling", zeno_scaling},
      {"spike law", spike_law},
      {"jump completion probability", completion},
      {"hidden-Markov equivalence", hmm_equivalence},
      {"smoothing removes spikes", smoothing},
      {"scheme positivity", positivity},
      {"averaged master equation", averaged_me},
      {"Wright-Fisher contrast", wright_fisher},
  };
  std::set<std::size_t> only;
  for (int a = 1; a < argc; ++a) only.insert(static_cast<std::size_t>(std::atoi(argv[a])));

  std::size_t failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    if (!only.empty() && !only.contains(c + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("FAIL exception: ") + e.what());
    }
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c + 1, criteria[c].first.c_str(), seconds_since(t0));
    for (const auto& n : o.notes) std::printf("       %s\n", n.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
