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
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "collapse_lab/analysis_spikes.hpp"
#include "collapse_lab/core.hpp"
#include "collapse_lab/parallel.hpp"
#include "collapse_lab/random.hpp"
#include "collapse_lab/report.hpp"
#include "collapse_lab/sde.hpp"
#include "collapse_lab/stats.hpp"

namespace collapse_lab {

struct TelegraphParams {
  double lambda = 1.0;
  double p_eq = 0.5;

  void validate() const {
    if (!(lambda > 0.0)) throw InvariantViolation("telegraph: lambda must be > 0");
    if (!(p_eq > 0.0 && p_eq < 1.0)) throw InvariantViolation("telegraph: p_eq must lie in (0, 1)");
  }
  double rate_up() const noexcept { return lambda * p_eq; }            // 0 -> 1
  double rate_down() const noexcept { return lambda * (1.0 - p_eq); }  // 1 -> 0
};

/// Two-state continuous-time Markov path on [0, horizon].
struct TelegraphPath {
  int initial = 0;
  std::vector<double> switch_times;
  double horizon = 0.0;

  int value_at(double t) const {
    const auto n = std::upper_bound(switch_times.begin(), switch_times.end(), t) - switch_times.begin();
    return (initial + static_cast<int>(n)) % 2;
  }

  /// Time spent in state 1 within [a, b].
  double time_in_one(double a, double b) const {
    double s = 0.0;
    int r = value_at(a);
    double t = a;
    auto it = std::upper_bound(switch_times.begin(), switch_times.end(), a);
    for (; it != switch_times.end() && *it < b; ++it) {
      if (r == 1) s += *it - t;
      t = *it;
      r ^= 1;
    }
    if (r == 1) s += b - t;
    return s;
  }
};

/// Exact simulation with exponential waiting times. The initial state is drawn from
/// Bernoulli(p_eq) unless given.
inline TelegraphPath simulate_telegraph(const TelegraphParams& par, double horizon, const RandomnessSpec& randomness,
                                        std::optional<int> initial = std::nullopt) {
  par.validate();
  if (!(horizon > 0.0)) throw InvariantViolation("simulate_telegraph: horizon must be > 0");
  TelegraphPath path;
  path.horizon = horizon;
  std::uint64_t draw = 0;
  if (initial) {
    if (*initial != 0 && *initial != 1) throw InvariantViolation("simulate_telegraph: initial state must be 0 or 1");
    path.initial = *initial;
  } else {
    path.initial = uniform_open(randomness, Lane::telegraph, draw) <= par.p_eq ? 1 : 0;
  }
  ++draw;
  int r = path.initial;
  double t = 0.0;
  for (;;) {
    const double rate = r == 0 ? par.rate_up() : par.rate_down();
    t += -std::log(uniform_open(randomness, Lane::telegraph, draw++)) / rate;
    if (t >= horizon) break;
    path.switch_times.push_back(t);
    r ^= 1;
  }
  return path;
}

/// Increments dY_k = sqrt(G) int_{t_k}^{t_k + dt} R dt + dB_k on a uniform grid.
struct ObservationPath {
  double dt = 0.0;
  std::vector<double> increments;
};

inline ObservationPath observe_telegraph(const TelegraphPath& path, double gamma, double dt,
                                         const RandomnessSpec& randomness) {
  if (!(dt > 0.0) || !(gamma >= 0.0)) throw InvariantViolation("observe_telegraph: need dt > 0 and gamma >= 0");
  const auto n = static_cast<std::size_t>(std::llround(path.horizon / dt));
  ObservationPath obs{dt, std::vector<double>(n)};
  NormalStream noise(randomness, Lane::observation);
  const double sg = std::sqrt(gamma), sdt = std::sqrt(dt);
  std::size_t next_switch = 0;
  int r = path.initial;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = dt * static_cast<double>(k), b = a + dt;
    double occ;
    if (next_switch < path.switch_times.size() && path.switch_times[next_switch] < b) {
      occ = path.time_in_one(a, b);
      while (next_switch < path.switch_times.size() && path.switch_times[next_switch] < b) {
        ++next_switch;
        r ^= 1;
      }
    } else {
      occ = r == 1 ? dt : 0.0;
    }
    obs.increments[k] = sg * occ + sdt * noise(k);
  }
  return obs;
}

struct FilterParams {
  double lambda = 1.0;
  double p_eq = 0.5;
  double gamma = 400.0;
  double p0 = 0.5;

  void validate() const {
    if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw InvariantViolation("filter: rates must be >= 0");
    if (!(p_eq >= 0.0 && p_eq <= 1.0) || !(p0 >= 0.0 && p0 <= 1.0))
      throw InvariantViolation("filter: probabilities must lie in [0, 1]");
  }
};

namespace detail {
// Likelihood ratio l(dY | 1) / l(dY | 0) for Gaussian increments of variance dt, in log form.
inline double log_likelihood_ratio(double dy, double gamma, double dt) {
  return std::sqrt(gamma) * dy - 0.5 * gamma * dt;
}
inline double bayes(double p, double llr) {
  if (llr >= 0.0) return p / (p + (1.0 - p) * std::exp(-llr));
  const double e = std::exp(llr);
  return p * e / (p * e + (1.0 - p));
}
}  // namespace detail

/// Filtered probability P[R_{t_k} = 1 | dY_0 .. dY_{k-1}], k = 0 .. n: a Markov prediction
/// step p + lambda (p_eq - p) dt followed by a Gaussian Bayes update.
inline std::vector<double> filter_forward(const ObservationPath& obs, const FilterParams& par) {
  par.validate();
  std::vector<double> out(obs.increments.size() + 1);
  double p = par.p0;
  out[0] = p;
  for (std::size_t k = 0; k < obs.increments.size(); ++k) {
    p += par.lambda * (par.p_eq - p) * obs.dt;
    p = detail::bayes(p, detail::log_likelihood_ratio(obs.increments[k], par.gamma, obs.dt));
    out[k + 1] = p;
  }
  return out;
}

/// Forward-backward probability P[R_{t_k} = 1 | all observations] on the same grid.
inline std::vector<double> smooth_forward_backward(const ObservationPath& obs, const FilterParams& par) {
  par.validate();
  const auto forward = filter_forward(obs, par);
  const std::size_t n = obs.increments.size();
  const double up = par.lambda * par.p_eq * obs.dt, down = par.lambda * (1.0 - par.p_eq) * obs.dt;
  if (up > 1.0 || down > 1.0) throw InvariantViolation("smooth_forward_backward: lambda dt too large");
  std::vector<double> out(n + 1);
  double b0 = 1.0, b1 = 1.0;  // beta_k(0), beta_k(1), normalized to sum 1
  out[n] = forward[n];
  for (std::size_t k = n; k-- > 0;) {
    const double llr = detail::log_likelihood_ratio(obs.increments[k], par.gamma, obs.dt);
    // Likelihoods relative to the larger one to stay finite.
    const double l0 = llr > 0.0 ? std::exp(-llr) : 1.0;
    const double l1 = llr > 0.0 ? 1.0 : std::exp(llr);
    const double n0 = (1.0 - up) * l0 * b0 + up * l1 * b1;
    const double n1 = down * l0 * b0 + (1.0 - down) * l1 * b1;
    const double s = n0 + n1;
    b0 = n0 / s;
    b1 = n1 / s;
    const double a1 = forward[k] * b1, a0 = (1.0 - forward[k]) * b0;
    out[k] = a1 / (a0 + a1);
  }
  return out;
}

struct HmmRun {
  TelegraphPath telegraph;
  ObservationPath observations;
  std::vector<double> filtered;
  std::vector<double> smoothed;  // empty unless requested
};

inline HmmRun run_hmm(const FilterParams& par, double horizon, double dt, const RandomnessSpec& randomness,
                      bool smooth = false) {
  HmmRun run;
  const TelegraphParams tp{par.lambda, par.p_eq};
  run.telegraph = simulate_telegraph(tp, horizon, randomness);
  run.observations = observe_telegraph(run.telegraph, par.gamma, dt, randomness);
  run.filtered = filter_forward(run.observations, par);
  if (smooth) run.smoothed = smooth_forward_backward(run.observations, par);
  return run;
}

// ---------------------------------------------------------------------------
// Equivalence with the scalar collapse equation
// ---------------------------------------------------------------------------

struct EquivalenceOptions {
  double dt = 1e-4;
  std::vector<double> checkpoints{1.0, 5.0, 20.0};  // in units of 1 / lambda
  double ks_max = 0.06;
  double alpha = 0.05;
  SpikeThresholds thresholds{};
  std::vector<double> height_edges{0.05, 0.07, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5};
  std::uint64_t master_seed = 20;
  double direct_gamma_factor = 1.0;  // != 1 for the mismatched negative control
  Scheme direct_scheme = Scheme::kraus;
  unsigned workers = default_workers();
};

namespace detail {

struct EnsembleSide {
  std::vector<std::vector<double>> at_checkpoint;  // [checkpoint][trajectory]
  std::vector<double> height_counts;
  std::size_t n_events = 0;
};

inline std::vector<double> bin_heights(const std::vector<SpikeEvent>& events, const std::vector<double>& edges) {
  std::vector<double> c(edges.size() - 1, 0.0);
  for (const auto& e : events) {
    const double h = e.law_height();
    if (h < edges.front() || h >= edges.back()) continue;
    c[static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), h) - edges.begin()) - 1] += 1.0;
  }
  return c;
}

}  // namespace detail

/// N filtered hidden-Markov replicas against N direct runs of the scalar collapse equation:
/// marginal KS at the checkpoints and a two-sample chi-square of spike heights.
inline Report filtered_law_equivalence(double lambda, double p_eq, double gamma, std::size_t n,
                                       const EquivalenceOptions& opt = {}) {
  if (n < 1000) throw InsufficientData("filtered_law_equivalence: needs N >= 1000");
  const double horizon = *std::max_element(opt.checkpoints.begin(), opt.checkpoints.end()) / lambda;
  const auto n_steps = static_cast<std::uint64_t>(std::llround(horizon / opt.dt));
  std::vector<std::uint64_t> check_steps;
  for (double c : opt.checkpoints) check_steps.push_back(static_cast<std::uint64_t>(std::llround(c / lambda / opt.dt)));

  struct Sample {
    std::vector<double> values;
    std::vector<SpikeEvent> events;
  };
  auto collect = [&](auto&& produce) {
    const auto parts = parallel_map(n, opt.workers, produce);
    detail::EnsembleSide side;
    side.at_checkpoint.assign(check_steps.size(), std::vector<double>(n));
    side.height_counts.assign(opt.height_edges.size() - 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < check_steps.size(); ++c) side.at_checkpoint[c][i] = parts[i].values[c];
      const auto b = detail::bin_heights(parts[i].events, opt.height_edges);
      for (std::size_t k = 0; k < b.size(); ++k) side.height_counts[k] += b[k];
      side.n_events += parts[i].events.size();
    }
    return side;
  };

  const FilterParams fp{lambda, p_eq, gamma, p_eq};
  const auto filtered = collect([&](std::size_t i) {
    const RandomnessSpec rs{opt.master_seed, i};
    const auto tel = simulate_telegraph({lambda, p_eq}, horizon, rs);
    const auto obs = observe_telegraph(tel, gamma, opt.dt, rs);
    const auto pf = filter_forward(obs, fp);
    Sample s;
    for (auto k : check_steps) s.values.push_back(pf[k]);
    SpikeDetector det(opt.thresholds, i);
    for (std::size_t k = 0; k < pf.size(); ++k) det.observe(opt.dt * static_cast<double>(k), pf[k]);
    s.events = std::move(det.events());
    return s;
  });

  const ScalarModelSpec direct{lambda, p_eq, gamma * opt.direct_gamma_factor, ScalarVariant::collapse_thermal};
  const auto sde = collect([&](std::size_t i) {
    const RandomnessSpec rs{opt.master_seed + 1, i};
    Sample s;
    SpikeDetector det(opt.thresholds, i);
    std::size_t next = 0;
    simulate_observed(direct, p_eq, GridSpec{opt.dt, n_steps, n_steps}, rs, ScalarOptions{true, opt.direct_scheme},
                      [&](std::uint64_t k, double t, double p) {
                        det.observe(t, p);
                        while (next < check_steps.size() && check_steps[next] == k) {
                          s.values.push_back(p);
                          ++next;
                        }
                      });
    s.events = std::move(det.events());
    return s;
  });

  Report rep;
  rep.test = "filtered_law_equivalence";
  rep.parameters = {{"lambda", lambda}, {"p_eq", p_eq},   {"gamma", gamma},         {"n", n},
                    {"dt", opt.dt},     {"ks_max", opt.ks_max}, {"epsilon", opt.thresholds.epsilon},
                    {"delta", opt.thresholds.delta}, {"direct_scheme", to_string(opt.direct_scheme)}};
  bool pass = true;
  json ks_rows = json::array();
  double worst = 0.0;
  for (std::size_t c = 0; c < check_steps.size(); ++c) {
    const auto ks = stats::ks_two_sample(filtered.at_checkpoint[c], sde.at_checkpoint[c]);
    ks_rows.push_back({{"t", opt.checkpoints[c] / lambda}, {"ks_statistic", ks.statistic}, {"p_value", ks.p_value}});
    worst = std::max(worst, ks.statistic);
    if (!(ks.statistic <= opt.ks_max)) pass = false;
  }
  const auto total = [](const std::vector<double>& c) { return std::accumulate(c.begin(), c.end(), 0.0); };
  json heights = {{"edges", opt.height_edges}, {"filtered", filtered.height_counts}, {"direct", sde.height_counts}};
  if (total(filtered.height_counts) > 0.0 && total(sde.height_counts) > 0.0) {
    const auto chi = stats::chi_square_two_sample(filtered.height_counts, sde.height_counts);
    if (!chi.passes(opt.alpha)) pass = false;
    heights["chi_square"] = chi.statistic;
    heights["dof"] = chi.dof;
    heights["p_value"] = chi.p_value;
  } else {
    pass = false;
    heights["p_value"] = nullptr;
  }

  rep.estimate = worst;
  rep.expected = opt.ks_max;
  rep.pass = pass;
  rep.details["marginal_ks"] = std::move(ks_rows);
  rep.details["spike_heights"] = std::move(heights);
  return rep;
}

}  // namespace collapse_lab
