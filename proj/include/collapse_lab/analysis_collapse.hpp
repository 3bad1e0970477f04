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
#include <span>
#include <utility>
#include <vector>

#include "collapse_lab/core.hpp"
#include "collapse_lab/report.hpp"
#include "collapse_lab/sde.hpp"
#include "collapse_lab/stats.hpp"

namespace collapse_lab {

// ---------------------------------------------------------------------------
// Born rule
// ---------------------------------------------------------------------------

struct BornStatistics {
  double fraction_up = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
  std::size_t n_up = 0;
  std::size_t n_down = 0;
  std::size_t n_unresolved = 0;
  double threshold = 0.99;

  double unresolved_fraction() const noexcept { return n > 0 ? static_cast<double>(n_unresolved) / n : 0.0; }
};

/// Fraction of final populations above `threshold`, with its binomial standard error.
/// Throws InsufficientData when more than `max_unresolved` of the runs sit in
/// [1 - threshold, threshold].
inline BornStatistics born_statistics(std::span<const double> final_p, double threshold = 0.99,
                                      double max_unresolved = 0.01) {
  if (!(threshold > 0.5 && threshold < 1.0)) throw InvariantViolation("born_statistics: threshold must lie in (0.5, 1)");
  if (final_p.empty()) throw InsufficientData("born_statistics: empty ensemble");
  BornStatistics b;
  b.threshold = threshold;
  b.n = final_p.size();
  for (double p : final_p) {
    if (p > threshold)
      ++b.n_up;
    else if (p < 1.0 - threshold)
      ++b.n_down;
    else
      ++b.n_unresolved;
  }
  const double n = static_cast<double>(b.n);
  b.fraction_up = static_cast<double>(b.n_up) / n;
  b.stderr_ = std::sqrt(b.fraction_up * (1.0 - b.fraction_up) / n);
  if (b.unresolved_fraction() > max_unresolved)
    throw InsufficientData("born_statistics: " + std::to_string(b.n_unresolved) +
                           " unresolved trajectories; the horizon is too short");
  return b;
}

inline BornStatistics born_statistics(const std::vector<TrajectoryRecord>& ensemble, double threshold = 0.99) {
  std::vector<double> final_p;
  final_p.reserve(ensemble.size());
  for (const auto& r : ensemble) final_p.push_back(r.population(r.size() - 1));
  return born_statistics(final_p, threshold);
}

// ---------------------------------------------------------------------------
// Exponential decay
// ---------------------------------------------------------------------------

struct ExponentialFit {
  double rate = 0.0;
  double rate_stderr = 0.0;
  double intercept = 0.0;  // log of the amplitude at t = 0
  double r_squared = 0.0;
  std::pair<double, double> window{0.0, 0.0};
  std::size_t n_points = 0;
};

/// Least-squares line through log(values) on times within `window`; rate = -slope.
inline ExponentialFit fit_exponential_decay(std::span<const double> times, std::span<const double> values,
                                            std::pair<double, double> window) {
  if (times.size() != values.size()) throw DimensionMismatch("fit_exponential_decay: size mismatch");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < window.first || times[i] > window.second) continue;
    if (!(values[i] > 0.0)) throw InvariantViolation("fit_exponential_decay: non-positive value in window");
    x.push_back(times[i]);
    y.push_back(std::log(values[i]));
  }
  if (x.size() < 2) throw InsufficientData("fit_exponential_decay: fewer than two points in window");
  const auto lf = stats::linear_regression(x, y);
  return {-lf.slope, lf.slope_stderr, lf.intercept, lf.r_squared, window, x.size()};
}

/// Default fit window: from t_start (2 / gamma) to the last time before the mean first
/// drops below `noise_factor` standard errors.
inline std::pair<double, double> decay_window(std::span<const double> times, std::span<const double> means,
                                              std::span<const double> stderrs, double t_start,
                                              double noise_factor = 10.0) {
  if (times.size() != means.size() || times.size() != stderrs.size())
    throw DimensionMismatch("decay_window: size mismatch");
  double t_stop = t_start;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t_start) continue;
    if (!(means[i] > noise_factor * stderrs[i])) break;
    t_stop = times[i];
  }
  if (!(t_stop > t_start)) throw InsufficientData("decay_window: signal is below the noise floor after t_start");
  return {t_start, t_stop};
}

/// Ensemble mean and standard error of f(record, k) at every recorded index.
template <typename F>
std::pair<std::vector<double>, std::vector<double>> ensemble_profile(const std::vector<TrajectoryRecord>& ensemble,
                                                                     F&& f) {
  if (ensemble.empty()) throw InsufficientData("ensemble_profile: empty ensemble");
  const std::size_t n = ensemble.front().size();
  std::vector<stats::RunningStats> acc(n);
  for (const auto& r : ensemble) {
    if (r.size() != n) throw DimensionMismatch("ensemble_profile: records have different lengths");
    for (std::size_t k = 0; k < n; ++k) acc[k].add(f(r, k));
  }
  std::vector<double> m(n), s(n);
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = acc[k].mean();
    s[k] = acc[k].stderr_mean();
  }
  return {std::move(m), std::move(s)};
}

/// Distance from the final state, sqrt(p (1 - p)).
inline double collapse_distance(double p) { return std::sqrt(std::max(0.0, p * (1.0 - p))); }

// ---------------------------------------------------------------------------
// Martingale test
// ---------------------------------------------------------------------------

/// Index of the recorded time closest to t.
inline std::size_t record_index(const TrajectoryRecord& r, double t) {
  const auto it = std::lower_bound(r.times.begin(), r.times.end(), t - 1e-9 * std::max(1.0, std::abs(t)));
  if (it == r.times.end()) throw InvariantViolation("record_index: time beyond the recorded horizon");
  return static_cast<std::size_t>(it - r.times.begin());
}

/// Checks |mean p_t - p0| <= z_max * stderr at every checkpoint.
inline Report martingale_test(const std::vector<TrajectoryRecord>& ensemble, std::span<const double> checkpoints,
                              double p0, double z_max = 3.0) {
  if (ensemble.empty()) throw InsufficientData("martingale_test: empty ensemble");
  Report rep;
  rep.test = "martingale";
  rep.parameters = {{"p0", p0}, {"n_traj", ensemble.size()}, {"z_max", z_max}};
  rep.expected = p0;
  rep.pass = true;
  json per = json::array();
  double worst = 0.0;
  for (double t : checkpoints) {
    stats::RunningStats s;
    for (const auto& r : ensemble) s.add(r.population(record_index(r, t)));
    const double se = s.stderr_mean();
    const double z = Report::z(s.mean(), p0, se);
    per.push_back({{"t", t}, {"mean", s.mean()}, {"stderr", se}, {"z_score", std::isfinite(z) ? z : 1e300}});
    if (!(std::abs(z) <= z_max)) rep.pass = false;
    if (std::abs(z) >= std::abs(worst) || per.size() == 1) {
      worst = z;
      rep.estimate = s.mean();
      rep.stderr_ = se;
    }
  }
  rep.z_score = worst;
  rep.details["checkpoints"] = std::move(per);
  return rep;
}

}  // namespace collapse_lab
