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
#include <numeric>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "collapse_lab/core.hpp"
#include "collapse_lab/report.hpp"
#include "collapse_lab/sde.hpp"
#include "collapse_lab/stats.hpp"

namespace collapse_lab {

enum class SpikeOrigin { from_zero, from_one };

inline const char* to_string(SpikeOrigin o) { return o == SpikeOrigin::from_zero ? "from_zero" : "from_one"; }

struct SpikeEvent {
  std::uint64_t trajectory = 0;
  double t_start = 0.0;  // first sample beyond epsilon
  double t_max = 0.0;
  double t_end = 0.0;    // first sample back below delta or beyond 1 - delta
  double height = 0.0;   // max p, or 1 - min p for excursions from one
  SpikeOrigin origin = SpikeOrigin::from_zero;
  bool completed = false;

  double duration() const noexcept { return t_end - t_start; }
  /// Height used by the limit law: completed excursions sit in the atom at h = 1.
  double law_height() const noexcept { return completed ? 1.0 : height; }
};

struct SpikeThresholds {
  double epsilon = 0.02;
  double delta = 0.01;

  void validate() const {
    if (!(delta > 0.0 && delta < epsilon && epsilon < 0.5))
      throw InvariantViolation("spike thresholds need 0 < delta < epsilon < 0.5");
  }
};

/// Time spent settled on each side, optionally split into consecutive windows.
struct SideExposure {
  double zero = 0.0;
  double one = 0.0;
  double window = 0.0;            // width of the exposure windows, 0 when not tracked
  std::vector<double> zero_by_window;
  std::vector<double> one_by_window;

  void add(bool on_zero, double t0, double t1) {
    (on_zero ? zero : one) += t1 - t0;
    if (!(window > 0.0)) return;
    auto& bins = on_zero ? zero_by_window : one_by_window;
    while (t0 < t1) {
      const auto b = static_cast<std::size_t>(std::floor(t0 / window + 1e-12));
      const double edge = std::min(t1, static_cast<double>(b + 1) * window);
      if (bins.size() <= b) bins.resize(b + 1, 0.0);
      bins[b] += edge - t0;
      if (edge <= t0) break;
      t0 = edge;
    }
  }

  void merge(const SideExposure& o) {
    zero += o.zero;
    one += o.one;
    auto add_bins = [](std::vector<double>& a, const std::vector<double>& b) {
      if (a.size() < b.size()) a.resize(b.size(), 0.0);
      for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
    };
    add_bins(zero_by_window, o.zero_by_window);
    add_bins(one_by_window, o.one_by_window);
  }
};

/// Streaming two-threshold excursion detector.
///
/// The process settles on the 0 side when p <= delta and on the 1 side when p >= 1 - delta.
/// On the 0 side an excursion opens when p > epsilon and closes when p < delta (a spike)
/// or p >= 1 - delta (completed, the process then settles on the 1 side); mirrored on the
/// 1 side. Samples before the first settlement are ignored.
class SpikeDetector {
 public:
  explicit SpikeDetector(SpikeThresholds th = {}, std::uint64_t trajectory = 0, double exposure_window = 0.0)
      : th_(th), trajectory_(trajectory) {
    th_.validate();
    exposure_.window = exposure_window;
  }

  void observe(double t, double p) {
    if (side_ != Side::none && started_) exposure_.add(side_ == Side::zero, t_prev_, t);
    started_ = true;
    t_prev_ = t;

    if (side_ == Side::none) {
      if (p <= th_.delta)
        side_ = Side::zero;
      else if (p >= 1.0 - th_.delta)
        side_ = Side::one;
      return;
    }
    const double x = side_ == Side::zero ? p : 1.0 - p;  // distance from the settled boundary
    if (!open_) {
      if (x > th_.epsilon) {
        open_ = true;
        current_ = {trajectory_, t, t, t, x, side_ == Side::zero ? SpikeOrigin::from_zero : SpikeOrigin::from_one, false};
      }
      return;
    }
    if (x > current_.height) {
      current_.height = x;
      current_.t_max = t;
    }
    if (x < th_.delta || x >= 1.0 - th_.delta) {
      current_.t_end = t;
      current_.completed = x >= 1.0 - th_.delta;
      events_.push_back(current_);
      open_ = false;
      if (current_.completed) side_ = side_ == Side::zero ? Side::one : Side::zero;
    }
  }

  const std::vector<SpikeEvent>& events() const noexcept { return events_; }
  std::vector<SpikeEvent>& events() noexcept { return events_; }
  const SideExposure& exposure() const noexcept { return exposure_; }
  bool excursion_open() const noexcept { return open_; }

 private:
  enum class Side { none, zero, one };

  SpikeThresholds th_;
  std::uint64_t trajectory_;
  Side side_ = Side::none;
  bool open_ = false;
  bool started_ = false;
  double t_prev_ = 0.0;
  SpikeEvent current_;
  std::vector<SpikeEvent> events_;
  SideExposure exposure_;
};

struct SpikeDetection {
  std::vector<SpikeEvent> events;
  SideExposure exposure;
  double horizon = 0.0;  // total observed time
};

/// Detects spikes on a full-resolution record (p = rho_00 for matrix records).
inline SpikeDetection detect_spikes(const TrajectoryRecord& traj, SpikeThresholds th = {}, double exposure_window = 0.0) {
  if (traj.grid.record_stride != 1) throw InvariantViolation("detect_spikes: needs a full-resolution record");
  SpikeDetector det(th, traj.randomness.trajectory_index, exposure_window);
  for (std::size_t k = 0; k < traj.size(); ++k) det.observe(traj.times[k], traj.population(k));
  return {det.events(), det.exposure(), traj.times.back() - traj.times.front()};
}

inline SpikeDetection detect_spikes(std::span<const double> times, std::span<const double> p, SpikeThresholds th = {},
                                    double exposure_window = 0.0, std::uint64_t trajectory = 0) {
  if (times.size() != p.size()) throw DimensionMismatch("detect_spikes: size mismatch");
  if (times.empty()) return {};
  SpikeDetector det(th, trajectory, exposure_window);
  for (std::size_t k = 0; k < times.size(); ++k) det.observe(times[k], p[k]);
  return {det.events(), det.exposure(), times.back() - times.front()};
}

/// Spike detection on a scalar run without storing the trajectory.
inline SpikeDetection stream_spikes(const ScalarModelSpec& spec, double p0, const GridSpec& grid,
                                    const RandomnessSpec& randomness, SpikeThresholds th = {},
                                    double exposure_window = 0.0, const ScalarOptions& options = {},
                                    StepDiagnostics* diagnostics = nullptr) {
  SpikeDetector det(th, randomness.trajectory_index, exposure_window);
  const auto diag = simulate_observed(spec, p0, grid, randomness, options,
                                      [&](std::uint64_t, double t, double p) { det.observe(t, p); });
  if (diagnostics) *diagnostics = diag;
  return {std::move(det.events()), det.exposure(), grid.t_final()};
}

/// Concatenates detections, keeping the order (trajectory, t_max).
inline SpikeDetection merge_detections(std::vector<SpikeDetection> parts) {
  SpikeDetection out;
  for (auto& d : parts) {
    out.events.insert(out.events.end(), d.events.begin(), d.events.end());
    out.exposure.window = d.exposure.window;
    out.exposure.merge(d.exposure);
    out.horizon += d.horizon;
  }
  std::stable_sort(out.events.begin(), out.events.end(), [](const SpikeEvent& a, const SpikeEvent& b) {
    return a.trajectory != b.trajectory ? a.trajectory < b.trajectory : a.t_max < b.t_max;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Limit law
// ---------------------------------------------------------------------------

/// Intensity lambda p_eq dt dp / p^2 from the 0 side and lambda (1 - p_eq) dt dp / p^2 from the 1 side.
struct SpikeLaw {
  double lambda = 1.0;
  double p_eq = 0.5;

  double rate(SpikeOrigin o) const noexcept { return o == SpikeOrigin::from_zero ? lambda * p_eq : lambda * (1.0 - p_eq); }

  /// Expected number of excursions with law height in [lo, hi), hi > 1 meaning "up to and including the atom at 1".
  double expected(const SideExposure& e, double lo, double hi) const noexcept {
    const double shape = 1.0 / lo - (hi > 1.0 ? 0.0 : 1.0 / hi);
    return (e.zero * rate(SpikeOrigin::from_zero) + e.one * rate(SpikeOrigin::from_one)) * shape;
  }
  double expected_in_window(const SideExposure& e, std::size_t w, double lo, double hi) const noexcept {
    const double shape = 1.0 / lo - (hi > 1.0 ? 0.0 : 1.0 / hi);
    const double z = w < e.zero_by_window.size() ? e.zero_by_window[w] : 0.0;
    const double o = w < e.one_by_window.size() ? e.one_by_window[w] : 0.0;
    return (z * rate(SpikeOrigin::from_zero) + o * rate(SpikeOrigin::from_one)) * shape;
  }
};

struct SpikeSurvival {
  std::vector<double> heights;
  std::vector<std::uint64_t> counts;  // excursions with law height >= h
  std::vector<double> rate;           // counts per unit exposure
  std::vector<double> rate_stderr;    // Poisson
  double exposure = 0.0;
};

/// S(h): rate of excursions (completed ones included at h = 1) with height >= h.
inline SpikeSurvival spike_survival(const std::vector<SpikeEvent>& events, std::span<const double> heights,
                                    double exposure, std::size_t min_events = 100) {
  if (events.size() < min_events)
    throw InsufficientData("spike_survival: " + std::to_string(events.size()) + " events");
  if (!(exposure > 0.0)) throw InvariantViolation("spike_survival: exposure must be > 0");
  SpikeSurvival s;
  s.exposure = exposure;
  for (double h : heights) {
    std::uint64_t c = 0;
    for (const auto& e : events)
      if (e.law_height() >= h) ++c;
    s.heights.push_back(h);
    s.counts.push_back(c);
    s.rate.push_back(static_cast<double>(c) / exposure);
    s.rate_stderr.push_back(std::sqrt(static_cast<double>(c)) / exposure);
  }
  return s;
}

inline std::size_t count_spikes(const std::vector<SpikeEvent>& events, double min_height, bool include_completed = false) {
  return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [&](const SpikeEvent& e) {
    return (include_completed || !e.completed) && e.height >= min_height;
  }));
}

/// Least-squares slope of log S(h) against log h.
inline stats::LinearFit survival_power_law(const SpikeSurvival& s) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < s.heights.size(); ++i) {
    if (s.counts[i] == 0) continue;
    x.push_back(std::log(s.heights[i]));
    y.push_back(std::log(s.rate[i]));
  }
  return stats::linear_regression(x, y);
}

/// Partition of (t, h) space: consecutive exposure windows times height bins [h_k, h_{k+1}).
/// A last edge above 1 closes the top bin over the atom at h = 1.
struct SpikePartition {
  std::size_t n_windows = 1;
  std::vector<double> height_edges{0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5};
};

/// Chi-square of counts against the limit intensity, plus a lag-one correlation check of
/// window counts (Poisson independence across disjoint windows).
inline Report poisson_count_test(const SpikeDetection& d, const SpikeLaw& law, const SpikePartition& part,
                                 double min_expected = 5.0, double alpha = 0.05) {
  const auto& e = d.exposure;
  const auto& edges = part.height_edges;
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
    throw InvariantViolation("poisson_count_test: height edges must be increasing");
  std::size_t n_windows = part.n_windows;
  if (n_windows > 1 && !(e.window > 0.0)) throw InvariantViolation("poisson_count_test: detection has no exposure windows");
  if (n_windows < 1) n_windows = 1;
  const std::size_t n_bins = edges.size() - 1;
  if (n_windows * n_bins < 10) throw InsufficientData("poisson_count_test: fewer than 10 cells");

  std::vector<double> observed(n_windows * n_bins, 0.0), expected(n_windows * n_bins, 0.0);
  for (const auto& ev : d.events) {
    const double h = ev.law_height();
    if (h < edges.front() || h >= edges.back()) continue;
    const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), h) - edges.begin()) - 1;
    std::size_t w = 0;
    if (n_windows > 1) w = std::min(n_windows - 1, static_cast<std::size_t>(std::floor(ev.t_start / e.window)));
    observed[w * n_bins + bin] += 1.0;
  }
  for (std::size_t w = 0; w < n_windows; ++w)
    for (std::size_t b = 0; b < n_bins; ++b)
      expected[w * n_bins + b] = n_windows > 1 ? law.expected_in_window(e, w, edges[b], edges[b + 1])
                                               : law.expected(e, edges[b], edges[b + 1]);
  for (double x : expected)
    if (x < min_expected) throw InsufficientData("poisson_count_test: a cell expects fewer than 5 events");

  const auto chi = stats::chi_square_gof(observed, expected);

  Report rep;
  rep.test = "spike_poisson_chi_square";
  rep.parameters = {{"lambda", law.lambda}, {"p_eq", law.p_eq}, {"n_windows", n_windows}, {"height_edges", edges}};
  rep.estimate = chi.statistic;
  rep.expected = chi.dof;
  rep.stderr_ = std::sqrt(2.0 * chi.dof);
  rep.z_score = Report::z(chi.statistic, chi.dof, rep.stderr_);
  bool pass = chi.passes(alpha);

  json cells = json::array();
  for (std::size_t b = 0; b < n_bins; ++b) {
    double o = 0, x = 0;
    for (std::size_t w = 0; w < n_windows; ++w) {
      o += observed[w * n_bins + b];
      x += expected[w * n_bins + b];
    }
    cells.push_back({{"h_lo", edges[b]}, {"h_hi", std::min(edges[b + 1], 1.0)}, {"observed", o}, {"expected", x}});
  }
  rep.details["chi_square"] = {{"statistic", chi.statistic}, {"dof", chi.dof}, {"p_value", chi.p_value}};
  rep.details["height_bins"] = std::move(cells);

  if (n_windows >= 10) {
    std::vector<double> resid(n_windows, 0.0);
    for (std::size_t w = 0; w < n_windows; ++w) {
      double o = 0, x = 0;
      for (std::size_t b = 0; b < n_bins; ++b) {
        o += observed[w * n_bins + b];
        x += expected[w * n_bins + b];
      }
      resid[w] = (o - x) / std::sqrt(x);
    }
    const double mean = std::accumulate(resid.begin(), resid.end(), 0.0) / static_cast<double>(n_windows);
    double c = 0.0, v = 0.0;
    for (std::size_t w = 0; w < n_windows; ++w) v += (resid[w] - mean) * (resid[w] - mean);
    for (std::size_t w = 0; w + 1 < n_windows; ++w) c += (resid[w] - mean) * (resid[w + 1] - mean);
    const double corr = v > 0.0 ? c / v : 0.0;
    const double corr_z = corr * std::sqrt(static_cast<double>(n_windows - 1));
    rep.details["window_lag1_correlation"] = {{"estimate", corr}, {"z_score", corr_z}};
    if (!(stats::normal_two_sided_p(corr_z) > alpha)) pass = false;
  }
  rep.pass = pass;
  return rep;
}

/// Fraction of excursions opened at epsilon that completed, with its binomial standard error.
struct CompletionEstimate {
  double probability = 0.0;
  double stderr_ = 0.0;
  std::size_t n_excursions = 0;
  std::size_t n_completed = 0;
};

inline CompletionEstimate jump_completion_probability(const std::vector<SpikeEvent>& events) {
  CompletionEstimate c;
  c.n_excursions = events.size();
  for (const auto& e : events)
    if (e.completed) ++c.n_completed;
  if (c.n_excursions == 0) throw InsufficientData("jump_completion_probability: no excursions");
  const double n = static_cast<double>(c.n_excursions);
  c.probability = static_cast<double>(c.n_completed) / n;
  c.stderr_ = std::sqrt(c.probability * (1.0 - c.probability) / n);
  return c;
}

/// Median duration of the excursions that did not complete.
inline double median_spike_duration(const std::vector<SpikeEvent>& events) {
  std::vector<double> d;
  for (const auto& e : events)
    if (!e.completed) d.push_back(e.duration());
  if (d.empty()) throw InsufficientData("median_spike_duration: no spikes");
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace collapse_lab
