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
#include <vector>

#include "collapse_lab/analysis_spikes.hpp"

using namespace collapse_lab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> grid_times(std::size_t n, double dt = 1.0) {
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = dt * static_cast<double>(k);
  return t;
}

// Marked Poisson stream on the 0 side: rate lambda p_eq / h_min, heights with survival h_min / h.
SpikeDetection synthetic_spikes(double lambda, double p_eq, double h_min, double horizon, double window,
                                std::uint64_t seed) {
  SpikeDetection d;
  d.horizon = horizon;
  d.exposure.window = window;
  d.exposure.add(true, 0.0, horizon);
  const double rate = lambda * p_eq / h_min;
  double t = 0.0;
  for (std::uint64_t k = 0;; k += 2) {
    t += -std::log(uniform_open({seed, 0}, Lane::auxiliary, k)) / rate;
    if (t >= horizon) break;
    const double h = h_min / uniform_open({seed, 0}, Lane::auxiliary, k + 1);
    SpikeEvent e;
    e.t_start = e.t_max = e.t_end = t;
    e.completed = h >= 1.0;
    e.height = std::min(h, 1.0);
    d.events.push_back(e);
  }
  return d;
}

}  // namespace

TEST_CASE("detector on constructed paths", "[spikes]") {
  const auto t = grid_times(9);
  const std::vector<double> zero(9, 0.0);
  CHECK(detect_spikes(t, zero).events.empty());

  const std::vector<double> tent{0.0, 0.0, 0.1, 0.25, 0.4, 0.25, 0.1, 0.0, 0.0};
  const auto d = detect_spikes(t, tent);
  REQUIRE(d.events.size() == 1);
  const auto& e = d.events[0];
  CHECK(e.height == 0.4);
  CHECK(e.origin == SpikeOrigin::from_zero);
  CHECK_FALSE(e.completed);
  CHECK(e.t_start == 2.0);
  CHECK(e.t_max == 4.0);
  CHECK(e.t_end == 7.0);
  CHECK(e.duration() == 5.0);
  CHECK(d.exposure.zero == 8.0);

  // A completed excursion moves the detector to the 1 side; the next dip is a from_one spike.
  const auto t2 = grid_times(10);
  const std::vector<double> jump{0.0, 0.3, 0.7, 0.995, 1.0, 0.9, 0.7, 0.95, 1.0, 1.0};
  const auto j = detect_spikes(t2, jump);
  REQUIRE(j.events.size() == 2);
  CHECK(j.events[0].completed);
  CHECK(j.events[0].law_height() == 1.0);
  CHECK(j.events[1].origin == SpikeOrigin::from_one);
  CHECK_FALSE(j.events[1].completed);
  CHECK_THAT(j.events[1].height, WithinAbs(0.3, 1e-12));
  CHECK(j.exposure.one > 0.0);

  // Samples before the first settlement are ignored; excursions still open at the end are dropped.
  const std::vector<double> late{0.5, 0.4, 0.005, 0.05, 0.2, 0.3, 0.4, 0.45, 0.5};
  SpikeDetector det;
  for (std::size_t k = 0; k < late.size(); ++k) det.observe(t[k], late[k]);
  CHECK(det.events().empty());
  CHECK(det.excursion_open());

  CHECK_THROWS_AS(SpikeDetector(SpikeThresholds{0.01, 0.02}), InvariantViolation);
  CHECK_THROWS_AS(SpikeDetector(SpikeThresholds{0.02, 0.02}), InvariantViolation);

  TrajectoryRecord coarse;
  coarse.grid = GridSpec{1.0, 8, 2};
  coarse.times = {0, 2, 4, 6, 8};
  coarse.states = std::vector<double>(5, 0.0);
  CHECK_THROWS_AS(detect_spikes(coarse), InvariantViolation);
}

TEST_CASE("exposure windows", "[spikes]") {
  SideExposure e;
  e.window = 10.0;
  e.add(true, 5.0, 25.0);
  e.add(false, 25.0, 31.0);
  CHECK(e.zero == 20.0);
  CHECK(e.one == 6.0);
  CHECK(e.zero_by_window == std::vector<double>{5.0, 10.0, 5.0});
  CHECK(e.one_by_window == std::vector<double>{0.0, 0.0, 5.0, 1.0});
}

TEST_CASE("survival of the limit law", "[spikes]") {
  const auto d = synthetic_spikes(1.0, 0.5, 0.02, 2000.0, 0.0, 4);
  const std::vector<double> hs{0.05, 0.1, 0.2, 0.5, 1.0};
  const auto s = spike_survival(d.events, hs, d.exposure.zero);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    INFO("h = " << hs[i]);
    CHECK(std::abs(s.rate[i] - 0.5 / hs[i]) <= 3.0 * s.rate_stderr[i]);
  }
  CHECK(s.counts.back() == count_spikes(d.events, 1.0, true));
  CHECK(count_spikes(d.events, 1.0) == 0);

  const auto fit = survival_power_law(spike_survival(d.events, std::vector<double>{0.05, 0.1, 0.2, 0.3, 0.5}, 2000.0));
  CHECK_THAT(fit.slope, WithinAbs(-1.0, 0.1));

  // Doubling p_eq doubles the from_zero intensity.
  const auto d2 = synthetic_spikes(1.0, 1.0, 0.02, 2000.0, 0.0, 5);
  const auto s2 = spike_survival(d2.events, hs, 2000.0);
  CHECK(std::abs(s2.rate[1] - 2.0 * s.rate[1]) <= 3.0 * std::hypot(s2.rate_stderr[1], 2.0 * s.rate_stderr[1]));

  CHECK_THROWS_AS(spike_survival(std::vector<SpikeEvent>(10), hs, 1.0), InsufficientData);
}

TEST_CASE("Poisson count test", "[spikes]") {
  const SpikeLaw law{1.0, 0.5};
  const auto d = synthetic_spikes(1.0, 0.5, 0.05, 4000.0, 400.0, 10);
  const auto rep = poisson_count_test(d, law, SpikePartition{10, {0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5}});
  CHECK(rep.pass);
  CHECK(rep.details.contains("window_lag1_correlation"));
  CHECK(rep.details["height_bins"].size() == 6);

  // Wrong intensity is rejected.
  CHECK_FALSE(poisson_count_test(d, SpikeLaw{1.0, 0.6}, SpikePartition{10, {0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5}}).pass);
  // Wrong shape (survival 1/sqrt(h)) is rejected.
  auto warped = d;
  for (auto& e : warped.events)
    if (!e.completed) e.height = std::sqrt(0.05 * e.height);
  CHECK_FALSE(poisson_count_test(warped, law, SpikePartition{10, {0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5}}).pass);

  CHECK_THROWS_AS(poisson_count_test(d, law, SpikePartition{1, {0.05, 0.1, 1.5}}), InsufficientData);
  const auto tiny = synthetic_spikes(1.0, 0.5, 0.05, 40.0, 4.0, 9);
  CHECK_THROWS_AS(poisson_count_test(tiny, law, SpikePartition{10, {0.05, 0.07, 0.1, 0.15, 0.25, 0.5, 1.5}}),
                  InsufficientData);
}

TEST_CASE("law expectations", "[spikes]") {
  SideExposure e;
  e.zero = 100.0;
  e.one = 50.0;
  const SpikeLaw law{2.0, 0.25};
  CHECK(law.rate(SpikeOrigin::from_zero) == 0.5);
  CHECK(law.rate(SpikeOrigin::from_one) == 1.5);
  CHECK_THAT(law.expected(e, 0.1, 0.2), WithinRel((100 * 0.5 + 50 * 1.5) * 5.0, 1e-14));
  CHECK_THAT(law.expected(e, 0.5, 1.5), WithinRel((100 * 0.5 + 50 * 1.5) * 2.0, 1e-14));
}

TEST_CASE("completion follows optional stopping", "[spikes]") {
  // Pure collapse from p = eps, stopped at delta or 1 - delta: P[complete] = (eps - delta) / (1 - 2 delta).
  const double eps = 0.1, delta = 0.01, dt = 1e-5;
  const ScalarModelSpec spec{0.0, 0.5, 100.0, ScalarVariant::pure_collapse};
  std::vector<SpikeEvent> events;
  for (std::uint64_t i = 0; i < 3000; ++i) {
    NormalStream noise({55, i});
    double p = eps;
    std::uint64_t k = 0;
    while (p > delta && p < 1.0 - delta) {
      p = kraus_step_scalar(spec, p, dt, std::sqrt(dt) * noise(k));
      ++k;
    }
    SpikeEvent e;
    e.completed = p >= 1.0 - delta;
    events.push_back(e);
  }
  const auto c = jump_completion_probability(events);
  const double expected = (eps - delta) / (1.0 - 2.0 * delta);
  INFO("completion " << c.probability << " +- " << c.stderr_ << ", expected " << expected);
  CHECK(std::abs(c.probability - expected) <= 3.0 * std::sqrt(expected * (1 - expected) / 3000.0));
  CHECK(c.n_excursions == 3000);
  CHECK_THROWS_AS(jump_completion_probability({}), InsufficientData);
}

TEST_CASE("streamed and recorded detection agree", "[spikes]") {
  const ScalarModelSpec spec{1.0, 0.5, 400.0, ScalarVariant::collapse_thermal};
  const GridSpec grid{5e-4, 200000, 1};
  const auto rec = simulate(spec, 0.0, grid, {3, 4});
  const auto a = detect_spikes(rec, {}, 10.0);
  const auto b = stream_spikes(spec, 0.0, grid, {3, 4}, {}, 10.0);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t k = 0; k < a.events.size(); ++k) {
    CHECK(a.events[k].t_max == b.events[k].t_max);
    CHECK(a.events[k].height == b.events[k].height);
    CHECK(a.events[k].trajectory == 4);
  }
  CHECK(a.exposure.zero == b.exposure.zero);
  CHECK(a.events.size() > 100);
  CHECK(median_spike_duration(a.events) > 0.0);

  const auto merged = merge_detections({b, a});
  CHECK(merged.events.size() == 2 * a.events.size());
  CHECK(merged.horizon == 2 * grid.t_final());
  for (std::size_t k = 1; k < merged.events.size(); ++k) CHECK(merged.events[k - 1].t_max <= merged.events[k].t_max);
}
