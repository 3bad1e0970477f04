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

#include "collapse_lab/analysis_collapse.hpp"

using namespace collapse_lab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const ScalarModelSpec kPure{0.0, 0.5, 10.0, ScalarVariant::pure_collapse};

}  // namespace

TEST_CASE("Born rule on collapsed ensembles", "[collapse]") {
  const GridSpec grid{1e-3, 6000, 6000};
  for (double p0 : {0.3, 0.5}) {
    const auto ens = simulate_ensemble(kPure, p0, grid, 101, 3000);
    const auto b = born_statistics(ens);
    INFO("p0 = " << p0 << ", fraction = " << b.fraction_up << " +- " << b.stderr_);
    CHECK(std::abs(b.fraction_up - p0) <= 3.0 * std::sqrt(p0 * (1 - p0) / 3000.0));
    CHECK(b.n_up + b.n_down + b.n_unresolved == b.n);
  }
  const auto sure = simulate_ensemble(kPure, 1.0, grid, 1, 50);
  CHECK(born_statistics(sure).fraction_up == 1.0);
}

TEST_CASE("Born statistics bookkeeping", "[collapse]") {
  const std::vector<double> finals{1.0, 0.995, 0.0, 0.004, 1.0};
  const auto b = born_statistics(finals);
  CHECK(b.n_up == 3);
  CHECK(b.n_down == 2);
  CHECK(b.fraction_up == 0.6);
  CHECK_THAT(b.stderr_, WithinAbs(std::sqrt(0.24 / 5.0), 1e-15));

  std::vector<double> mixed(200, 1.0);
  mixed[0] = 0.5;
  CHECK_NOTHROW(born_statistics(mixed));
  mixed[1] = 0.6;
  mixed[2] = 0.4;
  CHECK_THROWS_AS(born_statistics(mixed), InsufficientData);
  CHECK_THROWS_AS(born_statistics(finals, 0.4), InvariantViolation);

  // A horizon far too short leaves most runs unresolved.
  const auto early = simulate_ensemble(kPure, 0.5, GridSpec{1e-3, 10, 10}, 3, 100);
  CHECK_THROWS_AS(born_statistics(early), InsufficientData);
}

TEST_CASE("exponential fits", "[collapse]") {
  std::vector<double> t, v;
  for (int k = 0; k <= 100; ++k) {
    t.push_back(0.05 * k);
    v.push_back(3.0 * std::exp(-2.0 * t.back()));
  }
  const auto f = fit_exponential_decay(t, v, {0.0, 5.0});
  CHECK_THAT(f.rate, WithinAbs(2.0, 1e-10));
  CHECK_THAT(f.intercept, WithinAbs(std::log(3.0), 1e-10));
  CHECK_THAT(f.r_squared, WithinAbs(1.0, 1e-12));
  CHECK(f.n_points == 101);
  CHECK(fit_exponential_decay(t, v, {1.0, 2.0}).n_points == 21);

  v[50] = 0.0;
  CHECK_THROWS_AS(fit_exponential_decay(t, v, {0.0, 5.0}), InvariantViolation);
  CHECK_THROWS_AS(fit_exponential_decay(t, v, {10.0, 20.0}), InsufficientData);
}

TEST_CASE("decay window stops at the noise floor", "[collapse]") {
  const std::vector<double> t{0, 1, 2, 3, 4, 5}, m{1, 0.5, 0.25, 0.1, 0.01, 0.02}, s(6, 0.005);
  const auto w = decay_window(t, m, s, 1.0);
  CHECK(w.first == 1.0);
  CHECK(w.second == 3.0);
  CHECK_THROWS_AS(decay_window(t, m, s, 4.0), InsufficientData);
}

TEST_CASE("distance to the final state decays at gamma / 8", "[collapse]") {
  const double gamma = 4.0;
  const auto ens = simulate_ensemble({0.0, 0.5, gamma, ScalarVariant::pure_collapse}, 0.5, GridSpec{1e-3, 12000, 100},
                                     7, 1000);
  const auto [mean, se] =
      ensemble_profile(ens, [](const TrajectoryRecord& r, std::size_t k) { return collapse_distance(r.population(k)); });
  const auto& times = ens.front().times;
  const auto fit = fit_exponential_decay(times, mean, decay_window(times, mean, se, 2.0 / gamma));
  INFO("rate = " << fit.rate);
  CHECK_THAT(fit.rate, WithinRel(gamma / 8.0, 0.1));
}

TEST_CASE("martingale test", "[collapse]") {
  const std::vector<double> checkpoints{0.1, 0.5, 2.0};
  const auto ens = simulate_ensemble(kPure, 0.3, GridSpec{1e-3, 2000, 100}, 9, 2000);
  const auto rep = martingale_test(ens, checkpoints, 0.3);
  CHECK(rep.pass);
  CHECK(rep.test == "martingale");
  CHECK(rep.details["checkpoints"].size() == 3);
  CHECK(std::abs(rep.z_score) <= 3.0);

  // A relaxing model drifts towards p_eq and must be rejected.
  const auto thermal = simulate_ensemble({1.0, 0.5, 10.0, ScalarVariant::collapse_thermal}, 0.1,
                                         GridSpec{1e-3, 5000, 100}, 9, 500);
  const std::vector<double> late{5.0};
  const auto bad = martingale_test(thermal, late, 0.1);
  CHECK_FALSE(bad.pass);
  CHECK(bad.z_score > 3.0);

  CHECK_THROWS_AS(martingale_test(ens, std::vector<double>{10.0}, 0.3), InvariantViolation);
  CHECK(record_index(ens.front(), 0.5) == 5);
}
