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
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

namespace collapse_lab {

using json = nlohmann::ordered_json;

/// Outcome of one statistical check.
struct Report {
  std::string test;
  json parameters = json::object();
  double estimate = 0.0;
  double stderr_ = 0.0;
  double expected = 0.0;
  double z_score = 0.0;
  bool pass = false;
  json details = json::object();  // test-specific extras (per-checkpoint values, CIs, ...)

  static double z(double estimate, double expected, double stderr_value) {
    if (stderr_value > 0.0) return (estimate - expected) / stderr_value;
    return estimate == expected ? 0.0 : std::copysign(INFINITY, estimate - expected);
  }
};

inline json to_json(const Report& r) {
  json j;
  j["test"] = r.test;
  j["parameters"] = r.parameters;
  j["estimate"] = r.estimate;
  j["stderr"] = r.stderr_;
  j["expected"] = r.expected;
  j["z_score"] = std::isfinite(r.z_score) ? json(r.z_score) : json(r.z_score > 0 ? "inf" : "-inf");
  j["pass"] = r.pass;
  if (!r.details.empty()) j["details"] = r.details;
  return j;
}

}  // namespace collapse_lab
