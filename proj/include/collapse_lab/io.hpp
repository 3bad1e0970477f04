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

#include <charconv>
#include <ostream>
#include <string>
#include <vector>

#include "collapse_lab/analysis_spikes.hpp"
#include "collapse_lab/core.hpp"
#include "collapse_lab/models.hpp"
#include "collapse_lab/report.hpp"
#include "collapse_lab/sde.hpp"

namespace collapse_lab {

inline constexpr const char* kVersion = "0.1.0";

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Matrices and models
// ---------------------------------------------------------------------------

/// Rows of [re, im] pairs.
inline json matrix_to_json(const ComplexMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.dim(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.dim(); ++j) row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ComplexMatrix matrix_from_json(const json& j, std::size_t dim, const std::string& where) {
  if (!j.is_array() || j.size() != dim) throw DimensionMismatch(where + ": expected " + std::to_string(dim) + " rows");
  ComplexMatrix m(dim);
  for (std::size_t r = 0; r < dim; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != dim)
      throw DimensionMismatch(where + "[" + std::to_string(r) + "]: expected " + std::to_string(dim) + " entries");
    for (std::size_t c = 0; c < dim; ++c) {
      const auto& e = row[c];
      if (e.is_number())
        m(r, c) = e.get<double>();
      else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number())
        m(r, c) = cplx(e[0].get<double>(), e[1].get<double>());
      else
        throw Error(where + "[" + std::to_string(r) + "][" + std::to_string(c) + "]: expected a number or [re, im]");
    }
  }
  return m;
}

/// {name, dim, H, channels, O, gamma, eta}
inline json model_to_json(const ModelSpec& m) {
  json ch = json::array();
  for (const auto& l : m.channels()) ch.push_back(matrix_to_json(l));
  json j;
  j["name"] = m.name();
  j["dim"] = m.dim();
  j["H"] = matrix_to_json(m.hamiltonian());
  j["channels"] = std::move(ch);
  j["O"] = matrix_to_json(m.collapse_op().matrix());
  j["gamma"] = m.collapse_rate();
  j["eta"] = m.efficiency();
  return j;
}

inline ModelSpec model_from_json(const json& j) {
  if (!j.is_object()) throw Error("model: expected an object");
  if (!j.contains("dim") || !j["dim"].is_number_integer() || j["dim"].get<std::int64_t>() < 1)
    throw Error("model.dim: expected a positive integer");
  const auto dim = j["dim"].get<std::size_t>();
  const ComplexMatrix h = j.contains("H") ? matrix_from_json(j["H"], dim, "model.H") : ComplexMatrix(dim);
  std::vector<ComplexMatrix> channels;
  if (j.contains("channels")) {
    if (!j["channels"].is_array()) throw Error("model.channels: expected an array");
    for (std::size_t k = 0; k < j["channels"].size(); ++k)
      channels.push_back(matrix_from_json(j["channels"][k], dim, "model.channels[" + std::to_string(k) + "]"));
  }
  if (!j.contains("O")) throw Error("model.O: missing");
  const ComplexMatrix o = matrix_from_json(j["O"], dim, "model.O");
  if (!j.contains("gamma") || !j["gamma"].is_number()) throw Error("model.gamma: expected a number");
  if (j.contains("eta") && !j["eta"].is_number()) throw Error("model.eta: expected a number");
  if (j.contains("name") && !j["name"].is_string()) throw Error("model.name: expected a string");
  const double eta = j.contains("eta") ? j["eta"].get<double>() : 1.0;
  return ModelSpec(j.value("name", std::string("custom")), h, std::move(channels), CollapseOperator(o),
                   j["gamma"].get<double>(), eta);
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Column names: t, p for scalar records; t, p, re_u, im_u for qubits; t and row-major
/// re/im pairs of rho otherwise.
inline std::vector<std::string> trajectory_columns(const TrajectoryRecord& r) {
  std::vector<std::string> cols{"t"};
  if (r.is_scalar()) {
    cols.push_back("p");
  } else if (r.densities().front().dim() == 2) {
    cols.insert(cols.end(), {"p", "re_u", "im_u"});
  } else {
    const auto d = r.densities().front().dim();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const std::string ij = std::to_string(i) + "_" + std::to_string(j);
        cols.push_back("re_rho_" + ij);
        cols.push_back("im_rho_" + ij);
      }
  }
  return cols;
}

inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& r) {
  const auto cols = trajectory_columns(r);
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
  os << '\n';
  for (std::size_t k = 0; k < r.size(); ++k) {
    os << format_double(r.times[k]);
    if (r.is_scalar()) {
      os << ',' << format_double(r.populations()[k]);
    } else {
      const auto& m = r.densities()[k].matrix();
      if (m.dim() == 2) {
        os << ',' << format_double(m(0, 0).real()) << ',' << format_double(m(0, 1).real()) << ','
           << format_double(m(0, 1).imag());
      } else {
        for (const auto& z : m.data()) os << ',' << format_double(z.real()) << ',' << format_double(z.imag());
      }
    }
    os << '\n';
  }
}

/// {model, grid, seed, scheme, code_version, diagnostics}
inline json trajectory_header(const TrajectoryRecord& r, const json& model) {
  json j;
  j["model"] = model;
  j["grid"] = {{"dt", r.grid.dt}, {"n_steps", r.grid.n_steps}, {"record_stride", r.grid.record_stride}};
  j["seed"] = {{"master_seed", r.randomness.master_seed}, {"trajectory_index", r.randomness.trajectory_index}};
  j["scheme"] = to_string(r.scheme);
  j["code_version"] = kVersion;
  j["columns"] = trajectory_columns(r);
  j["diagnostics"] = {{"clamp_events", r.diagnostics.clamp_events},
                      {"absorptions", r.diagnostics.absorptions},
                      {"positivity_violations", r.diagnostics.positivity_violations},
                      {"repairs", r.diagnostics.repairs},
                      {"min_eigenvalue", r.diagnostics.min_eigenvalue}};
  return j;
}

// ---------------------------------------------------------------------------
// Spikes and filters
// ---------------------------------------------------------------------------

inline void write_spikes_csv(std::ostream& os, const std::vector<SpikeEvent>& events) {
  os << "trajectory,t_max,height,origin,completed\n";
  for (const auto& e : events)
    os << e.trajectory << ',' << format_double(e.t_max) << ',' << format_double(e.height) << ',' << to_string(e.origin)
       << ',' << (e.completed ? "true" : "false") << '\n';
}

/// Columns t, R_t, p_f, p_fb; p_fb may be empty.
inline void write_hmm_csv(std::ostream& os, double dt, const std::vector<int>& hidden, const std::vector<double>& filtered,
                          const std::vector<double>& smoothed) {
  if (hidden.size() != filtered.size() || (!smoothed.empty() && smoothed.size() != filtered.size()))
    throw DimensionMismatch("write_hmm_csv: column lengths differ");
  os << "t,R_t,p_f,p_fb\n";
  for (std::size_t k = 0; k < filtered.size(); ++k) {
    os << format_double(dt * static_cast<double>(k)) << ',' << hidden[k] << ',' << format_double(filtered[k]) << ',';
    if (!smoothed.empty()) os << format_double(smoothed[k]);
    os << '\n';
  }
}

}  // namespace collapse_lab
