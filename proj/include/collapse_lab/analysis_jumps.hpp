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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "collapse_lab/core.hpp"
#include "collapse_lab/models.hpp"
#include "collapse_lab/report.hpp"
#include "collapse_lab/sde.hpp"
#include "collapse_lab/stats.hpp"

namespace collapse_lab {

// ---------------------------------------------------------------------------
// Liouvillian tensor
// ---------------------------------------------------------------------------

/// Which parts of the Liouvillian grow with the collapse rate.
struct ScalingDeclaration {
  /// The model Hamiltonian is the rescaled H~, and the dynamics use H = sqrt(G) H~.
  bool zeno_rescaled = false;
};

/// L^{ij}_{kl} = [L(|k><l|)]_{ij} in the pointer basis of O, with its scaling parts.
class LiouvillianTensor {
 public:
  LiouvillianTensor() = default;
  LiouvillianTensor(std::size_t dim, double gamma) : dim_(dim), gamma_(gamma), data_(dim * dim * dim * dim) {}

  std::size_t dim() const noexcept { return dim_; }
  double gamma() const noexcept { return gamma_; }

  cplx& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) noexcept {
    return data_[((i * dim_ + j) * dim_ + k) * dim_ + l];
  }
  cplx operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const noexcept {
    return data_[((i * dim_ + j) * dim_ + k) * dim_ + l];
  }

  /// [L(rho)]_{ij} = sum_{kl} L^{ij}_{kl} rho_{kl}, all in the pointer basis.
  ComplexMatrix apply(const ComplexMatrix& rho) const {
    if (rho.dim() != dim_) throw DimensionMismatch("LiouvillianTensor::apply: dimension mismatch");
    ComplexMatrix out(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) {
        cplx s{};
        for (std::size_t k = 0; k < dim_; ++k)
          for (std::size_t l = 0; l < dim_; ++l) s += (*this)(i, j, k, l) * rho(k, l);
        out(i, j) = s;
      }
    return out;
  }

  double a(std::size_t i, std::size_t l) const { return (*this)(i, i, l, l).real(); }
  cplx b(std::size_t i, std::size_t k, std::size_t l) const { return (*this)(i, i, k, l) / std::sqrt(gamma_); }
  cplx c(std::size_t i, std::size_t j, std::size_t l) const { return (*this)(i, j, l, l) / std::sqrt(gamma_); }
  double d(std::size_t k, std::size_t l) const { return -((*this)(k, l, k, l) / gamma_).real(); }

  double max_abs() const noexcept {
    double m = 0.0;
    for (const auto& z : data_) m = std::max(m, std::abs(z));
    return m;
  }

 private:
  std::size_t dim_ = 0;
  double gamma_ = 1.0;
  std::vector<cplx> data_;
};

/// Tensor of L(rho) = -i[H, rho] + sum_j D[L_j](rho), expressed in the eigenbasis of O.
inline LiouvillianTensor liouvillian_from_model(const ModelSpec& model, ScalingDeclaration scaling = {}) {
  const double gamma = model.collapse_rate();
  if (!(gamma > 0.0)) throw InvariantViolation("liouvillian_from_model: the scaling parts need a collapse rate > 0");
  const std::size_t n = model.dim();
  const auto& v = model.collapse_op().eigenvectors();
  const ComplexMatrix vd = v.adjoint();
  const ComplexMatrix h = scaling.zeno_rescaled ? model.hamiltonian() * std::sqrt(gamma) : model.hamiltonian();

  // The Hamiltonian part and the channel part are kept apart: only the latter may carry
  // the O(gamma) decoherence block D of the scaling hypothesis.
  LiouvillianTensor t(n, gamma), channels(n, gamma);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      ComplexMatrix e(n);
      e(k, l) = 1.0;
      const ComplexMatrix x = v * e * vd;
      ComplexMatrix dx(n);
      for (const auto& c : model.channels()) dx += lindblad_dissipator(c, x);
      const ComplexMatrix hx = vd * (commutator(h, x) * (-kI)) * v;
      const ComplexMatrix y = vd * dx * v;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          channels(i, j, k, l) = y(i, j);
          t(i, j, k, l) = y(i, j) + hx(i, j);
        }
    }

  const double scale = std::max(1.0, t.max_abs());
  const double tol = 1e-10 * scale;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      cplx tr{};
      for (std::size_t i = 0; i < n; ++i) tr += t(i, i, k, l);
      if (std::abs(tr) > tol) throw InvariantViolation("liouvillian_from_model: tensor does not preserve the trace");
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < n; ++l)
      if (i != l && t.a(i, l) < -tol) throw InvariantViolation("liouvillian_from_model: A has a negative off-diagonal");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < n; ++l) {
          if (i == j || k == l || (i == k && j == l)) continue;
          if (std::abs(channels(i, j, k, l)) > tol)
            throw InvariantViolation(
                "liouvillian_from_model: coherence-to-coherence coupling outside the diagonal D part is not "
                "covered by the jump theorem");
        }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l)
      if (k != l && t.d(k, l) < -tol / gamma)
        throw InvariantViolation("liouvillian_from_model: negative decoherence rate d_kl");
  return t;
}

// ---------------------------------------------------------------------------
// Rate matrices
// ---------------------------------------------------------------------------

/// M(i, j) = rate of i <- j; columns sum to zero.
class RateMatrix {
 public:
  RateMatrix() = default;
  explicit RateMatrix(std::size_t dim) : dim_(dim), m_(dim * dim, 0.0) {}

  std::size_t dim() const noexcept { return dim_; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return m_[i * dim_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return m_[i * dim_ + j]; }

  /// Total escape rate from state j.
  double escape_rate(std::size_t j) const { return -(*this)(j, j); }

  void complete_diagonal() {
    for (std::size_t j = 0; j < dim_; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim_; ++i)
        if (i != j) s += (*this)(i, j);
      (*this)(j, j) = -s;
    }
  }

  void validate(double tol = 1e-12) const {
    for (double x : m_)
      if (!std::isfinite(x)) throw InvariantViolation("RateMatrix: non-finite entry");
    for (std::size_t j = 0; j < dim_; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        s += (*this)(i, j);
        if (i != j && (*this)(i, j) < -tol)
          throw InvariantViolation("RateMatrix: negative off-diagonal rate (check the declared scaling)");
      }
      if (std::abs(s) > tol * std::max(1.0, escape_rate(j))) throw InvariantViolation("RateMatrix: column sum differs from 0");
    }
  }

  json to_json() const {
    json rows = json::array();
    for (std::size_t i = 0; i < dim_; ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < dim_; ++j) row.push_back((*this)(i, j));
      rows.push_back(row);
    }
    return rows;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> m_;
};

/// M_{i<-j} = A^i_j + 2 Re sum_{k<l} B^i_{kl} C^{kl}_j / Delta_{kl},
/// Delta_{kl} = |nu_k - nu_l|^2 / 2 + d_{kl}.
inline RateMatrix theoretical_rates(const LiouvillianTensor& t, const CollapseOperator& o) {
  const std::size_t n = t.dim();
  if (o.dim() != n) throw DimensionMismatch("theoretical_rates: tensor and operator dimensions differ");
  if (o.is_degenerate()) throw InvariantViolation("theoretical_rates: O has degenerate eigenvalues");
  const auto& nu = o.eigenvalues();
  RateMatrix m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double r = t.a(i, j);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = k + 1; l < n; ++l) {
          const double delta = 0.5 * (nu[k] - nu[l]) * (nu[k] - nu[l]) + t.d(k, l);
          r += 2.0 * (t.b(i, k, l) * t.c(k, l, j)).real() / delta;
        }
      m(i, j) = r;
    }
  m.complete_diagonal();
  m.validate(1e-12 * std::max(1.0, t.max_abs()));
  return m;
}

inline RateMatrix theoretical_rates(const ModelSpec& model, ScalingDeclaration scaling = {}) {
  return theoretical_rates(liouvillian_from_model(model, scaling), model.collapse_op());
}

// ---------------------------------------------------------------------------
// Jump extraction
// ---------------------------------------------------------------------------

struct JumpEvent {
  double time = 0.0;
  std::size_t from_state = 0;
  std::size_t to_state = 0;
};

inline constexpr double kDefaultHysteresis = 0.02;

/// Occupation times, transition counts and dwell samples, mergeable across trajectories.
struct JumpStatistics {
  std::size_t dim = 0;
  std::vector<double> occupation;                 // time spent labeled j
  std::vector<std::uint64_t> counts;              // counts[i * dim + j]: transitions j -> i
  std::vector<std::vector<double>> dwell;         // completed sojourns between two jumps, per state
  double unassigned_time = 0.0;
  double total_time = 0.0;

  explicit JumpStatistics(std::size_t d = 0) : dim(d), occupation(d, 0.0), counts(d * d, 0), dwell(d) {}

  std::uint64_t count(std::size_t to, std::size_t from) const { return counts[to * dim + from]; }
  std::uint64_t total_jumps() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  void merge(const JumpStatistics& o) {
    if (o.dim != dim) throw DimensionMismatch("JumpStatistics::merge: dimension mismatch");
    for (std::size_t j = 0; j < dim; ++j) {
      occupation[j] += o.occupation[j];
      dwell[j].insert(dwell[j].end(), o.dwell[j].begin(), o.dwell[j].end());
    }
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += o.counts[k];
    unassigned_time += o.unassigned_time;
    total_time += o.total_time;
  }
};

/// Streaming pointer assignment with hysteresis: the label becomes k once the fidelity
/// with pointer k exceeds 1 - theta, and is kept until another pointer does the same.
class JumpTracker {
 public:
  static constexpr int kUndefined = -1;

  JumpTracker(std::size_t dim, double theta = kDefaultHysteresis, bool keep_events = true)
      : theta_(theta), keep_events_(keep_events), stats_(dim) {
    if (!(theta > 0.0 && theta < 0.5)) throw InvariantViolation("JumpTracker: theta must lie in (0, 0.5)");
    if (dim < 2) throw InvariantViolation("JumpTracker: need at least two pointers");
  }

  /// Feeds the pointer fidelities of the sample at time t; returns the label after it.
  int observe(double t, std::span<const double> fidelity) {
    if (fidelity.size() != stats_.dim) throw DimensionMismatch("JumpTracker: wrong number of fidelities");
    if (started_) account(t);
    started_ = true;
    t_prev_ = t;
    for (std::size_t k = 0; k < fidelity.size(); ++k) {
      if (static_cast<int>(k) == label_ || !(fidelity[k] > 1.0 - theta_)) continue;
      if (label_ != kUndefined) {
        ++stats_.counts[k * stats_.dim + static_cast<std::size_t>(label_)];
        if (last_jump_) stats_.dwell[static_cast<std::size_t>(label_)].push_back(t - *last_jump_);
        if (keep_events_) events_.push_back({t, static_cast<std::size_t>(label_), k});
        last_jump_ = t;
      }
      label_ = static_cast<int>(k);
      break;
    }
    return label_;
  }

  /// Two-pointer convenience: fidelities (1 - p, p) for O = sigma_z / 2 ordered by eigenvalue.
  int observe_population(double t, double p) {
    const double f[2] = {1.0 - p, p};
    return observe(t, f);
  }

  int label() const noexcept { return label_; }
  const std::vector<JumpEvent>& events() const noexcept { return events_; }
  const JumpStatistics& statistics() const noexcept { return stats_; }

 private:
  void account(double t) {
    const double dt = t - t_prev_;
    if (!(dt >= 0.0)) throw InvariantViolation("JumpTracker: times must be non-decreasing");
    stats_.total_time += dt;
    if (label_ == kUndefined)
      stats_.unassigned_time += dt;
    else
      stats_.occupation[static_cast<std::size_t>(label_)] += dt;
  }

  double theta_;
  bool keep_events_;
  JumpStatistics stats_;
  std::vector<JumpEvent> events_;
  int label_ = kUndefined;
  bool started_ = false;
  double t_prev_ = 0.0;
  std::optional<double> last_jump_;
};

struct JumpExtraction {
  std::vector<int> assignments;  // label per recorded sample, -1 before the first pointer is reached
  std::vector<JumpEvent> events;
  JumpStatistics statistics;
  bool reached_pointer = false;
};

/// Pointer fidelities <k|rho|k> of every eigenvector of O.
inline std::vector<double> pointer_fidelities(const CollapseOperator& o, const ComplexMatrix& rho) {
  std::vector<double> f(o.dim());
  for (std::size_t k = 0; k < o.dim(); ++k) f[k] = o.fidelity(rho, k);
  return f;
}

/// Labels every recorded sample and lists the label changes. For scalar records the state
/// is read as diag(p, 1 - p).
inline JumpExtraction extract_jumps(const TrajectoryRecord& traj, const CollapseOperator& o,
                                    double theta = kDefaultHysteresis) {
  if (traj.grid.record_stride != 1) throw InvariantViolation("extract_jumps: needs a full-resolution record");
  JumpTracker tracker(o.dim(), theta);
  JumpExtraction out{{}, {}, JumpStatistics(o.dim()), false};
  out.assignments.reserve(traj.size());
  std::vector<double> f(o.dim());
  std::vector<double> w0(o.dim()), w1(o.dim());
  if (traj.is_scalar()) {
    if (o.dim() != 2) throw DimensionMismatch("extract_jumps: scalar records need a two-level operator");
    for (std::size_t k = 0; k < 2; ++k) {
      w0[k] = std::norm(o.eigenvectors()(0, k));
      w1[k] = std::norm(o.eigenvectors()(1, k));
    }
  }
  for (std::size_t n = 0; n < traj.size(); ++n) {
    if (traj.is_scalar()) {
      const double p = traj.populations()[n];
      for (std::size_t k = 0; k < 2; ++k) f[k] = p * w0[k] + (1.0 - p) * w1[k];
    } else {
      f = pointer_fidelities(o, traj.densities()[n].matrix());
    }
    out.assignments.push_back(tracker.observe(traj.times[n], f));
  }
  out.events = tracker.events();
  out.statistics = tracker.statistics();
  out.reached_pointer = std::any_of(out.assignments.begin(), out.assignments.end(),
                                    [](int a) { return a != JumpTracker::kUndefined; });
  return out;
}

/// Jump statistics of a matrix model run without storing the trajectory.
inline JumpStatistics stream_jump_statistics(const ModelSpec& model, const DensityMatrix& initial, const GridSpec& grid,
                                             const RandomnessSpec& randomness, Scheme scheme,
                                             double theta = kDefaultHysteresis, StepDiagnostics* diagnostics = nullptr) {
  const auto& o = model.collapse_op();
  JumpTracker tracker(o.dim(), theta, false);
  std::vector<double> f(o.dim());
  const auto diag = simulate_observed(model, initial, grid, randomness, scheme,
                                      [&](std::uint64_t, double t, const ComplexMatrix& rho) {
                                        for (std::size_t k = 0; k < o.dim(); ++k) f[k] = o.fidelity(rho, k);
                                        tracker.observe(t, f);
                                      });
  if (diagnostics) *diagnostics = diag;
  return tracker.statistics();
}

// ---------------------------------------------------------------------------
// Empirical rates
// ---------------------------------------------------------------------------

struct EmpiricalRates {
  RateMatrix estimate;
  RateMatrix ci_low;
  RateMatrix ci_high;
  JumpStatistics statistics;
  bool sufficient = true;  // every off-diagonal transition seen at least min_events times
  std::vector<std::string> warnings;
};

/// M^_{i<-j} = (jumps j -> i) / (time labeled j), with exact Poisson intervals.
inline EmpiricalRates empirical_rates(const JumpStatistics& s, double confidence = 0.95, std::uint64_t min_events = 10) {
  EmpiricalRates r{RateMatrix(s.dim), RateMatrix(s.dim), RateMatrix(s.dim), s, true, {}};
  for (std::size_t j = 0; j < s.dim; ++j) {
    const double occ = s.occupation[j];
    for (std::size_t i = 0; i < s.dim; ++i) {
      if (i == j) continue;
      const auto c = s.count(i, j);
      if (c < min_events) {
        r.sufficient = false;
        r.warnings.push_back("only " + std::to_string(c) + " transitions " + std::to_string(j) + " -> " +
                             std::to_string(i));
      }
      if (!(occ > 0.0)) {
        r.sufficient = false;
        continue;
      }
      const auto [lo, hi] = stats::poisson_interval(static_cast<double>(c), confidence);
      r.estimate(i, j) = static_cast<double>(c) / occ;
      r.ci_low(i, j) = lo / occ;
      r.ci_high(i, j) = hi / occ;
    }
  }
  r.estimate.complete_diagonal();
  return r;
}

inline EmpiricalRates empirical_rates(const std::vector<JumpEvent>& events, std::span<const double> occupation,
                                      double confidence = 0.95) {
  JumpStatistics s(occupation.size());
  std::copy(occupation.begin(), occupation.end(), s.occupation.begin());
  for (const auto& e : events) {
    if (e.from_state >= s.dim || e.to_state >= s.dim || e.from_state == e.to_state)
      throw InvariantViolation("empirical_rates: invalid event");
    ++s.counts[e.to_state * s.dim + e.from_state];
  }
  return empirical_rates(s, confidence);
}

// ---------------------------------------------------------------------------
// Dwell times
// ---------------------------------------------------------------------------

/// KS test of the dwell times in each state against Exponential(total escape rate).
inline Report dwell_time_test(const JumpStatistics& s, const RateMatrix& rates, std::size_t min_samples = 50) {
  if (rates.dim() != s.dim) throw DimensionMismatch("dwell_time_test: dimension mismatch");
  Report rep;
  rep.test = "dwell_time_ks";
  rep.parameters = {{"min_samples", min_samples}};
  rep.pass = true;
  json per = json::array();
  double worst_ratio = 0.0;
  for (std::size_t j = 0; j < s.dim; ++j) {
    if (s.dwell[j].size() < min_samples)
      throw InsufficientData("dwell_time_test: " + std::to_string(s.dwell[j].size()) + " dwell samples in state " +
                             std::to_string(j));
    const double rate = rates.escape_rate(j);
    const auto ks = stats::ks_one_sample(s.dwell[j], [rate](double x) { return x > 0.0 ? 1.0 - std::exp(-rate * x) : 0.0; });
    per.push_back({{"state", j},
                   {"n", ks.n},
                   {"escape_rate", rate},
                   {"ks_statistic", ks.statistic},
                   {"critical_5", ks.critical_5},
                   {"p_value", ks.p_value}});
    if (!(ks.statistic < ks.critical_5)) rep.pass = false;
    const double ratio = ks.statistic / ks.critical_5;
    if (ratio >= worst_ratio) {
      worst_ratio = ratio;
      rep.estimate = ks.statistic;
      rep.expected = ks.critical_5;
    }
  }
  rep.details["states"] = std::move(per);
  return rep;
}

}  // namespace collapse_lab
