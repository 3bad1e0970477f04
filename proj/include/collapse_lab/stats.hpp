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
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "collapse_lab/core.hpp"

namespace collapse_lab::stats {

/// Streaming mean and variance (Welford).
class RunningStats {
 public:
  void add(double x) noexcept {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }

  void merge(const RunningStats& o) noexcept {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double n = static_cast<double>(n_ + o.n_);
    const double d = o.mean_ - mean_;
    m2_ += o.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
    mean_ += d * static_cast<double>(o.n_) / n;
    n_ += o.n_;
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stddev() const noexcept { return std::sqrt(variance()); }
  double stderr_mean() const noexcept { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline double mean(std::span<const double> xs) {
  RunningStats s;
  for (double x : xs) s.add(x);
  return s.mean();
}

/// Asymptotic Kolmogorov survival function Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2).
inline double kolmogorov_q(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double critical_5 = 0.0;  // statistic threshold at the 5% level
  std::size_t n = 0;
  bool passes(double alpha = 0.05) const noexcept { return p_value > alpha; }
};

namespace detail {
// Stephens' small-sample correction of the asymptotic distribution.
inline double ks_p_value(double d, double n_eff) {
  const double s = std::sqrt(n_eff);
  return kolmogorov_q((s + 0.12 + 0.11 / s) * d);
}
inline double ks_critical_5(double n_eff) {
  const double s = std::sqrt(n_eff);
  return 1.3581 / (s + 0.12 + 0.11 / s);
}
}  // namespace detail

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
inline KsResult ks_one_sample(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.empty()) throw InsufficientData("ks_one_sample: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, detail::ks_p_value(d, n), detail::ks_critical_5(n), xs.size()};
}

/// Two-sample Kolmogorov-Smirnov test.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InsufficientData("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double n_eff = na * nb / (na + nb);
  return {d, detail::ks_p_value(d, n_eff), detail::ks_critical_5(n_eff), a.size() + b.size()};
}

struct ChiSquareResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  bool passes(double alpha = 0.05) const noexcept { return p_value > alpha; }
};

inline double chi_square_sf(double x, double dof) {
  if (dof <= 0.0) throw InvariantViolation("chi_square_sf: dof must be > 0");
  if (x <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), x));
}

/// Pearson goodness of fit with fully specified expectations.
inline ChiSquareResult chi_square_gof(std::span<const double> observed, std::span<const double> expected,
                                      std::size_t fitted_parameters = 0) {
  if (observed.size() != expected.size()) throw DimensionMismatch("chi_square_gof: size mismatch");
  if (observed.size() <= fitted_parameters + 1) throw InsufficientData("chi_square_gof: too few cells");
  double s = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (!(expected[i] > 0.0)) throw InvariantViolation("chi_square_gof: expected counts must be > 0");
    const double r = observed[i] - expected[i];
    s += r * r / expected[i];
  }
  const double dof = static_cast<double>(observed.size() - 1 - fitted_parameters);
  return {s, dof, chi_square_sf(s, dof)};
}

/// Homogeneity of two count vectors with possibly different exposures.
inline ChiSquareResult chi_square_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("chi_square_two_sample: size mismatch");
  double ta = 0.0, tb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ta += a[i];
    tb += b[i];
  }
  if (!(ta > 0.0) || !(tb > 0.0)) throw InsufficientData("chi_square_two_sample: empty sample");
  const double ka = std::sqrt(tb / ta), kb = std::sqrt(ta / tb);
  double s = 0.0;
  std::size_t cells = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] + b[i] <= 0.0) continue;
    const double r = ka * a[i] - kb * b[i];
    s += r * r / (a[i] + b[i]);
    ++cells;
  }
  if (cells < 2) throw InsufficientData("chi_square_two_sample: fewer than two populated cells");
  const double dof = static_cast<double>(cells - 1);
  return {s, dof, chi_square_sf(s, dof)};
}

/// Exact (Garwood) two-sided confidence interval for a Poisson mean given a count.
inline std::pair<double, double> poisson_interval(double count, double confidence = 0.95) {
  if (count < 0.0) throw InvariantViolation("poisson_interval: count must be >= 0");
  const double alpha = 1.0 - confidence;
  const double lo =
      count > 0.0 ? 0.5 * boost::math::quantile(boost::math::chi_squared(2.0 * count), alpha / 2.0) : 0.0;
  const double hi = 0.5 * boost::math::quantile(boost::math::chi_squared(2.0 * count + 2.0), 1.0 - alpha / 2.0);
  return {lo, hi};
}

inline double normal_two_sided_p(double z) {
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z)));
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope x (optionally weighted by 1 / sigma^2).
inline LinearFit linear_regression(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> weights = {}) {
  if (x.size() != y.size() || (!weights.empty() && weights.size() != x.size()))
    throw DimensionMismatch("linear_regression: size mismatch");
  if (x.size() < 2) throw InsufficientData("linear_regression: need at least two points");
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sw += w;
    sx += w * x[i];
    sy += w * y[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sxx += w * (x[i] - mx) * (x[i] - mx);
    sxy += w * (x[i] - mx) * (y[i] - my);
    syy += w * (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw InsufficientData("linear_regression: x values are all equal");
  LinearFit fit;
  fit.n = x.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    rss += w * r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - rss / syy, 0.0, 1.0) : 1.0;
  if (!weights.empty())
    fit.slope_stderr = std::sqrt(1.0 / sxx);
  else if (x.size() > 2)
    fit.slope_stderr = std::sqrt(rss / static_cast<double>(x.size() - 2) / sxx);
  return fit;
}

}  // namespace collapse_lab::stats
