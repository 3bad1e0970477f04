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
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/container/small_vector.hpp>

namespace collapse_lab {

using cplx = std::complex<double>;

inline constexpr cplx kI{0.0, 1.0};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A state or operator broke one of its stated invariants.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// Not enough samples/events for an estimator to be meaningful.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Tolerances
// ---------------------------------------------------------------------------

namespace tol {
inline constexpr double kHermitian = 1e-12;
inline constexpr double kTrace = 1e-10;
inline constexpr double kPositivity = 1e-10;
inline constexpr double kPurity = 1e-12;
inline constexpr double kReconstruction = 1e-10;
// Violations beyond this multiple of a tolerance are never repaired.
inline constexpr double kAbortFactor = 100.0;
}  // namespace tol

// ---------------------------------------------------------------------------
// ComplexMatrix
// ---------------------------------------------------------------------------

/// Dense square complex matrix, row-major. Storage is inline up to 4x4.
class ComplexMatrix {
 public:
  using storage_type = boost::container::small_vector<cplx, 16>;

  ComplexMatrix() = default;

  explicit ComplexMatrix(std::size_t dim) : dim_(dim), data_(dim * dim, cplx{}) {
    if (dim == 0) throw DimensionMismatch("ComplexMatrix: dimension must be >= 1");
  }

  ComplexMatrix(std::initializer_list<std::initializer_list<cplx>> rows) : dim_(rows.size()) {
    if (dim_ == 0) throw DimensionMismatch("ComplexMatrix: dimension must be >= 1");
    data_.reserve(dim_ * dim_);
    for (const auto& row : rows) {
      if (row.size() != dim_) throw DimensionMismatch("ComplexMatrix: rows must form a square matrix");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static ComplexMatrix identity(std::size_t dim) {
    ComplexMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
  }

  static ComplexMatrix diagonal(std::span<const double> values) {
    ComplexMatrix m(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }
  static ComplexMatrix diagonal(std::initializer_list<double> values) {
    return diagonal(std::span<const double>(values.begin(), values.size()));
  }

  /// |a><b| for column vectors a, b.
  static ComplexMatrix outer(std::span<const cplx> a, std::span<const cplx> b) {
    if (a.size() != b.size()) throw DimensionMismatch("outer: vector sizes differ");
    ComplexMatrix m(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * std::conj(b[j]);
    return m;
  }

  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return dim_ == 0; }

  cplx& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * dim_ + j]; }
  const cplx& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * dim_ + j]; }

  std::span<cplx> data() noexcept { return {data_.data(), data_.size()}; }
  std::span<const cplx> data() const noexcept { return {data_.data(), data_.size()}; }

  std::vector<cplx> column(std::size_t j) const {
    std::vector<cplx> v(dim_);
    for (std::size_t i = 0; i < dim_; ++i) v[i] = (*this)(i, j);
    return v;
  }

  ComplexMatrix adjoint() const {
    ComplexMatrix r(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) r(j, i) = std::conj((*this)(i, j));
    return r;
  }

  cplx trace() const noexcept {
    cplx t{};
    for (std::size_t i = 0; i < dim_; ++i) t += (*this)(i, i);
    return t;
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (const auto& z : data_) m = std::max(m, std::abs(z));
    return m;
  }

  double frobenius_norm() const noexcept {
    double s = 0.0;
    for (const auto& z : data_) s += std::norm(z);
    return std::sqrt(s);
  }

  bool is_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
  }

  /// max_ij |m_ij - conj(m_ji)|
  double hermiticity_error() const noexcept {
    double e = 0.0;
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = i; j < dim_; ++j)
        e = std::max(e, std::abs((*this)(i, j) - std::conj((*this)(j, i))));
    return e;
  }

  ComplexMatrix& operator+=(const ComplexMatrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  ComplexMatrix& operator-=(const ComplexMatrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  ComplexMatrix& operator*=(cplx s) noexcept {
    for (auto& z : data_) z *= s;
    return *this;
  }
  ComplexMatrix& operator*=(double s) noexcept {
    for (auto& z : data_) z *= s;
    return *this;
  }

  /// this += s * o
  ComplexMatrix& add_scaled(const ComplexMatrix& o, cplx s) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += s * o.data_[k];
    return *this;
  }

  friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
  friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
  friend ComplexMatrix operator*(ComplexMatrix a, cplx s) { return a *= s; }
  friend ComplexMatrix operator*(cplx s, ComplexMatrix a) { return a *= s; }
  friend ComplexMatrix operator*(ComplexMatrix a, double s) { return a *= s; }
  friend ComplexMatrix operator*(double s, ComplexMatrix a) { return a *= s; }

  friend ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b) {
    a.check_same(b);
    const std::size_t n = a.dim_;
    ComplexMatrix r(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const cplx aik = a(i, k);
        if (aik == cplx{}) continue;
        for (std::size_t j = 0; j < n; ++j) r(i, j) += aik * b(k, j);
      }
    return r;
  }

  friend bool operator==(const ComplexMatrix& a, const ComplexMatrix& b) {
    return a.dim_ == b.dim_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
  }

 private:
  void check_same(const ComplexMatrix& o) const {
    if (o.dim_ != dim_)
      throw DimensionMismatch("matrix dimensions differ: " + std::to_string(dim_) + " vs " +
                              std::to_string(o.dim_));
  }

  std::size_t dim_ = 0;
  storage_type data_;
};

/// max entry of |a - b|
inline double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
  return (a - b).max_abs();
}

/// (m + m^dagger) / 2
inline ComplexMatrix hermitian_part(const ComplexMatrix& m) {
  ComplexMatrix r(m.dim());
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) r(i, j) = 0.5 * (m(i, j) + std::conj(m(j, i)));
  return r;
}

inline ComplexMatrix commutator(const ComplexMatrix& a, const ComplexMatrix& b) { return a * b - b * a; }

inline ComplexMatrix anticommutator(const ComplexMatrix& a, const ComplexMatrix& b) { return a * b + b * a; }

// Basis convention: index 0 is |+>_z, index 1 is |->_z.
inline ComplexMatrix pauli_x() { return {{0.0, 1.0}, {1.0, 0.0}}; }
inline ComplexMatrix pauli_y() { return {{0.0, -kI}, {kI, 0.0}}; }
inline ComplexMatrix pauli_z() { return {{1.0, 0.0}, {0.0, -1.0}}; }
/// |+><-|_z
inline ComplexMatrix sigma_plus() { return {{0.0, 1.0}, {0.0, 0.0}}; }
/// |-><+|_z
inline ComplexMatrix sigma_minus() { return {{0.0, 0.0}, {1.0, 0.0}}; }

// ---------------------------------------------------------------------------
// Hermitian eigensolver (cyclic complex Jacobi)
// ---------------------------------------------------------------------------

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  ComplexMatrix vectors;       // eigenvectors as columns

  ComplexMatrix reconstruct() const {
    const std::size_t n = values.size();
    ComplexMatrix r(n);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          r(i, j) += values[k] * vectors(i, k) * std::conj(vectors(j, k));
    return r;
  }
};

namespace detail {

// Rotate phase so the first component of non-negligible magnitude is real positive.
inline void normalize_phase(ComplexMatrix& v, std::size_t col) {
  const std::size_t n = v.dim();
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::abs(v(i, col));
    if (a > 1e-10) {
      const cplx phase = std::conj(v(i, col)) / a;
      for (std::size_t r = 0; r < n; ++r) v(r, col) *= phase;
      v(i, col) = a;
      return;
    }
  }
}

inline bool lexicographic_less(const ComplexMatrix& v, std::size_t a, std::size_t b) {
  for (std::size_t i = 0; i < v.dim(); ++i) {
    const cplx x = v(i, a), y = v(i, b);
    if (std::abs(x.real() - y.real()) > 1e-12) return x.real() < y.real();
    if (std::abs(x.imag() - y.imag()) > 1e-12) return x.imag() < y.imag();
  }
  return false;
}

}  // namespace detail

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues come out ascending; equal
/// eigenvalues are ordered by the lexicographic order of their (phase-fixed) eigenvectors.
inline EigenDecomposition eigen_hermitian(const ComplexMatrix& m) {
  if (m.empty()) throw DimensionMismatch("eigen_hermitian: empty matrix");
  const double scale = std::max(1.0, m.max_abs());
  if (m.hermiticity_error() > tol::kHermitian * scale)
    throw InvariantViolation("eigen_hermitian: matrix is not Hermitian");

  const std::size_t n = m.dim();
  ComplexMatrix a = hermitian_part(m);
  ComplexMatrix v = ComplexMatrix::identity(n);

  const double norm2 = std::max(std::norm(a.frobenius_norm()), std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += std::norm(a(p, q));
    if (off <= 1e-32 * norm2) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double mag = std::abs(a(p, q));
        if (mag <= 1e-300) continue;
        const cplx phase = a(p, q) / mag;  // e^{i phi}
        const cplx phase_c = std::conj(phase);
        const double theta = (a(q, q).real() - a(p, p).real()) / (2.0 * mag);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        // A <- A G with G_pp = c, G_pq = s, G_qp = -s e^{-i phi}, G_qq = c e^{-i phi}
        for (std::size_t k = 0; k < n; ++k) {
          const cplx akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * phase_c * akq;
          a(k, q) = s * akp + c * phase_c * akq;
        }
        // A <- G^dagger A
        for (std::size_t k = 0; k < n; ++k) {
          const cplx apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * phase * aqk;
          a(q, k) = s * apk + c * phase * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        a(p, p) = a(p, p).real();
        a(q, q) = a(q, q).real();
        for (std::size_t k = 0; k < n; ++k) {
          const cplx vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * phase_c * vkq;
          v(k, q) = s * vkp + c * phase_c * vkq;
        }
      }
    }
  }

  for (std::size_t k = 0; k < n; ++k) detail::normalize_phase(v, k);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double tie = 1e-12 * scale;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const double lx = a(x, x).real(), ly = a(y, y).real();
    if (std::abs(lx - ly) > tie) return lx < ly;
    return detail::lexicographic_less(v, x, y);
  });

  EigenDecomposition out{std::vector<double>(n), ComplexMatrix(n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]).real();
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

/// Smallest eigenvalue of the Hermitian part of m; closed form for 2x2.
inline double min_eigenvalue(const ComplexMatrix& m) {
  if (m.dim() == 1) return m(0, 0).real();
  if (m.dim() == 2) {
    const double a = m(0, 0).real(), d = m(1, 1).real();
    const cplx b = 0.5 * (m(0, 1) + std::conj(m(1, 0)));
    const double half_gap = std::sqrt(0.25 * (a - d) * (a - d) + std::norm(b));
    return 0.5 * (a + d) - half_gap;
  }
  return eigen_hermitian(hermitian_part(m)).values.front();
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// Hermitian, unit-trace, positive semidefinite matrix.
class DensityMatrix {
 public:
  DensityMatrix() = default;

  /// Validates every invariant; throws InvariantViolation otherwise.
  explicit DensityMatrix(ComplexMatrix m) : m_(std::move(m)) {
    if (m_.empty()) throw DimensionMismatch("DensityMatrix: empty matrix");
    if (!m_.is_finite()) throw InvariantViolation("DensityMatrix: non-finite entries");
    if (m_.hermiticity_error() > tol::kHermitian) throw InvariantViolation("DensityMatrix: not Hermitian");
    if (std::abs(m_.trace() - 1.0) > tol::kTrace) throw InvariantViolation("DensityMatrix: trace differs from 1");
    if (collapse_lab::min_eigenvalue(m_) < -tol::kPositivity)
      throw InvariantViolation("DensityMatrix: negative eigenvalue");
  }

  /// Integrator output after its own projection; positivity is the caller's business.
  static DensityMatrix assume_valid(ComplexMatrix m) {
    DensityMatrix r;
    r.m_ = std::move(m);
    return r;
  }

  /// Pure state |psi><psi| from an (unnormalized) vector.
  static DensityMatrix pure(std::span<const cplx> psi) {
    double n2 = 0.0;
    for (const auto& z : psi) n2 += std::norm(z);
    if (n2 <= 0.0) throw InvariantViolation("DensityMatrix::pure: zero vector");
    ComplexMatrix m = ComplexMatrix::outer(psi, psi);
    m *= 1.0 / n2;
    return DensityMatrix(hermitian_part(m));
  }

  /// Canonical basis state |k><k|.
  static DensityMatrix basis(std::size_t dim, std::size_t k) {
    if (k >= dim) throw DimensionMismatch("DensityMatrix::basis: index out of range");
    ComplexMatrix m(dim);
    m(k, k) = 1.0;
    return DensityMatrix(std::move(m));
  }

  static DensityMatrix maximally_mixed(std::size_t dim) {
    ComplexMatrix m = ComplexMatrix::identity(dim);
    m *= 1.0 / static_cast<double>(dim);
    return DensityMatrix(std::move(m));
  }

  const ComplexMatrix& matrix() const noexcept { return m_; }
  std::size_t dim() const noexcept { return m_.dim(); }
  cplx operator()(std::size_t i, std::size_t j) const noexcept { return m_(i, j); }

  /// <v|rho|v> for a normalized vector v.
  double expectation(std::span<const cplx> v) const {
    if (v.size() != dim()) throw DimensionMismatch("DensityMatrix::expectation: size mismatch");
    cplx s{};
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) s += std::conj(v[i]) * m_(i, j) * v[j];
    return s.real();
  }

  double min_eigenvalue() const { return collapse_lab::min_eigenvalue(m_); }

 private:
  ComplexMatrix m_;
};

/// Qubit density matrix [[p, u], [conj(u), 1 - p]].
struct QubitState {
  double p = 1.0;
  cplx u{};

  QubitState() = default;
  QubitState(double population, cplx coherence) : p(population), u(coherence) {
    if (!(p >= -tol::kPurity && p <= 1.0 + tol::kPurity))
      throw InvariantViolation("QubitState: p outside [0, 1]");
    if (std::norm(u) > p * (1.0 - p) + tol::kPurity)
      throw InvariantViolation("QubitState: |u|^2 exceeds p(1-p)");
  }
};

inline DensityMatrix to_density(const QubitState& q) {
  return DensityMatrix(ComplexMatrix{{q.p, q.u}, {std::conj(q.u), 1.0 - q.p}});
}

inline QubitState from_density(const DensityMatrix& rho) {
  if (rho.dim() != 2) throw DimensionMismatch("from_density: qubit state requires dim 2");
  const auto& m = rho.matrix();
  if (std::abs(m.trace() - 1.0) > tol::kTrace) throw InvariantViolation("from_density: trace differs from 1");
  return QubitState(m(0, 0).real(), m(0, 1));
}

// ---------------------------------------------------------------------------
// Collapse operator
// ---------------------------------------------------------------------------

/// Hermitian operator O = sum_k nu_k |k><k| with its pointer basis.
class CollapseOperator {
 public:
  CollapseOperator() = default;

  explicit CollapseOperator(ComplexMatrix o) : matrix_(std::move(o)) {
    if (matrix_.empty()) throw DimensionMismatch("CollapseOperator: empty matrix");
    if (matrix_.hermiticity_error() > tol::kHermitian * std::max(1.0, matrix_.max_abs()))
      throw InvariantViolation("CollapseOperator: operator must be Hermitian");
    eig_ = eigen_hermitian(matrix_);
    if (max_abs_diff(eig_.reconstruct(), matrix_) > tol::kReconstruction * std::max(1.0, matrix_.max_abs()))
      throw InvariantViolation("CollapseOperator: eigendecomposition does not reconstruct the operator");
    min_gap_ = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < eig_.values.size(); ++k)
      min_gap_ = std::min(min_gap_, eig_.values[k] - eig_.values[k - 1]);
  }

  const ComplexMatrix& matrix() const noexcept { return matrix_; }
  std::size_t dim() const noexcept { return matrix_.dim(); }
  const std::vector<double>& eigenvalues() const noexcept { return eig_.values; }
  /// Pointer states as columns, ordered like eigenvalues().
  const ComplexMatrix& eigenvectors() const noexcept { return eig_.vectors; }
  std::vector<cplx> pointer(std::size_t k) const { return eig_.vectors.column(k); }

  /// Smallest spacing between consecutive eigenvalues (infinity for dim 1).
  double min_gap() const noexcept { return min_gap_; }

  /// Distinct eigenvalues are required by the jump rate formula.
  bool is_degenerate() const noexcept {
    const double scale = std::max(1.0, matrix_.max_abs());
    return min_gap_ <= 1e-9 * scale;
  }

  ComplexMatrix projector(std::size_t k) const {
    const auto v = pointer(k);
    return ComplexMatrix::outer(v, v);
  }

  /// <k|rho|k>
  double fidelity(const ComplexMatrix& rho, std::size_t k) const {
    cplx s{};
    const std::size_t n = dim();
    for (std::size_t i = 0; i < n; ++i) {
      const cplx vi = std::conj(eig_.vectors(i, k));
      for (std::size_t j = 0; j < n; ++j) s += vi * rho(i, j) * eig_.vectors(j, k);
    }
    return s.real();
  }

 private:
  ComplexMatrix matrix_;
  EigenDecomposition eig_;
  double min_gap_ = 0.0;
};

// ---------------------------------------------------------------------------
// Superoperators
// ---------------------------------------------------------------------------

/// D[O](rho) = O rho O^dagger - 1/2 {O^dagger O, rho}
inline ComplexMatrix lindblad_dissipator(const ComplexMatrix& o, const ComplexMatrix& rho) {
  if (o.dim() != rho.dim()) throw DimensionMismatch("lindblad_dissipator: operator and state dimensions differ");
  const ComplexMatrix od = o.adjoint();
  const ComplexMatrix odo = od * o;
  ComplexMatrix r = o * rho * od;
  r.add_scaled(anticommutator(odo, rho), -0.5);
  return r;
}

inline ComplexMatrix lindblad_dissipator(const ComplexMatrix& o, const DensityMatrix& rho) {
  return lindblad_dissipator(o, rho.matrix());
}

/// H[O](rho) = O rho + rho O^dagger - tr[(O + O^dagger) rho] rho
inline ComplexMatrix innovation_superop(const ComplexMatrix& o, const ComplexMatrix& rho) {
  if (o.dim() != rho.dim()) throw DimensionMismatch("innovation_superop: operator and state dimensions differ");
  const ComplexMatrix od = o.adjoint();
  ComplexMatrix r = o * rho + rho * od;
  const cplx mean = ((o + od) * rho).trace();
  r.add_scaled(rho, -mean);
  return r;
}

inline ComplexMatrix innovation_superop(const ComplexMatrix& o, const DensityMatrix& rho) {
  return innovation_superop(o, rho.matrix());
}

}  // namespace collapse_lab
