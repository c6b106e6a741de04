// Copyright 2026 The qpgp-ilc Authors
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

/// @file
/// Covariance kernels on the integer timestep grid, and the two projections
/// (diagonal averaging, eigenvalue clipping) that turn an empirical
/// within-iteration covariance into a valid stationary kernel.

#include "qpgp_ilc/core.hpp"
#include "qpgp_ilc/detail/optimize.hpp"

#include <Eigen/Eigenvalues>

#include <numbers>
#include <optional>
#include <string_view>

namespace qpgp_ilc {

enum class KernelKind { rbf, periodic, general };

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::rbf: return "rbf";
    case KernelKind::periodic: return "periodic";
    case KernelKind::general: return "general";
  }
  return "unknown";
}

inline KernelKind kernel_kind_from_string(std::string_view name) {
  if (name == "rbf") return KernelKind::rbf;
  if (name == "periodic") return KernelKind::periodic;
  if (name == "general") return KernelKind::general;
  throw ConfigError("unknown kernel family '" + std::string(name) + "'");
}

/// A parametric stationary kernel: variance plus family-specific parameters
/// (lengthscale for rbf; lengthscale and period for periodic; none for general).
struct KernelFamily {
  KernelKind kind = KernelKind::general;
  double variance = 1.0;
  Vector params;

  static KernelFamily rbf(double variance, double lengthscale) {
    KernelFamily k{KernelKind::rbf, variance, Vector(1)};
    k.params << lengthscale;
    k.validate();
    return k;
  }

  static KernelFamily periodic(double variance, double lengthscale, double period) {
    KernelFamily k{KernelKind::periodic, variance, Vector(2)};
    k.params << lengthscale, period;
    k.validate();
    return k;
  }

  static KernelFamily general() { return KernelFamily{KernelKind::general, 1.0, Vector()}; }

  double lengthscale() const { return params(0); }
  double period() const { return params(1); }

  void validate() const {
    if (kind == KernelKind::general) return;
    if (!(variance > 0.0)) throw ParameterError("kernel variance must be positive");
    const Eigen::Index want = kind == KernelKind::rbf ? 1 : 2;
    if (params.size() != want) throw ParameterError("wrong number of kernel parameters for " + std::string(to_string(kind)));
    for (Eigen::Index k = 0; k < params.size(); ++k)
      if (!(params(k) > 0.0)) throw ParameterError("kernel lengthscale/period must be positive");
  }
};

/// Squared-exponential kernel sigma2 * exp(-(t - t2)^2 / (2 l^2)).
inline double eval_rbf(double t, double t2, double variance, double lengthscale) {
  if (!(variance > 0.0) || !(lengthscale > 0.0)) throw ParameterError("eval_rbf: variance and lengthscale must be positive");
  const double d = t - t2;
  return variance * std::exp(-d * d / (2.0 * lengthscale * lengthscale));
}

/// Exp-sine-squared kernel sigma2 * exp(-2 sin^2(pi (t - t2) / T) / l^2).
inline double eval_periodic(double t, double t2, double variance, double lengthscale, double period) {
  if (!(variance > 0.0) || !(lengthscale > 0.0) || !(period > 0.0))
    throw ParameterError("eval_periodic: variance, lengthscale and period must be positive");
  const double s = std::sin(std::numbers::pi * (t - t2) / period);
  return variance * std::exp(-2.0 * s * s / (lengthscale * lengthscale));
}

inline double evaluate(const KernelFamily& family, double t, double t2) {
  switch (family.kind) {
    case KernelKind::rbf: return eval_rbf(t, t2, family.variance, family.lengthscale());
    case KernelKind::periodic: return eval_periodic(t, t2, family.variance, family.lengthscale(), family.period());
    case KernelKind::general: break;
  }
  throw ParameterError("a general kernel has no closed-form evaluation");
}

/// Symmetric PSD p x p covariance over one iteration.
struct CovKernel {
  Matrix values;
  bool stationary = false;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }

  /// Smallest eigenvalue of the kernel matrix.
  double min_eigenvalue() const {
    if (values.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(values, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
  }

  /// Throws ShapeError unless the kernel is square, symmetric, PSD (to -1e-10)
  /// and, when flagged stationary, constant along every diagonal.
  void validate(double tol = 1e-10) const;
};

namespace detail {

inline bool is_toeplitz(const Matrix& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (Eigen::Index d = 0; d < m.rows(); ++d) {
    const double ref = m(d, 0);
    for (Eigen::Index r = d; r < m.rows(); ++r)
      if (std::abs(m(r, r - d) - ref) > tol * scale) return false;
    for (Eigen::Index c = d; c < m.cols(); ++c)
      if (std::abs(m(c - d, c) - ref) > tol * scale) return false;
  }
  return true;
}

}  // namespace detail

inline void CovKernel::validate(double tol) const {
  if (values.rows() != values.cols()) throw ShapeError("kernel matrix is not square");
  if (!detail::is_symmetric(values, tol)) throw ShapeError("kernel matrix is not symmetric");
  if (min_eigenvalue() < -tol) throw ShapeError("kernel matrix is not positive semidefinite");
  if (stationary && !detail::is_toeplitz(values, std::max(tol, 1e-9))) throw ShapeError("stationary kernel is not Toeplitz");
}

/// Evaluates the family at the integer grid 1..p.
inline CovKernel build_cov_matrix(const KernelFamily& family, std::size_t p) {
  if (p == 0) throw ShapeError("build_cov_matrix: p must be at least 1");
  family.validate();
  if (family.kind == KernelKind::general) throw ParameterError("build_cov_matrix: general kernels are data-driven");
  const auto n = static_cast<Eigen::Index>(p);
  CovKernel out{Matrix(n, n), true};
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      const double v = evaluate(family, static_cast<double>(a + 1), static_cast<double>(b + 1));
      out.values(a, b) = v;
      out.values(b, a) = v;
    }
  }
  return out;
}

/// Frobenius-nearest symmetric Toeplitz matrix: the value at lag d is the mean
/// of all entries at offsets +d and -d.
inline Matrix toeplitz_project(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("toeplitz_project: matrix must be square");
  const Eigen::Index n = m.rows();
  Vector lag_mean = Vector::Zero(n);
  for (Eigen::Index d = 0; d < n; ++d) {
    double s = 0.0;
    for (Eigen::Index r = d; r < n; ++r) s += m(r, r - d) + m(r - d, r);
    lag_mean(d) = s / static_cast<double>(2 * (n - d));
  }
  Matrix out(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) out(r, c) = lag_mean(std::abs(r - c));
  return out;
}

/// Default eigenvalue floor: 1e-8 of the mean diagonal.
inline double default_psd_floor(const Matrix& m, double relative = 1e-8) {
  if (m.rows() == 0) return 0.0;
  return relative * std::max(0.0, m.trace()) / static_cast<double>(m.rows());
}

/// Clips every eigenvalue below `floor` up to `floor`.
inline CovKernel psd_truncate(const Matrix& m, double floor) {
  if (m.rows() != m.cols()) throw ShapeError("psd_truncate: matrix must be square");
  if (!detail::is_symmetric(m, 1e-9)) throw ShapeError("psd_truncate: matrix must be symmetric");
  if (!(floor >= 0.0)) throw ParameterError("psd_truncate: floor must be non-negative");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("psd_truncate: eigendecomposition failed");
  const Vector& lambda = es.eigenvalues();
  if (lambda.size() == 0 || lambda(0) >= floor) {
    return CovKernel{sym, detail::is_toeplitz(sym)};
  }
  const Vector clipped = lambda.cwiseMax(floor);
  Matrix out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  out = 0.5 * (out + out.transpose());
  return CovKernel{out, detail::is_toeplitz(out)};
}

/// Search box for frobenius_fit. Unset bounds are derived from the target.
struct FitOptions {
  std::optional<std::pair<double, double>> variance_bounds;
  std::pair<double, double> lengthscale_bounds{0.25, 1e3};
  std::optional<std::pair<double, double>> period_bounds;
  std::optional<double> fixed_period;
  std::size_t starts = 8;
  std::uint64_t seed = 0;
};

struct FrobeniusFit {
  KernelFamily family;
  double objective = 0.0;
  std::vector<double> start_objectives;
};

/// Fits (sigma2, theta) minimizing ||target - K(sigma2, theta)||_F over a box.
/// The variance is profiled out in closed form for each theta.
inline FrobeniusFit frobenius_fit(const Matrix& target, KernelKind kind, const FitOptions& options = {}) {
  if (target.rows() != target.cols()) throw ShapeError("frobenius_fit: target must be square");
  if (kind == KernelKind::general) throw ConfigError("frobenius_fit: the general family has no parameters to fit");
  const auto p = static_cast<std::size_t>(target.rows());
  if (p == 0) throw ShapeError("frobenius_fit: empty target");

  const double diag_scale = std::max(target.diagonal().cwiseAbs().maxCoeff(), 1e-12);
  const auto [var_lo, var_hi] = options.variance_bounds.value_or(std::pair{1e-10, 10.0 * diag_scale + 1e-9});
  if (!(var_lo > 0.0) || !(var_hi >= var_lo)) throw ConfigError("frobenius_fit: empty variance box");

  // theta layout: rbf -> [l]; periodic -> [l, T] or [l] with a fixed period.
  detail::LogBox box;
  const bool fit_period = kind == KernelKind::periodic && !options.fixed_period;
  box.lower.resize(fit_period ? 2 : 1);
  box.upper.resize(box.lower.size());
  box.lower(0) = options.lengthscale_bounds.first;
  box.upper(0) = options.lengthscale_bounds.second;
  if (fit_period) {
    const auto [lo, hi] = options.period_bounds.value_or(std::pair{2.0, 2.0 * static_cast<double>(p)});
    box.lower(1) = lo;
    box.upper(1) = hi;
  }
  box.validate();
  if (options.fixed_period && !(*options.fixed_period > 0.0)) throw ConfigError("frobenius_fit: fixed period must be positive");

  auto family_at = [&](const Vector& theta, double variance) {
    if (kind == KernelKind::rbf) return KernelFamily::rbf(variance, theta(0));
    return KernelFamily::periodic(variance, theta(0), fit_period ? theta(1) : *options.fixed_period);
  };
  auto profiled = [&](const Vector& theta, double* variance_out) {
    const Matrix unit = build_cov_matrix(family_at(theta, 1.0), p).values;
    const double denom = unit.squaredNorm();
    double v = denom > 0.0 ? (target.array() * unit.array()).sum() / denom : var_lo;
    v = std::clamp(v, var_lo, var_hi);
    if (variance_out) *variance_out = v;
    return (target - v * unit).norm();
  };

  const auto objective = [&](const Vector& theta) { return profiled(theta, nullptr); };
  detail::SearchResult res = detail::multistart_log(objective, box, options.starts, options.seed);

  // Flat tails (e.g. rbf with l -> 0) stall the simplex short of the bound.
  for (Eigen::Index k = 0; k < res.x.size(); ++k) {
    for (const double bound : {box.lower(k), box.upper(k)}) {
      Vector trial = res.x;
      trial(k) = bound;
      const double v = objective(trial);
      if (v <= res.value) {
        res.x = trial;
        res.value = v;
      }
    }
  }

  double variance = 0.0;
  const double value = profiled(res.x, &variance);
  return FrobeniusFit{family_at(res.x, variance), value, res.start_values};
}

}  // namespace qpgp_ilc
