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
/// Shared vocabulary: exception types, Eigen aliases and the lifted error
/// trajectory used by every other header.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qpgp_ilc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Invalid model or kernel parameter (non-positive variance, |omega| >= 1, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Incompatible dimensions or a matrix without the required structure.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A factorization or solve could not be carried out reliably.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Not enough data to run an estimator.
struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (empty search box, unknown key, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An object was used before it was ready (e.g. predicting from an unfitted GP).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Lifted per-iteration error e_i in R^{n p}: n blocks of p samples, one block
/// per output dimension, stored contiguously block after block.
class ErrorTrajectory {
 public:
  ErrorTrajectory() = default;

  ErrorTrajectory(std::size_t n, std::size_t p) : n_(n), p_(p), data_(Vector::Zero(static_cast<Eigen::Index>(n * p))) {}

  ErrorTrajectory(std::size_t n, std::size_t p, Vector data) : n_(n), p_(p), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != n_ * p_) {
      throw ShapeError("ErrorTrajectory: data length " + std::to_string(data_.size()) + " != n*p = " +
                       std::to_string(n_ * p_));
    }
  }

  std::size_t dims() const { return n_; }
  std::size_t samples() const { return p_; }

  const Vector& lifted() const { return data_; }
  Vector& lifted() { return data_; }

  auto block(std::size_t j) const { return data_.segment(static_cast<Eigen::Index>(j * p_), static_cast<Eigen::Index>(p_)); }
  auto block(std::size_t j) { return data_.segment(static_cast<Eigen::Index>(j * p_), static_cast<Eigen::Index>(p_)); }

  double operator()(std::size_t j, std::size_t t) const { return data_(static_cast<Eigen::Index>(j * p_ + t)); }
  double& operator()(std::size_t j, std::size_t t) { return data_(static_cast<Eigen::Index>(j * p_ + t)); }

  bool same_shape(const ErrorTrajectory& other) const { return n_ == other.n_ && p_ == other.p_; }

  /// Root mean square over timesteps of the per-timestep Euclidean error norm.
  double rms() const {
    if (p_ == 0) return 0.0;
    return std::sqrt(data_.squaredNorm() / static_cast<double>(p_));
  }

  /// Largest per-timestep Euclidean error norm.
  double max_norm() const {
    double best = 0.0;
    for (std::size_t t = 0; t < p_; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += (*this)(j, t) * (*this)(j, t);
      best = std::max(best, std::sqrt(s));
    }
    return best;
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  std::size_t n_ = 0;
  std::size_t p_ = 0;
  Vector data_;
};

/// Ordered error blocks e_1, ..., e_i sharing one (n, p) shape.
using ErrorHistory = std::vector<ErrorTrajectory>;

inline void check_history(const ErrorHistory& history) {
  if (history.empty()) throw InsufficientDataError("error history is empty");
  for (const auto& e : history) {
    if (!e.same_shape(history.front())) throw ShapeError("error history blocks differ in shape");
  }
}

namespace detail {

/// Deterministic RNG stream keyed by (seed, stream, substream).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(substream), static_cast<std::uint32_t>(substream >> 32)};
  return std::mt19937_64(seq);
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::BDCSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace detail
}  // namespace qpgp_ilc
