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
/// The plant-side contract of the learning loop. Inputs are lifted as m blocks
/// of p samples, errors as n blocks of p samples.

#include "qpgp_ilc/core.hpp"

#include <optional>
#include <string>

namespace qpgp_ilc {

struct PlantDims {
  std::size_t m = 0;  ///< input channels
  std::size_t n = 0;  ///< error channels
  std::size_t p = 0;  ///< samples per iteration
};

/// One executed iteration.
struct PlantRollout {
  Vector inputs;   ///< applied inputs, m*p
  Vector outputs;  ///< observed outputs, n*p (plant-specific meaning)
  ErrorTrajectory errors;
  Matrix path;  ///< executed Cartesian path, p x 2 (empty if the plant has none)
  double seconds = 0.0;
};

/// Per-timestep input source. A rollout asks for the input of step t, runs
/// the step, then reports that step's error, so input(t) sees the errors of
/// steps 0..t-1.
class StepPolicy {
 public:
  virtual ~StepPolicy() = default;
  virtual Vector input(std::size_t t) = 0;
  virtual void observe(std::size_t t, const Vector& error) = 0;
};

/// Replays a fixed lifted input.
class FeedforwardPolicy final : public StepPolicy {
 public:
  FeedforwardPolicy(const Vector& u, PlantDims dims) : u_(u), dims_(dims) {
    if (static_cast<std::size_t>(u.size()) != dims.m * dims.p) throw ShapeError("feedforward input has the wrong length");
  }

  Vector input(std::size_t t) override {
    Vector out(static_cast<Eigen::Index>(dims_.m));
    for (std::size_t a = 0; a < dims_.m; ++a) out(static_cast<Eigen::Index>(a)) = u_(static_cast<Eigen::Index>(a * dims_.p + t));
    return out;
  }

  void observe(std::size_t, const Vector&) override {}

 private:
  const Vector& u_;
  PlantDims dims_;
};

class Plant {
 public:
  virtual ~Plant() = default;

  virtual std::string name() const = 0;
  virtual PlantDims dims() const = 0;
  virtual Vector initial_input() const = 0;

  /// Runs one iteration. `iteration` and `seed` select the noise streams.
  virtual PlantRollout rollout(StepPolicy& policy, std::size_t iteration, std::uint64_t seed) const = 0;

  /// Structure of the learning gains: L_i = l_i T and K_i = k_i T, with T an
  /// (m p) x (n p) map from errors to input corrections evaluated at u.
  virtual Matrix learning_map(const Vector& u) const = 0;

  /// Lifted Jacobian G = d y / d u (n p x m p) for diagnostics, if available.
  virtual std::optional<Matrix> jacobian(const Vector&) const { return std::nullopt; }

  PlantRollout rollout(const Vector& u, std::size_t iteration, std::uint64_t seed) const {
    FeedforwardPolicy ff(u, dims());
    return rollout(ff, iteration, seed);
  }
};

/// Input sample a at timestep t of a lifted vector.
inline std::size_t lifted_index(std::size_t channel, std::size_t t, std::size_t p) { return channel * p + t; }

/// Lifted G = dy/du = -de/du. Uses the plant's analytic Jacobian when it has
/// one, else central differences with a frozen noise stream.
inline Matrix lifted_jacobian(const Plant& plant, const Vector& u, std::uint64_t seed = 0, double step = 1e-4) {
  if (auto g = plant.jacobian(u)) return *g;
  const PlantDims d = plant.dims();
  Matrix g(static_cast<Eigen::Index>(d.n * d.p), static_cast<Eigen::Index>(d.m * d.p));
  Vector probe = u;
  for (Eigen::Index c = 0; c < g.cols(); ++c) {
    probe(c) = u(c) + step;
    const Vector up = plant.rollout(probe, 1, seed).errors.lifted();
    probe(c) = u(c) - step;
    const Vector down = plant.rollout(probe, 1, seed).errors.lifted();
    probe(c) = u(c);
    g.col(c) = (down - up) / (2.0 * step);
  }
  return g;
}

}  // namespace qpgp_ilc
