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
/// Lifted linear plant y = G u + d_i, e = r - y. Used to check the learning
/// laws against their closed-form error recursions.

#include "qpgp_ilc/plant.hpp"

#include <chrono>
#include <functional>

namespace qpgp_ilc::sim {

class LinearPlant final : public Plant {
 public:
  /// Additive output disturbance d_i for (iteration, seed), length n p.
  using DisturbanceFn = std::function<Vector(std::size_t iteration, std::uint64_t seed)>;

  /// `g` is (n p) x (m p) and must be causal: output t depends on inputs <= t.
  LinearPlant(PlantDims dims, Matrix g, Vector reference, Matrix t_map = {}, DisturbanceFn disturbance = {},
              Vector initial_input = {})
      : dims_(dims), g_(std::move(g)), r_(std::move(reference)), t_map_(std::move(t_map)),
        disturbance_(std::move(disturbance)), u0_(std::move(initial_input)) {
    const auto np = static_cast<Eigen::Index>(dims_.n * dims_.p);
    const auto mp = static_cast<Eigen::Index>(dims_.m * dims_.p);
    if (dims_.p == 0 || g_.rows() != np || g_.cols() != mp || r_.size() != np) throw ShapeError("LinearPlant: G or r has the wrong shape");
    if (t_map_.size() == 0) {
      if (np != mp) throw ShapeError("LinearPlant: the default identity learning map needs m == n");
      t_map_ = Matrix::Identity(mp, np);
    }
    if (t_map_.rows() != mp || t_map_.cols() != np) throw ShapeError("LinearPlant: learning map has the wrong shape");
    if (u0_.size() == 0) u0_ = Vector::Zero(mp);
    if (u0_.size() != mp) throw ShapeError("LinearPlant: initial input has the wrong length");
    for (Eigen::Index r = 0; r < np; ++r)
      for (Eigen::Index c = 0; c < mp; ++c)
        if (g_(r, c) != 0.0 && static_cast<std::size_t>(c) % dims_.p > static_cast<std::size_t>(r) % dims_.p)
          throw ShapeError("LinearPlant: G is not causal");
  }

  /// Scalar gain on every sample: y = gain * u.
  static LinearPlant scalar(std::size_t n, std::size_t p, double gain, Vector reference, DisturbanceFn disturbance = {}) {
    const auto np = static_cast<Eigen::Index>(n * p);
    return LinearPlant({n, n, p}, gain * Matrix::Identity(np, np), std::move(reference), {}, std::move(disturbance));
  }

  std::string name() const override { return "linear"; }
  PlantDims dims() const override { return dims_; }
  Vector initial_input() const override { return u0_; }

  using Plant::rollout;

  PlantRollout rollout(StepPolicy& policy, std::size_t iteration, std::uint64_t seed) const override {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t p = dims_.p;
    const Vector d = disturbance_ ? disturbance_(iteration, seed) : Vector::Zero(r_.size());
    if (d.size() != r_.size()) throw ShapeError("LinearPlant: disturbance has the wrong length");
    PlantRollout out;
    out.inputs = Vector::Zero(static_cast<Eigen::Index>(dims_.m * p));
    out.outputs = Vector::Zero(r_.size());
    out.errors = ErrorTrajectory(dims_.n, p);
    Vector err(static_cast<Eigen::Index>(dims_.n));
    for (std::size_t t = 0; t < p; ++t) {
      const Vector ut = policy.input(t);
      for (std::size_t a = 0; a < dims_.m; ++a) out.inputs(static_cast<Eigen::Index>(lifted_index(a, t, p))) = ut(static_cast<Eigen::Index>(a));
      for (std::size_t j = 0; j < dims_.n; ++j) {
        const auto row = static_cast<Eigen::Index>(lifted_index(j, t, p));
        const double y = g_.row(row).dot(out.inputs) + d(row);
        out.outputs(row) = y;
        out.errors(j, t) = r_(row) - y;
        err(static_cast<Eigen::Index>(j)) = r_(row) - y;
      }
      policy.observe(t, err);
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  Matrix learning_map(const Vector&) const override { return t_map_; }
  std::optional<Matrix> jacobian(const Vector&) const override { return g_; }

 private:
  PlantDims dims_;
  Matrix g_;
  Vector r_;
  Matrix t_map_;
  DisturbanceFn disturbance_;
  Vector u0_;
};

}  // namespace qpgp_ilc::sim
