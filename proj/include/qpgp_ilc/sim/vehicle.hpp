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
/// Kinematic bicycle lapping a closed raceline under pure-pursuit feedback
/// with a corrupted steering channel. The learned input is the feedforward
/// steering; the error is the signed lateral deviation, negated so that a
/// positive gain steers back toward the path.

#include "qpgp_ilc/plant.hpp"
#include "qpgp_ilc/sim/paths.hpp"

#include <chrono>

namespace qpgp_ilc::sim {

struct VehicleConfig {
  double speed = 8.0;        ///< m/s
  double wheelbase = 0.5;    ///< m
  double dt = 0.02;          ///< s
  double steering_gain = 0.7;
  double bias = 0.15;        ///< rad
  double bias_slope = 0.01;  ///< rad per step
  double noise_variance = 0.015;  ///< rad^2
  double heading_drift = 0.04;    ///< rad per step
  double saturation = 0.5;        ///< rad

  void validate() const {
    if (!(speed > 0.0) || !(wheelbase > 0.0) || !(dt > 0.0) || !(steering_gain > 0.0) || !(saturation > 0.0) ||
        noise_variance < 0.0)
      throw ParameterError("vehicle config: speed, wheelbase, dt, gain and saturation must be positive");
  }
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

/// Steering toward `target`. Returns 0 and sets *degenerate when the target
/// coincides with the position.
inline double pure_pursuit(const VehicleState& s, const Eigen::Vector2d& target, double wheelbase,
                           bool* degenerate = nullptr) {
  const double dx = target.x() - s.x;
  const double dy = target.y() - s.y;
  const double dist = std::hypot(dx, dy);
  if (degenerate) *degenerate = dist <= 1e-12;
  if (dist <= 1e-12) return 0.0;
  const double alpha = std::atan2(dy, dx) - s.heading;
  return std::atan(2.0 * wheelbase * std::sin(alpha) / dist);
}

/// Nearest reference index; ties resolve to the lower index.
inline std::size_t nearest_index(const Eigen::Vector2d& pos, const ReferencePath& path) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < path.size(); ++k) {
    const double d = (path.point(k) - pos).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

/// Unit tangent by central difference at k (wrapping on closed paths).
inline Eigen::Vector2d path_tangent(const ReferencePath& path, std::size_t k) {
  const std::size_t p = path.size();
  std::size_t lo = k == 0 ? (path.closed ? p - 1 : 0) : k - 1;
  std::size_t hi = k + 1 == p ? (path.closed ? 0 : p - 1) : k + 1;
  const Eigen::Vector2d d = path.point(hi) - path.point(lo);
  return d / d.norm();
}

/// Signed deviation along the left normal of the nearest reference point.
inline double lateral_error(const Eigen::Vector2d& pos, const ReferencePath& path) {
  if (path.size() == 0) throw ShapeError("lateral_error: empty path");
  const std::size_t k = nearest_index(pos, path);
  const Eigen::Vector2d t = path_tangent(path, k);
  const Eigen::Vector2d n(-t.y(), t.x());
  return n.dot(pos - path.point(k));
}

class VehiclePlant final : public Plant {
 public:
  VehiclePlant(ReferencePath path, VehicleConfig config = {}) : path_(std::move(path)), config_(config) {
    path_.validate();
    config_.validate();
  }

  /// Raceline sized for p samples at the configured speed and timestep.
  static VehiclePlant raceline(std::size_t p, VehicleConfig config = {}) {
    return VehiclePlant(gen_raceline(p, config.speed, config.dt), config);
  }

  std::string name() const override { return "vehicle"; }
  PlantDims dims() const override { return {1, 1, path_.size()}; }
  Vector initial_input() const override { return Vector::Zero(static_cast<Eigen::Index>(path_.size())); }
  const ReferencePath& path() const { return path_; }
  const VehicleConfig& config() const { return config_; }

  using Plant::rollout;

  PlantRollout rollout(StepPolicy& policy, std::size_t iteration, std::uint64_t seed) const override {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t p = path_.size();
    const auto& c = config_;
    auto rng = qpgp_ilc::detail::make_rng(seed, 0x7e41, iteration);
    std::normal_distribution<double> noise(0.0, std::sqrt(c.noise_variance));
    Vector eps(static_cast<Eigen::Index>(p));
    for (auto& v : eps) v = c.noise_variance > 0.0 ? noise(rng) : 0.0;

    PlantRollout out;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.inputs = Vector::Constant(static_cast<Eigen::Index>(p), nan);
    out.outputs = Vector::Constant(static_cast<Eigen::Index>(p), nan);
    out.errors = ErrorTrajectory(1, p, Vector::Constant(static_cast<Eigen::Index>(p), nan));
    out.path = Matrix::Constant(static_cast<Eigen::Index>(p), 2, nan);

    VehicleState s{path_.points(0, 0), path_.points(0, 1), 0.0};
    const Eigen::Vector2d tan0 = path_tangent(path_, 0);
    s.heading = std::atan2(tan0.y(), tan0.x());
    Vector err(1);
    for (std::size_t k = 1; k <= p; ++k) {
      const auto t = static_cast<Eigen::Index>(k - 1);
      const std::size_t target = (nearest_index({s.x, s.y}, path_) + 1) % p;
      const double fb = pure_pursuit(s, path_.point(target), c.wheelbase);
      const double ff = policy.input(k - 1)(0);
      const double delta = std::clamp(c.steering_gain * (ff + fb) + c.bias + c.bias_slope * static_cast<double>(k) + eps(t),
                                      -c.saturation, c.saturation);
      s.x += c.speed * std::cos(s.heading) * c.dt;
      s.y += c.speed * std::sin(s.heading) * c.dt;
      s.heading += c.speed / c.wheelbase * std::tan(delta) * c.dt + c.heading_drift;
      const double lat = lateral_error({s.x, s.y}, path_);
      out.inputs(t) = ff;
      out.outputs(t) = lat;
      out.errors(0, k - 1) = -lat;
      out.path(t, 0) = s.x;
      out.path(t, 1) = s.y;
      err(0) = -lat;
      if (!std::isfinite(lat)) break;
      policy.observe(k - 1, err);
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  /// Step k's steering acts on the error first measured one step later, so
  /// the update reads the error one sample ahead (the last sample repeats).
  Matrix learning_map(const Vector&) const override {
    const auto p = static_cast<Eigen::Index>(path_.size());
    Matrix t = Matrix::Zero(p, p);
    for (Eigen::Index k = 0; k + 1 < p; ++k) t(k, k + 1) = 1.0;
    t(p - 1, p - 1) = 1.0;
    return t;
  }

 private:
  ReferencePath path_;
  VehicleConfig config_;
};

}  // namespace qpgp_ilc::sim
