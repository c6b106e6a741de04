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
/// Three-link planar arm replaying feedforward joint angles under unknown
/// joint biases. Inputs are the 3 joint angles per timestep, errors the 2
/// Cartesian end-effector position errors.

#include "qpgp_ilc/plant.hpp"
#include "qpgp_ilc/sim/paths.hpp"

#include <array>
#include <chrono>
#include <numbers>

namespace qpgp_ilc::sim {

using Joints = Eigen::Vector3d;
using Links = Eigen::Vector3d;

inline const Links kDefaultLinks{1.0, 1.0, 0.5};

struct ArmPose {
  std::array<Eigen::Vector2d, 4> joints;  ///< base, elbow, wrist, end effector
  Eigen::Vector2d ee() const { return joints[3]; }
};

/// Cumulative-angle chain.
inline ArmPose manip_fk(const Joints& theta, const Links& links = kDefaultLinks) {
  ArmPose pose;
  pose.joints[0].setZero();
  double angle = 0.0;
  for (int k = 0; k < 3; ++k) {
    angle += theta(k);
    pose.joints[static_cast<std::size_t>(k + 1)] =
        pose.joints[static_cast<std::size_t>(k)] + links(k) * Eigen::Vector2d(std::cos(angle), std::sin(angle));
  }
  return pose;
}

/// d ee / d theta. Column k sums the links from k outward.
inline Eigen::Matrix<double, 2, 3> manip_jacobian(const Joints& theta, const Links& links = kDefaultLinks) {
  Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
  std::array<double, 3> cum{};
  double angle = 0.0;
  for (int k = 0; k < 3; ++k) cum[static_cast<std::size_t>(k)] = angle += theta(k);
  for (int col = 0; col < 3; ++col)
    for (int k = col; k < 3; ++k) {
      j(0, col) -= links(k) * std::sin(cum[static_cast<std::size_t>(k)]);
      j(1, col) += links(k) * std::cos(cum[static_cast<std::size_t>(k)]);
    }
  return j;
}

/// Elbow-up two-link solution for the wrist at (x - l3, y). The last link is
/// held horizontal (theta3 = -(theta1 + theta2)), which is what the wrist
/// offset assumes; theta3 = 0 would only reach the target when theta1 = -theta2.
inline Joints manip_ik(double x, double y, const Links& links = kDefaultLinks) {
  const double xe = x - links(2);
  const double ye = y;
  double d = (xe * xe + ye * ye - links(0) * links(0) - links(1) * links(1)) / (2.0 * links(0) * links(1));
  if (std::abs(d) > 1.0 + 1e-9) throw ParameterError("manip_ik: target out of reach");
  d = std::clamp(d, -1.0, 1.0);
  const double t2 = std::atan2(std::sqrt(1.0 - d * d), d);
  const double t1 = std::atan2(ye, xe) - std::atan2(links(1) * std::sin(t2), links(0) + links(1) * std::cos(t2));
  return {t1, t2, -(t1 + t2)};
}

/// J^T (J J^T + lambda^2 I)^{-1}.
inline Eigen::Matrix<double, 3, 2> damped_pinv(const Eigen::Matrix<double, 2, 3>& j, double lambda = 1e-3) {
  const Eigen::Matrix2d jj = j * j.transpose() + lambda * lambda * Eigen::Matrix2d::Identity();
  return j.transpose() * jj.inverse();
}

struct Disturbance {
  std::size_t iteration = 25;  ///< first disturbed iteration
  Joints offsets{0.1, -0.1, 0.05};  ///< rad, added to the actual angles
  std::size_t start_step = 0;  ///< onset within the first disturbed iteration

  void validate(std::size_t p) const {
    if (iteration < 1) throw ParameterError("disturbance iteration is 1-based");
    if (start_step >= p) throw ParameterError("disturbance start_step must be below p");
    if (!offsets.allFinite()) throw ParameterError("disturbance offsets must be finite");
  }
};

struct ManipConfig {
  Links links = kDefaultLinks;
  Eigen::Vector2d center{1.5, 1.0};
  double radius = 0.5;
  bool bias_means = true;  ///< deterministic part of the joint biases
  Joints noise_std{0.1, 0.2, 0.1};
  std::optional<Disturbance> disturbance;
  double damping = 1e-3;

  void validate() const {
    if ((links.array() <= 0.0).any()) throw ParameterError("manipulator links must be positive");
    if (!(radius > 0.0)) throw ParameterError("manipulator reference radius must be positive");
    if ((noise_std.array() < 0.0).any()) throw ParameterError("bias noise must be non-negative");
    if (!(damping > 0.0)) throw ParameterError("pseudo-inverse damping must be positive");
  }
};

/// Mean joint biases at s in [0, 1].
inline Joints joint_bias_mean(double s) {
  const double pi = std::numbers::pi;
  return {0.2 + 0.5 * std::sin(8.0 * pi * s), -0.25 + 0.1 * std::cos(6.0 * pi * s),
          0.35 + 0.5 * std::exp(-(s - 0.04) * (s - 0.04) / (2.0 * 0.05 * 0.05))};
}

class ManipulatorPlant final : public Plant {
 public:
  ManipulatorPlant(std::size_t p, ManipConfig config = {}) : config_(std::move(config)) {
    config_.validate();
    const double step = 2.0 * std::numbers::pi / static_cast<double>(p);
    path_ = qpgp_ilc::sim::detail::sample_closed(p, 0.0, step, [&](double s) {
      return Eigen::Vector2d(config_.center.x() + config_.radius * std::cos(s), config_.center.y() + config_.radius * std::sin(s));
    });
    if (config_.disturbance) config_.disturbance->validate(p);
    const double reach = config_.links.sum();
    const double inner = std::abs(config_.links(0) - config_.links(1)) - config_.links(2);
    for (std::size_t k = 0; k < p; ++k) {
      const double r = path_.point(k).norm();
      if (r > reach || r < inner) throw ParameterError("manipulator reference leaves the workspace");
    }
    init_.resize(static_cast<Eigen::Index>(3 * p));
    for (std::size_t t = 0; t < p; ++t) {
      const Joints q = manip_ik(path_.points(static_cast<Eigen::Index>(t), 0), path_.points(static_cast<Eigen::Index>(t), 1),
                                config_.links);
      for (std::size_t a = 0; a < 3; ++a) init_(static_cast<Eigen::Index>(lifted_index(a, t, p))) = q(static_cast<Eigen::Index>(a));
    }
  }

  std::string name() const override { return "manipulator"; }
  PlantDims dims() const override { return {3, 2, path_.size()}; }
  Vector initial_input() const override { return init_; }
  const ReferencePath& path() const { return path_; }
  const ManipConfig& config() const { return config_; }

  using Plant::rollout;

  PlantRollout rollout(StepPolicy& policy, std::size_t iteration, std::uint64_t seed) const override {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t p = path_.size();
    auto rng = qpgp_ilc::detail::make_rng(seed, 0x3a17, iteration);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix noise(static_cast<Eigen::Index>(p), 3);
    for (Eigen::Index t = 0; t < noise.rows(); ++t)
      for (Eigen::Index a = 0; a < 3; ++a) noise(t, a) = config_.noise_std(a) * gauss(rng);

    PlantRollout out;
    out.inputs.resize(static_cast<Eigen::Index>(3 * p));
    out.outputs.resize(static_cast<Eigen::Index>(2 * p));
    out.errors = ErrorTrajectory(2, p);
    out.path.resize(static_cast<Eigen::Index>(p), 2);
    const auto& dist = config_.disturbance;
    Vector err(2);
    for (std::size_t t = 0; t < p; ++t) {
      const Vector ff = policy.input(t);
      const double s = p > 1 ? static_cast<double>(t) / static_cast<double>(p - 1) : 0.0;
      Joints actual = ff.head<3>() + noise.row(static_cast<Eigen::Index>(t)).transpose();
      if (config_.bias_means) actual += joint_bias_mean(s);
      if (dist && (iteration > dist->iteration || (iteration == dist->iteration && t >= dist->start_step)))
        actual += dist->offsets;
      const Eigen::Vector2d ee = manip_fk(actual, config_.links).ee();
      for (std::size_t a = 0; a < 3; ++a) out.inputs(static_cast<Eigen::Index>(lifted_index(a, t, p))) = ff(static_cast<Eigen::Index>(a));
      for (std::size_t j = 0; j < 2; ++j) {
        out.outputs(static_cast<Eigen::Index>(lifted_index(j, t, p))) = ee(static_cast<Eigen::Index>(j));
        err(static_cast<Eigen::Index>(j)) = path_.points(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) - ee(static_cast<Eigen::Index>(j));
        out.errors(j, t) = err(static_cast<Eigen::Index>(j));
      }
      out.path.row(static_cast<Eigen::Index>(t)) = ee.transpose();
      policy.observe(t, err);
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  /// Per-timestep damped pseudo-inverse of the Jacobian at the commanded angles.
  Matrix learning_map(const Vector& u) const override {
    const std::size_t p = path_.size();
    Matrix t_map = Matrix::Zero(static_cast<Eigen::Index>(3 * p), static_cast<Eigen::Index>(2 * p));
    for (std::size_t t = 0; t < p; ++t) {
      const Eigen::Matrix<double, 3, 2> jp = damped_pinv(manip_jacobian(joints_at(u, t), config_.links), config_.damping);
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t j = 0; j < 2; ++j)
          t_map(static_cast<Eigen::Index>(lifted_index(a, t, p)), static_cast<Eigen::Index>(lifted_index(j, t, p))) =
              jp(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
    }
    return t_map;
  }

  /// Block-diagonal in time, evaluated at the commanded angles (biases unknown).
  std::optional<Matrix> jacobian(const Vector& u) const override {
    const std::size_t p = path_.size();
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(2 * p), static_cast<Eigen::Index>(3 * p));
    for (std::size_t t = 0; t < p; ++t) {
      const Eigen::Matrix<double, 2, 3> j = manip_jacobian(joints_at(u, t), config_.links);
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t a = 0; a < 3; ++a)
          g(static_cast<Eigen::Index>(lifted_index(r, t, p)), static_cast<Eigen::Index>(lifted_index(a, t, p))) =
              j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a));
    }
    return g;
  }

 private:
  Joints joints_at(const Vector& u, std::size_t t) const {
    const std::size_t p = path_.size();
    if (static_cast<std::size_t>(u.size()) != 3 * p) throw ShapeError("manipulator input must have 3 p entries");
    return {u(static_cast<Eigen::Index>(t)), u(static_cast<Eigen::Index>(p + t)), u(static_cast<Eigen::Index>(2 * p + t))};
  }

  ManipConfig config_;
  ReferencePath path_;
  Vector init_;
};

}  // namespace qpgp_ilc::sim
