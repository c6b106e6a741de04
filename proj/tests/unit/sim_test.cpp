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

#include "qpgp_ilc/sim/linear.hpp"
#include "qpgp_ilc/sim/manipulator.hpp"
#include "qpgp_ilc/sim/vehicle.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

namespace qpgp_ilc::sim {
namespace {

constexpr double kPi = std::numbers::pi;

// --- paths -----------------------------------------------------------------

TEST(Raceline, FirstUnscaledPointAndLength) {
  // s_p = 2 pi is the last sample; unscaled it sits at R(0) = 10 on the x axis.
  const ReferencePath path = gen_raceline(200, 8.0, 0.02);
  const Eigen::Vector2d last = path.point(199);
  EXPECT_NEAR(last.y(), 0.0, 1e-9);
  EXPECT_GT(last.x(), 0.0);
  EXPECT_NEAR(path.polyline_length(), 8.0 * 0.02 * 200, 1e-9 * 32.0);
  EXPECT_NEAR(path.s(0), 2 * kPi / 200, 1e-15);
  // Scale check: unscaled radius at s = 2 pi is 10.
  const double scale = last.x() / 10.0;
  const double s = path.s(10);
  const double r = 10 + 2 * std::sin(2 * s) + std::sin(3 * s);
  EXPECT_NEAR(path.points(10, 0), scale * r * std::cos(s), 1e-12);
}

TEST(Raceline, RefinementKeepsShape) {
  // Hausdorff distance between the p and 4p scaled tracks (same total length
  // after rescaling to unit length) shrinks with p.
  auto hausdorff = [](const ReferencePath& a, const ReferencePath& b) {
    double h = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double best = 1e300;
      for (std::size_t j = 0; j < b.size(); ++j) best = std::min(best, (a.point(i) - b.point(j)).norm());
      h = std::max(h, best);
    }
    return h;
  };
  auto unit = [](std::size_t p) {
    ReferencePath r = gen_raceline(p, 1.0, 1.0 / static_cast<double>(p));  // length 1
    return r;
  };
  const double coarse = hausdorff(unit(25), unit(400));
  const double fine = hausdorff(unit(100), unit(400));
  EXPECT_LT(fine, coarse);
  EXPECT_LT(fine, 0.01);
}

TEST(Paths, CircleAndLissajous) {
  const ReferencePath c = gen_circle_ref(100);
  EXPECT_NEAR(c.points(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(c.points(0, 1), 1.0, 1e-15);
  const ReferencePath l = gen_lissajous_ref(64);
  EXPECT_NEAR(l.points(0, 0), 0.29, 1e-15);
  EXPECT_NEAR(l.points(0, 1), 0.45, 1e-15);
  EXPECT_THROW(gen_circle_ref(2), ParameterError);
}

TEST(Paths, CsvExport) {
  std::ostringstream os;
  write_path_csv(gen_circle_ref(4), os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "index,s,x,y");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_NE(os.str().find("\n0,0,2,1\n"), std::string::npos);
}

// --- vehicle ---------------------------------------------------------------

TEST(PurePursuit, Examples) {
  EXPECT_NEAR(pure_pursuit({0, 0, 0}, {3, 0}, 0.5), 0.0, 1e-15);
  EXPECT_NEAR(pure_pursuit({0, 0, 0}, {0, 1}, 0.5), kPi / 4, 1e-15);
  EXPECT_GT(pure_pursuit({0, 0, 0}, {1, 0.5}, 0.5), 0.0);
  EXPECT_NEAR(pure_pursuit({0, 0, 0}, {1, -0.5}, 0.5), -pure_pursuit({0, 0, 0}, {1, 0.5}, 0.5), 1e-15);
  bool degenerate = false;
  EXPECT_EQ(pure_pursuit({1, 1, 0.3}, {1, 1}, 0.5, &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
}

ReferencePath straight_line(std::size_t p, double step) {
  ReferencePath path;
  path.closed = false;
  path.points.resize(static_cast<Eigen::Index>(p), 2);
  path.s.resize(static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < p; ++k) {
    path.points(static_cast<Eigen::Index>(k), 0) = step * static_cast<double>(k);
    path.points(static_cast<Eigen::Index>(k), 1) = 0.0;
    path.s(static_cast<Eigen::Index>(k)) = static_cast<double>(k);
  }
  return path;
}

TEST(LateralError, Examples) {
  const ReferencePath c = gen_circle_ref(100);
  EXPECT_NEAR(lateral_error(c.point(7), c), 0.0, 1e-15);
  const Eigen::Vector2d t = path_tangent(c, 7);
  const Eigen::Vector2d n(-t.y(), t.x());
  EXPECT_NEAR(lateral_error(c.point(7) + 0.01 * n, c), 0.01, 1e-12);
  EXPECT_NEAR(lateral_error(c.point(7) - 0.01 * n, c), -0.01, 1e-12);
  // Ties resolve to the lower index.
  const ReferencePath line = straight_line(5, 1.0);
  EXPECT_EQ(nearest_index({1.5, 0.2}, line), 1u);
}

TEST(Vehicle, CleanStraightLineIsTrackedExactly) {
  VehicleConfig cfg;
  cfg.steering_gain = 1.0;
  cfg.bias = cfg.bias_slope = cfg.noise_variance = cfg.heading_drift = 0.0;
  const VehiclePlant plant(straight_line(50, cfg.speed * cfg.dt), cfg);
  const PlantRollout ro = plant.rollout(plant.initial_input(), 1, 0);
  EXPECT_LT(ro.errors.lifted().cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Vehicle, NominalFirstLapHasBiasDrivenError) {
  const VehiclePlant plant = VehiclePlant::raceline(200);
  const PlantRollout ro = plant.rollout(plant.initial_input(), 1, 0);
  EXPECT_GT(ro.errors.rms(), 0.05);
  EXPECT_TRUE(ro.errors.all_finite());
  EXPECT_EQ(ro.path.rows(), 200);
}

TEST(Vehicle, DeterministicPerSeedAndIteration) {
  const VehiclePlant plant = VehiclePlant::raceline(100);
  const Vector u = plant.initial_input();
  const Vector a = plant.rollout(u, 3, 7).errors.lifted();
  EXPECT_TRUE((a.array() == plant.rollout(u, 3, 7).errors.lifted().array()).all());
  EXPECT_FALSE((a.array() == plant.rollout(u, 4, 7).errors.lifted().array()).all());
  EXPECT_FALSE((a.array() == plant.rollout(u, 3, 8).errors.lifted().array()).all());
}

TEST(Vehicle, LearningMapLeadsByOneSample) {
  const VehiclePlant plant = VehiclePlant::raceline(5);
  const Matrix t = plant.learning_map(plant.initial_input());
  Matrix expect = Matrix::Zero(5, 5);
  for (int k = 0; k < 4; ++k) expect(k, k + 1) = 1.0;
  expect(4, 4) = 1.0;
  EXPECT_EQ(t, expect);
}

TEST(Vehicle, FiniteDifferenceJacobianIsCausal) {
  VehicleConfig cfg;
  cfg.noise_variance = cfg.bias = cfg.bias_slope = cfg.heading_drift = 0.0;  // stay off the saturation
  const VehiclePlant plant = VehiclePlant::raceline(200, cfg);
  const Matrix g = lifted_jacobian(plant, plant.initial_input());
  EXPECT_TRUE(g.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0));
  // Steering at step k first moves the position measured after step k+1.
  // Pure pursuit at one-point lookahead chatters into the steering limit on
  // later parts of the lap, where the derivative is exactly zero.
  int live = 0;
  for (Eigen::Index k = 0; k < 40; ++k) {
    EXPECT_NEAR(g(k, k), 0.0, 1e-9);
    live += std::abs(g(k + 1, k)) > 1e-3;
  }
  EXPECT_GE(live, 30);
}

// --- manipulator -------------------------------------------------------------

TEST(ManipFk, Examples) {
  EXPECT_TRUE(manip_fk({0, 0, 0}).ee().isApprox(Eigen::Vector2d(2.5, 0)));
  EXPECT_LT((manip_fk({kPi / 2, 0, 0}).ee() - Eigen::Vector2d(0, 2.5)).norm(), 1e-15);
  EXPECT_LT((manip_fk({kPi / 2, -kPi / 2, 0}).ee() - Eigen::Vector2d(1.5, 1.0)).norm(), 1e-15);
  const ArmPose pose = manip_fk({0.3, -0.2, 0.5});
  EXPECT_NEAR((pose.joints[1] - pose.joints[0]).norm(), 1.0, 1e-15);
  EXPECT_NEAR((pose.joints[3] - pose.joints[2]).norm(), 0.5, 1e-15);
}

TEST(ManipJacobian, AtZero) {
  Eigen::Matrix<double, 2, 3> expect;
  expect << 0, 0, 0, 2.5, 1.5, 0.5;
  EXPECT_LT((manip_jacobian({0, 0, 0}) - expect).norm(), 1e-15);
}

TEST(ManipJacobian, MatchesCentralDifferences) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int trial = 0; trial < 50; ++trial) {
    const Joints q(u(rng), u(rng), u(rng));
    const Eigen::Matrix<double, 2, 3> j = manip_jacobian(q);
    for (int c = 0; c < 3; ++c) {
      Joints hi = q, lo = q;
      hi(c) += 1e-7;
      lo(c) -= 1e-7;
      const Eigen::Vector2d fd = (manip_fk(hi).ee() - manip_fk(lo).ee()) / 2e-7;
      EXPECT_LT((fd - j.col(c)).norm(), 1e-6);
    }
    const Joints shifted = q + Joints::Constant(2 * kPi);
    EXPECT_LT((manip_jacobian(shifted) - j).norm(), 1e-12);
  }
}

TEST(ManipIk, RoundTripsAndElbowUp) {
  const Joints zero = manip_ik(2.5, 0.0);
  EXPECT_LT(zero.norm(), 1e-7);  // D = 1 is a square-root singularity
  const Joints qa = manip_ik(1.7, 0.6);
  EXPECT_NEAR(qa.sum(), 0.0, 1e-15);
  EXPECT_LT((manip_fk(zero).ee() - Eigen::Vector2d(2.5, 0)).norm(), 1e-12);
  const Joints q = manip_ik(2.0, 1.0);
  EXPECT_LT((manip_fk(q).ee() - Eigen::Vector2d(2.0, 1.0)).norm(), 1e-9);
  EXPECT_GE(q(1), 0.0);
  EXPECT_LE(q(1), kPi);
  const ReferencePath circle = gen_circle_ref(100);
  for (std::size_t k = 0; k < circle.size(); ++k) {
    const Eigen::Vector2d pt = circle.point(k);
    EXPECT_LT((manip_fk(manip_ik(pt.x(), pt.y())).ee() - pt).norm(), 1e-9);
  }
  EXPECT_THROW(manip_ik(3.0, 0.0), ParameterError);
}

TEST(ManipIk, CircleIsReachable) {
  const ReferencePath circle = gen_circle_ref(1000);
  double far = 0.0;
  for (std::size_t k = 0; k < circle.size(); ++k) far = std::max(far, circle.point(k).norm());
  EXPECT_NEAR(far, std::hypot(1.5, 1.0) + 0.5, 1e-5);
  EXPECT_LT(far, 2.5);
}

TEST(Manipulator, ExactInversionWithoutBiases) {
  ManipConfig cfg;
  cfg.bias_means = false;
  cfg.noise_std.setZero();
  const ManipulatorPlant plant(100, cfg);
  const PlantRollout ro = plant.rollout(plant.initial_input(), 1, 0);
  EXPECT_LT(ro.errors.lifted().cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Manipulator, NominalBiasesGiveError) {
  const ManipulatorPlant plant(100);
  const PlantRollout ro = plant.rollout(plant.initial_input(), 1, 0);
  EXPECT_GT(ro.errors.rms(), 0.1);
  EXPECT_EQ(ro.errors.dims(), 2u);
  EXPECT_EQ(plant.dims().m, 3u);
  const PlantRollout again = plant.rollout(plant.initial_input(), 1, 0);
  EXPECT_TRUE((ro.errors.lifted().array() == again.errors.lifted().array()).all());
  EXPECT_FALSE((ro.errors.lifted().array() == plant.rollout(plant.initial_input(), 1, 1).errors.lifted().array()).all());
}

TEST(Manipulator, DisturbanceStartsAtConfiguredIteration) {
  ManipConfig cfg;
  cfg.bias_means = false;
  cfg.noise_std.setZero();
  cfg.disturbance = Disturbance{3, {0.1, -0.1, 0.05}, 10};
  const ManipulatorPlant plant(40, cfg);
  const Vector u = plant.initial_input();
  EXPECT_LT(plant.rollout(u, 2, 0).errors.lifted().cwiseAbs().maxCoeff(), 1e-9);
  const ErrorTrajectory e3 = plant.rollout(u, 3, 0).errors;
  EXPECT_LT(std::abs(e3(0, 9)) + std::abs(e3(1, 9)), 1e-9);
  EXPECT_GT(std::abs(e3(0, 10)) + std::abs(e3(1, 10)), 1e-3);
  const ErrorTrajectory e4 = plant.rollout(u, 4, 0).errors;
  EXPECT_GT(std::abs(e4(0, 0)) + std::abs(e4(1, 0)), 1e-3);
  cfg.disturbance->start_step = 40;
  EXPECT_THROW(ManipulatorPlant(40, cfg), ParameterError);
}

TEST(Manipulator, CorrectionVanishesExactlyAtZeroError) {
  const ManipulatorPlant plant(30);
  const Matrix t = plant.learning_map(plant.initial_input());
  EXPECT_EQ(t.rows(), 90);
  EXPECT_EQ(t.cols(), 60);
  EXPECT_TRUE((t * Vector::Zero(60)).isZero(0.0));
  // Damped pseudo-inverse is a right inverse up to the damping.
  const Matrix g = *plant.jacobian(plant.initial_input());
  EXPECT_LT((g * t - Matrix::Identity(60, 60)).cwiseAbs().maxCoeff(), 1e-5);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Vector e(60);
  for (auto& v : e) v = n(rng);
  EXPECT_GT((t * e).norm(), 0.0);
}

TEST(Manipulator, LinearizedStepReducesError) {
  ManipConfig cfg;
  cfg.noise_std.setZero();
  const ManipulatorPlant plant(50, cfg);
  const Vector u = plant.initial_input();
  const ErrorTrajectory e1 = plant.rollout(u, 1, 0).errors;
  const Vector u2 = u + 0.25 * plant.learning_map(u) * e1.lifted();
  EXPECT_LT(plant.rollout(u2, 2, 0).errors.rms(), 0.9 * e1.rms());
}

// --- linear ----------------------------------------------------------------

TEST(LinearPlant, RejectsNonCausalG) {
  Matrix g = Matrix::Identity(3, 3);
  g(0, 2) = 0.1;
  EXPECT_THROW(LinearPlant({1, 1, 3}, g, Vector::Zero(3)), ShapeError);
  EXPECT_THROW(LinearPlant({1, 1, 3}, Matrix::Identity(2, 2), Vector::Zero(3)), ShapeError);
}

TEST(LinearPlant, OutputIsGuPlusDisturbance) {
  Matrix g(3, 3);
  g << 1, 0, 0, 0.5, 1, 0, 0.2, 0.3, 2;
  const Vector r = Vector::Ones(3);
  const LinearPlant plant({1, 1, 3}, g, r, {}, [](std::size_t i, std::uint64_t) { return Vector::Constant(3, double(i)); });
  const Vector u(Eigen::Vector3d(0.1, -0.2, 0.3));
  const PlantRollout ro = plant.rollout(u, 2, 0);
  const Vector y = g * u + Vector::Constant(3, 2.0);
  EXPECT_LT((ro.outputs - y).norm(), 1e-15);
  EXPECT_LT((ro.errors.lifted() - (r - y)).norm(), 1e-15);
  EXPECT_EQ(*plant.jacobian(u), g);
  EXPECT_EQ(lifted_jacobian(plant, u), g);
}

}  // namespace
}  // namespace qpgp_ilc::sim
