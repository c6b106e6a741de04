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

#include "qpgp_ilc/kernels.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace qpgp_ilc {
namespace {

Matrix random_symmetric(std::mt19937_64& rng, Eigen::Index p) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(p, p);
  for (Eigen::Index r = 0; r < p; ++r)
    for (Eigen::Index c = 0; c < p; ++c) a(r, c) = normal(rng);
  return 0.5 * (a + a.transpose());
}

TEST(EvalRbf, ZeroLagReturnsVariance) { EXPECT_DOUBLE_EQ(eval_rbf(1, 1, 2, 1), 2.0); }

TEST(EvalRbf, OneLengthscaleApart) { EXPECT_NEAR(eval_rbf(0, 1, 1, 1), std::exp(-0.5), 1e-15); }

TEST(EvalRbf, FarFieldDecay) { EXPECT_LT(eval_rbf(0, 10, 1, 1), 1e-20); }

TEST(EvalRbf, RejectsNonPositiveParameters) {
  EXPECT_THROW(eval_rbf(0, 1, 0.0, 1), ParameterError);
  EXPECT_THROW(eval_rbf(0, 1, 1, -1), ParameterError);
}

TEST(EvalPeriodic, ZeroLagAndFullPeriod) {
  EXPECT_DOUBLE_EQ(eval_periodic(3, 3, 1.7, 0.8, 5), 1.7);
  EXPECT_NEAR(eval_periodic(3, 8, 1.7, 0.8, 5), 1.7, 1e-12);
}

TEST(EvalPeriodic, HalfPeriod) { EXPECT_NEAR(eval_periodic(0, 2, 1, 1, 4), std::exp(-2.0), 1e-15); }

TEST(EvalPeriodic, ShiftByPeriodIsInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int k = 0; k < 200; ++k) {
    const double t = u(rng), t2 = u(rng), period = 0.5 + std::abs(u(rng));
    EXPECT_NEAR(eval_periodic(t, t2 + period, 1.3, 0.9, period), eval_periodic(t, t2, 1.3, 0.9, period), 1e-12);
  }
}

TEST(EvalPeriodic, RejectsNonPositiveParameters) {
  EXPECT_THROW(eval_periodic(0, 1, 1, 1, 0), ParameterError);
  EXPECT_THROW(eval_periodic(0, 1, -1, 1, 1), ParameterError);
}

TEST(BuildCovMatrix, TinyLengthscaleIsNearlyIdentity) {
  const CovKernel k = build_cov_matrix(KernelFamily::rbf(1.0, 1e-3), 3);
  EXPECT_LT((k.values - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BuildCovMatrix, PeriodEqualToLengthIsCirculant) {
  const CovKernel k = build_cov_matrix(KernelFamily::periodic(1.0, 0.9, 4), 4);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_NEAR(k.values(r, c), k.values(0, (c - r + 4) % 4), 1e-12);
}

TEST(BuildCovMatrix, TwoByTwoRbf) {
  const CovKernel k = build_cov_matrix(KernelFamily::rbf(1.0, 1.0), 2);
  Matrix want(2, 2);
  want << 1, std::exp(-0.5), std::exp(-0.5), 1;
  EXPECT_LT((k.values - want).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE(k.stationary);
}

TEST(BuildCovMatrix, AlwaysSatisfiesKernelInvariants) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 5.0);
  for (int k = 0; k < 40; ++k) {
    const std::size_t p = 3 + static_cast<std::size_t>(k % 9);
    EXPECT_NO_THROW(build_cov_matrix(KernelFamily::rbf(u(rng), u(rng)), p).validate(1e-9));
    EXPECT_NO_THROW(build_cov_matrix(KernelFamily::periodic(u(rng), u(rng), 1.0 + 4 * u(rng)), p).validate(1e-9));
  }
}

TEST(BuildCovMatrix, GeneralFamilyHasNoClosedForm) {
  EXPECT_THROW(build_cov_matrix(KernelFamily::general(), 3), ParameterError);
}

TEST(ToeplitzProject, IdentityIsFixed) {
  EXPECT_EQ(toeplitz_project(Matrix::Identity(5, 5)), Matrix::Identity(5, 5));
}

TEST(ToeplitzProject, PoolsBothOffsets) {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  const Matrix out = toeplitz_project(m);
  EXPECT_TRUE(out.isApproxToConstant(2.5, 1e-15));
}

TEST(ToeplitzProject, RejectsNonSquare) { EXPECT_THROW(toeplitz_project(Matrix::Zero(2, 3)), ShapeError); }

TEST(ToeplitzProject, IdempotentOnRandomMatrices) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const Matrix m = Matrix::Random(7, 7) + random_symmetric(rng, 7);
    const Matrix once = toeplitz_project(m);
    EXPECT_LT((toeplitz_project(once) - once).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ToeplitzProject, IsOrthogonalProjection) {
  // Residual must be orthogonal to every symmetric Toeplitz basis element.
  std::mt19937_64 rng(8);
  const Matrix m = random_symmetric(rng, 6) + Matrix::Random(6, 6);
  const Matrix resid = m - toeplitz_project(m);
  for (Eigen::Index d = 0; d < 6; ++d) {
    double inner = 0.0;
    for (Eigen::Index r = d; r < 6; ++r) inner += resid(r, r - d) + resid(r - d, r);
    EXPECT_NEAR(inner, 0.0, 1e-12);
  }
}

TEST(PsdTruncate, ClipsDiagonal) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = -1.0;
  const CovKernel k = psd_truncate(m, 1e-8);
  Matrix want = Matrix::Zero(2, 2);
  want(0, 0) = 2.0;
  want(1, 1) = 1e-8;
  EXPECT_LT((k.values - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PsdTruncate, PsdInputUnchanged) {
  const Matrix m = build_cov_matrix(KernelFamily::rbf(1.0, 0.7), 6).values;
  EXPECT_LT((psd_truncate(m, 1e-8).values - m).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PsdTruncate, RejectsAsymmetric) {
  Matrix m(2, 2);
  m << 1, 2, 0, 1;
  EXPECT_THROW(psd_truncate(m, 0.0), ShapeError);
}

TEST(PsdTruncate, MatchesDirectClipAndBeatsZeroing) {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 20; ++k) {
    const Matrix m = random_symmetric(rng, 5);
    const double floor = 1e-3;
    const CovKernel out = psd_truncate(m, floor);
    EXPECT_GE(out.min_eigenvalue(), floor * (1 - 1e-9));

    // Oracle: eigen-clip written out column by column.
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    Matrix clip = Matrix::Zero(5, 5), zeroed = Matrix::Zero(5, 5);
    for (Eigen::Index c = 0; c < 5; ++c) {
      const Vector v = es.eigenvectors().col(c);
      const double lam = es.eigenvalues()(c);
      clip += std::max(lam, floor) * v * v.transpose();
      zeroed += std::max(lam, 0.0) * v * v.transpose();
    }
    EXPECT_LT((out.values - clip).cwiseAbs().maxCoeff(), 1e-12);
    const CovKernel zero_floor = psd_truncate(m, 0.0);
    EXPECT_LE((zero_floor.values - m).norm(), (zeroed - m).norm() + 1e-12);
  }
}

TEST(PsdTruncate, MinEigenvalueAtLeastFloorOnRandomInputs) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(2, 12);
  for (int k = 0; k < 100; ++k) {
    const Matrix m = random_symmetric(rng, size(rng));
    const double floor = 1e-6 * (1 + k % 7);
    Eigen::SelfAdjointEigenSolver<Matrix> es(psd_truncate(m, floor).values);
    EXPECT_GE(es.eigenvalues()(0), floor - 1e-12);
  }
}

TEST(FrobeniusFit, RecoversPeriodicParameters) {
  const std::size_t p = 12;
  const Matrix target = build_cov_matrix(KernelFamily::periodic(1.5, 0.7, static_cast<double>(p)), p).values;
  const FrobeniusFit fit = frobenius_fit(target, KernelKind::periodic);
  EXPECT_LT(fit.objective, 1e-3);
  EXPECT_NEAR(fit.family.variance, 1.5, 1e-2);
  EXPECT_NEAR(fit.family.lengthscale(), 0.7, 1e-2);
  for (double start : fit.start_objectives) EXPECT_LE(fit.objective, start + 1e-15);
}

TEST(FrobeniusFit, ZeroTargetPinsVarianceToLowerBound) {
  FitOptions opt;
  opt.variance_bounds = std::pair{1e-6, 10.0};
  const FrobeniusFit fit = frobenius_fit(Matrix::Zero(5, 5), KernelKind::rbf, opt);
  EXPECT_DOUBLE_EQ(fit.family.variance, 1e-6);
}

TEST(FrobeniusFit, IdentityTargetDrivesLengthscaleToLowerBound) {
  const double s2 = 2.0;
  const Matrix target = s2 * Matrix::Identity(8, 8);
  FitOptions opt;
  opt.lengthscale_bounds = {0.3, 50.0};
  const FrobeniusFit fit = frobenius_fit(target, KernelKind::rbf, opt);
  EXPECT_DOUBLE_EQ(fit.family.lengthscale(), 0.3);
  EXPECT_NEAR(fit.family.variance, s2, 1e-3);
  // The objective keeps decreasing along the path toward the bound.
  double prev = std::numeric_limits<double>::infinity();
  for (double l = 3.0; l >= 0.3; l *= 0.8) {
    const double v = (target - build_cov_matrix(KernelFamily::rbf(s2, l), 8).values).norm();
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
  for (double start : fit.start_objectives) EXPECT_LE(fit.objective, start + 1e-15);
}

TEST(FrobeniusFit, EmptyBoxIsConfigError) {
  FitOptions opt;
  opt.lengthscale_bounds = {2.0, 1.0};
  EXPECT_THROW(frobenius_fit(Matrix::Identity(3, 3), KernelKind::rbf, opt), ConfigError);
  opt.lengthscale_bounds = {0.5, 1.0};
  opt.variance_bounds = std::pair{1.0, 0.5};
  EXPECT_THROW(frobenius_fit(Matrix::Identity(3, 3), KernelKind::rbf, opt), ConfigError);
}

TEST(CovKernel, ValidateCatchesBrokenInvariants) {
  CovKernel k{Matrix::Identity(3, 3), true};
  EXPECT_NO_THROW(k.validate());
  k.values(0, 0) = -1;
  EXPECT_THROW(k.validate(), ShapeError);
  CovKernel tilted{Matrix::Identity(3, 3), true};
  tilted.values(2, 2) = 2.0;
  EXPECT_THROW(tilted.validate(), ShapeError);
}

}  // namespace
}  // namespace qpgp_ilc
