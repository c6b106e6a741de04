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
/// Quasi-periodic GP over iterations: x_{i+1} = omega x_i + eps, eps ~ N(0, K)
/// independently per output dimension. Block and element-wise next-iteration
/// prediction, the analysis-mode predictor matrices, the two-stage estimator
/// and a dense conditional-mean oracle.

#include "qpgp_ilc/core.hpp"
#include "qpgp_ilc/kernels.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <optional>

namespace qpgp_ilc {

struct QpgpModel {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<double> omega;
  std::vector<CovKernel> kernels;

  QpgpModel() = default;
  QpgpModel(std::vector<double> omega_in, std::vector<CovKernel> kernels_in)
      : n(omega_in.size()), p(kernels_in.empty() ? 0 : kernels_in.front().size()),
        omega(std::move(omega_in)), kernels(std::move(kernels_in)) {
    validate();
  }

  /// Same omega and kernel for every output dimension.
  static QpgpModel uniform(std::size_t n, double omega, const CovKernel& kernel) {
    return QpgpModel(std::vector<double>(n, omega), std::vector<CovKernel>(n, kernel));
  }

  void validate() const {
    if (n == 0 || p == 0) throw ShapeError("QpgpModel: n and p must be positive");
    if (omega.size() != n || kernels.size() != n) throw ShapeError("QpgpModel: need one omega and one kernel per dimension");
    for (double w : omega)
      if (!(std::abs(w) < 1.0)) throw ParameterError("QpgpModel: |omega| must be strictly below 1");
    for (const auto& k : kernels) {
      if (k.size() != p) throw ShapeError("QpgpModel: kernels differ in size");
      k.validate(1e-9);
    }
  }

  /// Omega = diag(omega_1, ..., omega_n).
  Matrix omega_matrix() const {
    Vector w(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) w(static_cast<Eigen::Index>(j)) = omega[j];
    return w.asDiagonal();
  }

  void check_block(const ErrorTrajectory& e) const {
    if (e.dims() != n || e.samples() != p)
      throw ShapeError("error block is " + std::to_string(e.dims()) + "x" + std::to_string(e.samples()) + ", model is " +
                       std::to_string(n) + "x" + std::to_string(p));
  }
};

namespace detail {

/// Row-by-row Cholesky that stops pivoting at the first non-positive pivot.
/// Rows below `rank` are a valid factor of the matching leading block; every
/// later row still carries its entries in columns 0..rank-1, which is all a
/// conditional mean given the first `rank` elements needs.
class PrefixCholesky {
 public:
  PrefixCholesky() = default;

  explicit PrefixCholesky(const Matrix& k, double rel_tol = 1e-13) : l_(Matrix::Zero(k.rows(), k.cols())) {
    const Eigen::Index p = k.rows();
    const double scale = p > 0 ? std::max(k.diagonal().maxCoeff(), 0.0) : 0.0;
    rank_ = 0;
    bool failed = !(scale > 0.0);
    for (Eigen::Index r = 0; r < p; ++r) {
      const auto cols = std::min<Eigen::Index>(r, static_cast<Eigen::Index>(rank_));
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double s = k(r, c) - l_.row(r).head(c).dot(l_.row(c).head(c));
        l_(r, c) = s / l_(c, c);
      }
      if (failed) continue;
      const double d = k(r, r) - l_.row(r).head(r).squaredNorm();
      if (!(d > rel_tol * scale)) {
        failed = true;
        continue;
      }
      l_(r, r) = std::sqrt(d);
      rank_ = static_cast<std::size_t>(r + 1);
    }
  }

  std::size_t rank() const { return rank_; }
  const Matrix& factor() const { return l_; }

  /// Throws unless the leading `len` x `len` block is positive definite.
  void require(std::size_t len) const {
    if (len > rank_)
      throw NumericalError("leading " + std::to_string(len) + "x" + std::to_string(len) +
                           " kernel block is singular; raise the psd floor");
  }

 private:
  Matrix l_;
  std::size_t rank_ = 0;
};

}  // namespace detail

/// Draws e_1, ..., e_N with e_1 from the stationary law N(0, K / (1 - omega^2)).
inline ErrorHistory sample_trajectory(const QpgpModel& model, std::size_t iterations, std::uint64_t seed) {
  model.validate();
  const auto p = static_cast<Eigen::Index>(model.p);
  std::vector<Matrix> roots;
  for (const auto& k : model.kernels) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(k.values);
    roots.push_back(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
  }
  auto rng = detail::make_rng(seed, 0x9b9);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t j) {
    Vector z(p);
    for (Eigen::Index t = 0; t < p; ++t) z(t) = normal(rng);
    return Vector(roots[j] * z);
  };

  ErrorHistory out;
  out.reserve(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    ErrorTrajectory e(model.n, model.p);
    for (std::size_t j = 0; j < model.n; ++j) {
      const double w = model.omega[j];
      if (it == 0) {
        e.block(j) = draw(j) / std::sqrt(1.0 - w * w);
      } else {
        e.block(j) = w * out.back().block(j) + draw(j);
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Next-iteration prediction from the previous block only: omega_j e_{i,j}.
inline ErrorTrajectory block_predict(const QpgpModel& model, const ErrorTrajectory& e_i) {
  model.check_block(e_i);
  ErrorTrajectory out(model.n, model.p);
  for (std::size_t j = 0; j < model.n; ++j) out.block(j) = model.omega[j] * e_i.block(j);
  return out;
}

/// Prediction of element t (1-based) of dimension j of the next block given
/// its first t-1 observed elements.
inline double element_predict(const QpgpModel& model, const ErrorTrajectory& e_i, const Vector& prefix, std::size_t j,
                              std::size_t t) {
  model.check_block(e_i);
  if (j >= model.n) throw ShapeError("element_predict: dimension out of range");
  if (t < 1 || t > model.p) throw ShapeError("element_predict: t must lie in 1..p");
  if (static_cast<std::size_t>(prefix.size()) != t - 1) throw ShapeError("element_predict: prefix length must be t-1");
  const double w = model.omega[j];
  const auto prev = e_i.block(j);
  const auto te = static_cast<Eigen::Index>(t - 1);
  const double base = w * prev(te);
  if (t == 1) return base;

  const Matrix& k = model.kernels[j].values;
  Eigen::LLT<Matrix> llt(k.topLeftCorner(te, te));
  if (llt.info() != Eigen::Success) throw NumericalError("element_predict: singular leading kernel block; raise the psd floor");
  const Vector resid = prefix - w * prev.head(te);
  return base + k.row(te).head(te).dot(llt.solve(resid));
}

/// Sequential element-wise predictor for closed-loop use. One factorization per
/// model, O(t) work per timestep.
class ElementPredictor {
 public:
  ElementPredictor() = default;

  explicit ElementPredictor(QpgpModel model) : model_(std::move(model)) {
    model_.validate();
    for (const auto& k : model_.kernels) chol_.emplace_back(k.values);
  }

  const QpgpModel& model() const { return model_; }

  /// Starts a new iteration that follows `previous`.
  void reset(const ErrorTrajectory& previous) {
    model_.check_block(previous);
    prev_ = previous;
    z_.assign(model_.n, Vector::Zero(static_cast<Eigen::Index>(model_.p)));
    seen_.assign(model_.n, 0);
  }

  /// Conditional mean of timestep t (0-based) of dimension j given the
  /// timesteps observed so far; t may lie anywhere at or beyond the prefix.
  double predict(std::size_t j, std::size_t t) const {
    const std::size_t seen = seen_.at(j);
    if (t < seen) throw StateError("ElementPredictor: timestep already observed");
    if (t >= model_.p) throw ShapeError("ElementPredictor: timestep out of range");
    const double base = model_.omega[j] * prev_(j, t);
    if (seen == 0) return base;
    const auto se = static_cast<Eigen::Index>(seen);
    return base + chol_[j].factor().row(static_cast<Eigen::Index>(t)).head(se).dot(z_[j].head(se));
  }

  std::size_t observed(std::size_t j) const { return seen_.at(j); }

  void observe(std::size_t j, std::size_t t, double value) {
    if (seen_.at(j) != t) throw StateError("ElementPredictor: observations must arrive in order");
    chol_[j].require(t + 1);
    const auto te = static_cast<Eigen::Index>(t);
    const Matrix& l = chol_[j].factor();
    const double r = value - model_.omega[j] * prev_(j, t);
    z_[j](te) = (r - l.row(te).head(te).dot(z_[j].head(te))) / l(te, te);
    seen_[j] = t + 1;
  }

 private:
  QpgpModel model_;
  std::vector<detail::PrefixCholesky> chol_;
  ErrorTrajectory prev_;
  std::vector<Vector> z_;
  std::vector<std::size_t> seen_;
};

/// Lower-triangular M^{(t)} with ehat^{(t)} = M^{(t)} e_i^{(t)} when the
/// current prefix is replaced by its own prediction.
struct PredictorMatrix {
  std::size_t t = 0;
  Matrix m;
};

inline PredictorMatrix predictor_matrix(const QpgpModel& model, std::size_t t, std::size_t j) {
  model.validate();
  if (j >= model.n) throw ShapeError("predictor_matrix: dimension out of range");
  if (t < 1 || t > model.p) throw ShapeError("predictor_matrix: t must lie in 1..p");
  const double w = model.omega[j];
  const Matrix& k = model.kernels[j].values;
  const detail::PrefixCholesky chol(k);
  if (t > 1) chol.require(t - 1);

  const auto te = static_cast<Eigen::Index>(t);
  Matrix m = Matrix::Zero(te, te);
  m(0, 0) = w;
  for (Eigen::Index r = 1; r < te; ++r) {
    // c_r^T K_{r}^{-1} = l_r^T L_{r}^{-1}, with l_r the strict lower row r of the factor.
    const Matrix lead = chol.factor().topLeftCorner(r, r);
    const Vector gain = lead.transpose().triangularView<Eigen::Upper>().solve(chol.factor().row(r).head(r).transpose());
    Matrix shifted = m.topLeftCorner(r, r);
    shifted.diagonal().array() -= w;
    m.row(r).head(r) = gain.transpose() * shifted;
    m(r, r) = w;
  }
  return PredictorMatrix{t, std::move(m)};
}

/// Stacked next-iteration block M^{(t)} for every dimension: blkdiag_j M_j^{(t)}.
inline Matrix stacked_predictor_matrix(const QpgpModel& model, std::size_t t) {
  const auto te = static_cast<Eigen::Index>(t);
  const auto n = static_cast<Eigen::Index>(model.n);
  Matrix out = Matrix::Zero(n * te, n * te);
  for (Eigen::Index j = 0; j < n; ++j)
    out.block(j * te, j * te, te, te) = predictor_matrix(model, t, static_cast<std::size_t>(j)).m;
  return out;
}

/// Largest conditioning set the dense oracle accepts.
inline constexpr std::size_t kBruteForceLimit = 5000;

/// Exact Gaussian conditional mean of the unobserved tail of block i+1 of
/// dimension j, given every past block and the observed prefix, computed from
/// the full stacked covariance omega^{|a-b|} K / (1 - omega^2).
inline Vector brute_force_conditional_mean(const QpgpModel& model, const ErrorHistory& history, const Vector& prefix,
                                           std::size_t j) {
  model.validate();
  if (j >= model.n) throw ShapeError("brute_force_conditional_mean: dimension out of range");
  for (const auto& e : history) model.check_block(e);
  const auto p = static_cast<Eigen::Index>(model.p);
  const auto i = static_cast<Eigen::Index>(history.size());
  const Eigen::Index q = prefix.size();
  if (q > p) throw ShapeError("brute_force_conditional_mean: prefix longer than a block");
  const auto obs = static_cast<std::size_t>(i * p + q);
  if (obs > kBruteForceLimit)
    throw ConfigError("brute_force_conditional_mean: " + std::to_string(obs) + " conditioning points exceed " +
                      std::to_string(kBruteForceLimit) + "; use fewer iterations or a shorter period");

  const double w = model.omega[j];
  const Matrix& k = model.kernels[j].values;
  const Eigen::Index total = (i + 1) * p;
  Matrix cov(total, total);
  for (Eigen::Index a = 0; a <= i; ++a)
    for (Eigen::Index b = 0; b <= i; ++b)
      cov.block(a * p, b * p, p, p) = (std::pow(w, static_cast<double>(std::abs(a - b))) / (1.0 - w * w)) * k;

  const Eigen::Index no = i * p + q;
  Vector y(no);
  for (Eigen::Index a = 0; a < i; ++a) y.segment(a * p, p) = history[static_cast<std::size_t>(a)].block(j);
  y.tail(q) = prefix;
  if (no == 0) return Vector::Zero(p - q);

  const Matrix soo = cov.topLeftCorner(no, no);
  const Matrix suo = cov.block(no, 0, total - no, no);
  Vector alpha;
  Eigen::LLT<Matrix> llt(soo);
  if (llt.info() == Eigen::Success) {
    alpha = llt.solve(y);
  } else {
    alpha = soo.completeOrthogonalDecomposition().solve(y);
  }
  return suo * alpha;
}

// ---------------------------------------------------------------------------
// Estimation

/// Per-dimension sufficient statistics over consecutive pairs k = 2..i:
/// s00 = sum e_{k-1} e_{k-1}^T, s10 = sum e_k e_{k-1}^T, s11 = sum e_k e_k^T.
struct PairStats {
  Matrix s00;
  Matrix s10;
  Matrix s11;
  std::size_t pairs = 0;

  explicit PairStats(std::size_t p = 0)
      : s00(Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))), s10(s00), s11(s00) {}

  void add(const Vector& prev, const Vector& next) {
    s00.selfadjointView<Eigen::Lower>().rankUpdate(prev);
    s11.selfadjointView<Eigen::Lower>().rankUpdate(next);
    s10.noalias() += next * prev.transpose();
    ++pairs;
  }

  Matrix lower00() const { return s00.selfadjointView<Eigen::Lower>(); }
  Matrix lower11() const { return s11.selfadjointView<Eigen::Lower>(); }
};

struct Stage1Options {
  std::size_t max_alternations = 100;
  double tol = 1e-6;
  double omega_bound = 0.999;
  double relative_floor = 1e-8;
  double absolute_floor = 1e-14;
};

struct Stage1Result {
  double omega = 0.0;
  Matrix kernel;  ///< Unprojected residual covariance.
  std::size_t alternations = 0;
  std::vector<double> objective;  ///< Reduced negative log-likelihood after each alternation.
};

namespace detail {

struct RegularizedInverse {
  Matrix inverse;
  double log_det = 0.0;
  Matrix basis;             ///< eigenvectors, ascending eigenvalue
  Eigen::Index floored = 0;  ///< leading columns of `basis` held at the floor
};

inline RegularizedInverse regularized_inverse(const Matrix& k, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (k + k.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("stage 1: eigendecomposition failed");
  const Vector lam = es.eigenvalues().cwiseMax(floor);
  RegularizedInverse out;
  out.inverse = es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  out.log_det = lam.array().log().sum();
  out.basis = es.eigenvectors();
  while (out.floored < lam.size() && es.eigenvalues()(out.floored) <= floor) ++out.floored;
  return out;
}

/// Second derivative of the omega profile, treating the floored eigenspace N
/// as fixed rank. With fewer pairs than samples R(omega) has rank <= c for
/// every omega, the floored objective is c log pdet R + const, and
///   f'' = 2 tr(K+ S00) - tr(K+ R' K+ R') / c + (2/c) tr(K+^2 R' P_N R').
/// Using the floored inverse in the first term instead counts S00 mass in N
/// at 1/floor and shrinks Newton steps to nothing.
inline double profile_curvature(const RegularizedInverse& ki, const Matrix& s00, const Matrix& rp, double c) {
  const Eigen::Index p = ki.basis.cols();
  const Eigen::Index r = p - ki.floored;
  if (ki.floored == 0) {
    const Matrix kr = ki.inverse * rp;
    return 2.0 * (ki.inverse.cwiseProduct(s00)).sum() - (kr.cwiseProduct(kr.transpose())).sum() / c;
  }
  const auto qr = ki.basis.rightCols(r);
  const auto qn = ki.basis.leftCols(ki.floored);
  // In the eigenbasis K+ is diagonal on the range block.
  const Vector lam_inv = (qr.transpose() * ki.inverse * qr).diagonal();
  const Matrix rp_rr = qr.transpose() * rp * qr;
  const Matrix rp_rn = qr.transpose() * rp * qn;
  const Matrix s_rr = qr.transpose() * s00 * qr;
  const Matrix a = lam_inv.asDiagonal() * rp_rr;
  const double t1 = 2.0 * lam_inv.dot(s_rr.diagonal());
  const double t2 = (a.cwiseProduct(a.transpose())).sum() / c;
  const double t3 = 2.0 / c * (lam_inv.cwiseAbs2().asDiagonal() * rp_rn * rp_rn.transpose()).trace();
  return t1 - t2 + t3;
}

/// Alternating minimization of c log det K + tr(K^{-1} R(omega)), where
/// R(omega) = s11 - omega (s10 + s10^T) + omega^2 s00 and c is the pair count.
/// K is held above a floor fixed for the whole call, so the K half-step is the
/// exact constrained minimizer and no accepted step raises the objective.
///
/// With K re-optimized after every omega move the problem is one-dimensional
/// in omega, and g = tr(K^{-1} dR/domega) is the exact profile derivative.
/// Each omega half-step first tries a Newton step on that profile and falls
/// back to the closed-form weighted regression if the objective would rise.
inline Stage1Result stage1_from_stats(const PairStats& stats, const std::optional<std::pair<double, Matrix>>& warm,
                                      const Stage1Options& opt) {
  if (stats.pairs == 0) throw InsufficientDataError("stage 1 needs at least two blocks");
  const Eigen::Index p = stats.s00.rows();
  const auto c = static_cast<double>(stats.pairs);
  const Matrix s00 = stats.lower00();
  const Matrix s11 = stats.lower11();
  const Matrix& s10 = stats.s10;
  const Matrix cross = s10 + s10.transpose();
  auto residual = [&](double w) { return Matrix(s11 - w * cross + w * w * s00); };
  auto clip = [&](double w) { return std::clamp(w, -opt.omega_bound, opt.omega_bound); };

  const double scale = s11.trace() / (c * static_cast<double>(std::max<Eigen::Index>(p, 1)));
  const double floor = std::max(opt.relative_floor * scale, opt.absolute_floor);
  auto objective_at = [&](double w, const RegularizedInverse& ki) {
    return c * ki.log_det + (ki.inverse.cwiseProduct(residual(w))).sum();
  };

  Stage1Result out;
  double w = std::numeric_limits<double>::quiet_NaN();  // set once (w, K) sits on the profile
  double current = std::numeric_limits<double>::infinity();
  Matrix k = Matrix::Identity(p, p);
  if (warm) {
    if (warm->second.rows() != p || warm->second.cols() != p) throw ShapeError("stage 1: warm-start kernel has the wrong size");
    w = clip(warm->first);
    k = residual(w) / c;
  }
  RegularizedInverse inv = regularized_inverse(k, floor);
  if (warm) current = objective_at(w, inv);
  double prev_w = w;
  double prev_norm = warm ? k.norm() : std::numeric_limits<double>::quiet_NaN();

  for (std::size_t a = 0; a < opt.max_alternations; ++a) {
    bool moved = false;
    if (std::isfinite(w)) {
      const Matrix rp = 2.0 * w * s00 - cross;
      const double g = (inv.inverse.cwiseProduct(rp)).sum();
      const double curv = profile_curvature(inv, s00, rp, c);
      if (curv > 0.0 && g != 0.0) {
        const double trial_w = clip(w - g / curv);
        Matrix trial = residual(trial_w) / c;
        RegularizedInverse trial_inv = regularized_inverse(trial, floor);
        const double value = objective_at(trial_w, trial_inv);
        if (value <= current) {
          w = trial_w;
          k = std::move(trial);
          inv = std::move(trial_inv);
          current = value;
          moved = true;
        }
      }
    }
    if (!moved) {
      const double den = (inv.inverse.cwiseProduct(s00)).sum();
      const double num = (inv.inverse.cwiseProduct(s10)).sum();
      const double from = w;
      w = clip(den > 0.0 ? num / den : 0.0);
      k = residual(w) / c;
      inv = regularized_inverse(k, floor);
      current = objective_at(w, inv);
      // With fewer pairs than samples the floored K pins omega near its last
      // value and plain steps crawl; keep doubling the step along the profile
      // while it still improves.
      if (std::isfinite(from) && w != from) {
        for (double tau = 2.0; tau <= 1024.0; tau *= 2.0) {
          const double trial_w = clip(from + tau * (w - from));
          Matrix trial = residual(trial_w) / c;
          RegularizedInverse trial_inv = regularized_inverse(trial, floor);
          const double value = objective_at(trial_w, trial_inv);
          if (!(value < current)) break;
          w = trial_w;
          k = std::move(trial);
          inv = std::move(trial_inv);
          current = value;
          if (std::abs(trial_w) >= opt.omega_bound) break;
        }
      }
    }
    out.objective.push_back(current);
    out.alternations = a + 1;

    const double norm = k.norm();
    const bool w_done = std::isfinite(prev_w) && std::abs(w - prev_w) <= opt.tol * std::max(std::abs(w), 1e-12);
    const bool k_done = norm == 0.0 || (std::isfinite(prev_norm) && std::abs(norm - prev_norm) <= opt.tol * norm);
    prev_w = w;
    prev_norm = norm;
    if ((w_done || w == 0.0) && k_done) break;
  }
  out.omega = w;
  out.kernel = std::move(k);
  return out;
}

}  // namespace detail

/// Alternating (omega, K) estimate for dimension j from the full history.
inline Stage1Result estimate_stage1(const ErrorHistory& history, std::size_t j,
                                    const std::optional<std::pair<double, Matrix>>& warm = std::nullopt,
                                    const Stage1Options& options = {}) {
  if (history.size() < 2) throw InsufficientDataError("estimate_stage1 needs at least two blocks");
  check_history(history);
  if (j >= history.front().dims()) throw ShapeError("estimate_stage1: dimension out of range");
  PairStats stats(history.front().samples());
  for (std::size_t k = 1; k < history.size(); ++k) stats.add(history[k - 1].block(j), history[k].block(j));
  return detail::stage1_from_stats(stats, warm, options);
}

struct Stage2Options {
  double relative_floor = 1e-8;
  double absolute_floor = 1e-14;
};

/// Diagonal averaging to stationarity, then eigenvalue clipping.
inline CovKernel estimate_stage2(const Matrix& kernel, const Stage2Options& options = {}) {
  if (kernel.rows() != kernel.cols()) throw ShapeError("estimate_stage2: kernel must be square");
  if (!detail::is_symmetric(kernel, 1e-9)) throw ShapeError("estimate_stage2: kernel must be symmetric");
  const Matrix proj = toeplitz_project(kernel);
  const double floor = std::max(default_psd_floor(proj, options.relative_floor), options.absolute_floor);
  return psd_truncate(proj, floor);
}

/// How the final kernel is formed: the projected data-driven matrix, or its
/// Frobenius-nearest member of a parametric family.
struct KernelMode {
  KernelKind kind = KernelKind::general;
  FitOptions fit;

  static KernelMode general() { return {}; }
  static KernelMode parametric(KernelKind kind, FitOptions fit = {}) { return KernelMode{kind, std::move(fit)}; }
};

struct EstimateOptions {
  Stage1Options stage1;
  Stage2Options stage2;
  KernelMode kernel_mode;
};

namespace detail {

inline CovKernel finish_kernel(const Matrix& raw, const EstimateOptions& options) {
  CovKernel k = estimate_stage2(raw, options.stage2);
  if (options.kernel_mode.kind == KernelKind::general) return k;
  const FrobeniusFit fit = frobenius_fit(k.values, options.kernel_mode.kind, options.kernel_mode.fit);
  return build_cov_matrix(fit.family, k.size());
}

}  // namespace detail

/// Refits every dimension from scratch; warm-starts from `previous` when given.
inline QpgpModel update_estimates(const ErrorHistory& history, const std::optional<QpgpModel>& previous = std::nullopt,
                                  const EstimateOptions& options = {}) {
  if (history.size() < 2) throw InsufficientDataError("update_estimates needs at least two blocks");
  check_history(history);
  const std::size_t n = history.front().dims();
  std::vector<double> omega(n);
  std::vector<CovKernel> kernels(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::optional<std::pair<double, Matrix>> warm;
    if (previous) warm = std::pair{previous->omega.at(j), previous->kernels.at(j).values};
    const Stage1Result s1 = estimate_stage1(history, j, warm, options.stage1);
    omega[j] = s1.omega;
    kernels[j] = detail::finish_kernel(s1.kernel, options);
  }
  return QpgpModel(std::move(omega), std::move(kernels));
}

/// Incremental estimator: each new block folds into running statistics, so a
/// refit costs O(p^3) however many iterations have been seen.
class QpgpEstimator {
 public:
  QpgpEstimator(std::size_t n, std::size_t p, EstimateOptions options = {})
      : n_(n), p_(p), options_(std::move(options)), stats_(n, PairStats(p)) {
    if (n == 0 || p == 0) throw ShapeError("QpgpEstimator: n and p must be positive");
  }

  void add(const ErrorTrajectory& e) {
    if (e.dims() != n_ || e.samples() != p_) throw ShapeError("QpgpEstimator: block shape mismatch");
    if (last_)
      for (std::size_t j = 0; j < n_; ++j) stats_[j].add(last_->block(j), e.block(j));
    last_ = e;
    ++blocks_;
  }

  std::size_t blocks() const { return blocks_; }
  bool ready() const { return blocks_ >= 2; }

  /// Refits all dimensions, warm-starting from the previous fit.
  const QpgpModel& refit() {
    if (!ready()) throw InsufficientDataError("QpgpEstimator: need at least two blocks");
    std::vector<double> omega(n_);
    std::vector<CovKernel> kernels(n_);
    warm_.resize(n_);
    last_alternations_ = 0;
    for (std::size_t j = 0; j < n_; ++j) {
      const Stage1Result s1 = detail::stage1_from_stats(stats_[j], warm_[j], options_.stage1);
      warm_[j] = std::pair{s1.omega, s1.kernel};
      last_alternations_ += s1.alternations;
      omega[j] = s1.omega;
      kernels[j] = detail::finish_kernel(s1.kernel, options_);
    }
    model_ = QpgpModel(std::move(omega), std::move(kernels));
    return *model_;
  }

  const std::optional<QpgpModel>& model() const { return model_; }
  std::size_t last_alternations() const { return last_alternations_; }

 private:
  std::size_t n_;
  std::size_t p_;
  EstimateOptions options_;
  std::vector<PairStats> stats_;
  std::optional<ErrorTrajectory> last_;
  std::size_t blocks_ = 0;
  std::vector<std::optional<std::pair<double, Matrix>>> warm_;
  std::optional<QpgpModel> model_;
  std::size_t last_alternations_ = 0;
};

}  // namespace qpgp_ilc
