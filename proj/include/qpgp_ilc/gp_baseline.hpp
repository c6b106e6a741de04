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
/// GP regression baselines over (iteration, timestep) inputs: an exact GP on
/// the complete error history and a sparse variational inducing-point GP.
/// Output dimensions are independent regressions that share one kernel, so
/// they share one factorization.

#include "qpgp_ilc/core.hpp"
#include "qpgp_ilc/detail/optimize.hpp"
#include "qpgp_ilc/kernels.hpp"

#include <Eigen/Cholesky>

#include <numbers>
#include <optional>

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#endif

namespace qpgp_ilc {

/// Product kernel k((i, t), (i', t')) = rbf_iter(i, i') * k_time(t, t'). The
/// overall variance lives in the time family.
struct GpKernel {
  KernelFamily time = KernelFamily::rbf(1.0, 5.0);
  double iteration_lengthscale = 3.0;

  void validate() const {
    time.validate();
    if (time.kind == KernelKind::general) throw ParameterError("GpKernel: time kernel must be rbf or periodic");
    if (!(iteration_lengthscale > 0.0)) throw ParameterError("GpKernel: iteration lengthscale must be positive");
  }

  double iteration_factor(double i, double i2) const {
    const double d = (i - i2) / iteration_lengthscale;
    return std::exp(-0.5 * d * d);
  }

  double operator()(double i, double t, double i2, double t2) const {
    return iteration_factor(i, i2) * evaluate(time, t, t2);
  }

  /// d/dt of k_time(t, t2), divided by k_time(t, t2).
  double time_log_slope(double t, double t2) const {
    const double d = t - t2;
    if (time.kind == KernelKind::rbf) return -d / (time.lengthscale() * time.lengthscale());
    const double w = 2.0 * std::numbers::pi / time.period();
    return -std::sin(w * d) * w / (time.lengthscale() * time.lengthscale());
  }

  double iteration_log_slope(double i, double i2) const {
    return -(i - i2) / (iteration_lengthscale * iteration_lengthscale);
  }

  double variance() const { return time.variance; }
};

struct GpInput {
  double iteration = 1.0;
  double timestep = 1.0;
};

/// Training set: one input list, one target column per output dimension.
struct GpDataset {
  std::vector<GpInput> inputs;
  Matrix targets;  ///< N x n

  std::size_t size() const { return inputs.size(); }

  void validate(std::optional<std::size_t> p = std::nullopt) const {
    if (inputs.empty()) throw InsufficientDataError("GP dataset is empty");
    if (static_cast<std::size_t>(targets.rows()) != inputs.size())
      throw ShapeError("GP dataset: inputs and targets differ in length");
    if (p)
      for (const auto& x : inputs)
        if (x.timestep < 1.0 || x.timestep > static_cast<double>(*p)) throw ShapeError("GP dataset: timestep outside 1..p");
  }

  /// Appends iteration `iteration` of a lifted error block at timesteps 1..p.
  void append(double iteration, const ErrorTrajectory& e) {
    const auto p = static_cast<Eigen::Index>(e.samples());
    const auto n = static_cast<Eigen::Index>(e.dims());
    if (targets.size() == 0) targets.resize(0, n);
    if (targets.cols() != n) throw ShapeError("GP dataset: output dimension changed");
    const Eigen::Index base = targets.rows();
    targets.conservativeResize(base + p, n);
    for (Eigen::Index t = 0; t < p; ++t) {
      inputs.push_back({iteration, static_cast<double>(t + 1)});
      for (Eigen::Index j = 0; j < n; ++j) targets(base + t, j) = e(static_cast<std::size_t>(j), static_cast<std::size_t>(t));
    }
  }
};

namespace detail {

/// Sets flush-to-zero and denormals-are-zero for the current thread while in
/// scope. Far-apart iterations drive factor entries below 1e-308, and
/// subnormal arithmetic is several times slower on x86.
class ScopedFlushDenormals {
 public:
  ScopedFlushDenormals(const ScopedFlushDenormals&) = delete;
  ScopedFlushDenormals& operator=(const ScopedFlushDenormals&) = delete;
#if defined(__SSE__) || defined(_M_X64)
  ScopedFlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~ScopedFlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned int saved_;
#else
  ScopedFlushDenormals() = default;
#endif
};

inline Matrix cross_cov(const GpKernel& k, const std::vector<GpInput>& a, const std::vector<GpInput>& b) {
  Matrix out(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const auto& xb = b[static_cast<std::size_t>(c)];
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const auto& xa = a[static_cast<std::size_t>(r)];
      out(r, c) = k(xa.iteration, xa.timestep, xb.iteration, xb.timestep);
    }
  }
  return out;
}

/// Cholesky of `m` with diagonal jitter escalated 1e-10 -> 1e-6 (relative to
/// the mean diagonal) on failure.
inline Eigen::LLT<Matrix> robust_llt(Matrix m, double* jitter_used = nullptr) {
  Eigen::LLT<Matrix> llt(m);
  double jitter = 0.0;
  if (llt.info() != Eigen::Success) {
    const double scale = std::max(m.diagonal().mean(), 1e-300);
    for (double rel = 1e-10; rel <= 1e-6 * 1.0001; rel *= 10.0) {
      const double add = rel * scale - jitter;
      m.diagonal().array() += add;
      jitter = rel * scale;
      llt.compute(m);
      if (llt.info() == Eigen::Success) break;
    }
    if (llt.info() != Eigen::Success) throw NumericalError("GP covariance not positive definite after jitter 1e-6");
  }
  if (jitter_used) *jitter_used = jitter;
  return llt;
}

inline std::vector<GpInput> block_inputs(double iteration, std::size_t p) {
  std::vector<GpInput> out(p);
  for (std::size_t t = 0; t < p; ++t) out[t] = {iteration, static_cast<double>(t + 1)};
  return out;
}

}  // namespace detail

/// Exact GP posterior over a fixed dataset.
struct FullGpModel {
  GpKernel kernel;
  double noise = 0.0;
  std::vector<GpInput> inputs;
  Eigen::LLT<Matrix> factor;
  Matrix alpha;  ///< (K + noise I)^{-1} Y, N x n
  double jitter = 0.0;
};

inline FullGpModel fit_full_gp(const GpDataset& data, const GpKernel& kernel, double noise) {
  data.validate();
  kernel.validate();
  if (!(noise > 0.0)) throw ParameterError("fit_full_gp: noise variance must be positive");
  FullGpModel m{kernel, noise, data.inputs, {}, {}, 0.0};
  Matrix k = detail::cross_cov(kernel, data.inputs, data.inputs);
  k.diagonal().array() += noise;
  m.factor = detail::robust_llt(std::move(k), &m.jitter);
  m.alpha = m.factor.solve(data.targets);
  return m;
}

/// Posterior mean at arbitrary inputs, one column per output dimension.
inline Matrix predict_full_gp(const std::optional<FullGpModel>& model, const std::vector<GpInput>& query) {
  if (!model) throw StateError("predict_full_gp: model is not fitted");
  return detail::cross_cov(model->kernel, query, model->inputs) * model->alpha;
}

/// Posterior mean of iteration `iteration` at timesteps 1..p.
inline ErrorTrajectory predict_full_gp(const std::optional<FullGpModel>& model, double iteration, std::size_t p) {
  const Matrix mean = predict_full_gp(model, detail::block_inputs(iteration, p));
  ErrorTrajectory out(static_cast<std::size_t>(mean.cols()), p);
  for (Eigen::Index j = 0; j < mean.cols(); ++j) out.block(static_cast<std::size_t>(j)) = mean.col(j);
  return out;
}

/// Exact GP over whole iteration blocks. Each new block extends the Cholesky
/// factor by one block row (a p x (r+1)p panel), so adding block r costs
/// O(r^2 p^3) and the history is never refactored.
class IncrementalFullGp {
 public:
  IncrementalFullGp(std::size_t n, std::size_t p, GpKernel kernel, double noise)
      : n_(n), p_(p), kernel_(std::move(kernel)), noise_(noise) {
    kernel_.validate();
    if (!(noise > 0.0)) throw ParameterError("IncrementalFullGp: noise variance must be positive");
    if (n == 0 || p == 0) throw ShapeError("IncrementalFullGp: n and p must be positive");
    const auto pe = static_cast<Eigen::Index>(p);
    time_cov_.resize(pe, pe);
    for (Eigen::Index a = 0; a < pe; ++a)
      for (Eigen::Index b = 0; b < pe; ++b)
        time_cov_(a, b) = evaluate(kernel_.time, static_cast<double>(a + 1), static_cast<double>(b + 1));
  }

  std::size_t blocks() const { return rows_.size(); }

  void add(double iteration, const ErrorTrajectory& e) {
    if (e.dims() != n_ || e.samples() != p_) throw ShapeError("IncrementalFullGp: block shape mismatch");
    const detail::ScopedFlushDenormals ftz;
    const auto p = static_cast<Eigen::Index>(p_);
    const auto r = static_cast<Eigen::Index>(rows_.size());

    // Off-diagonal panel Y = K_{r,old} L_old^{-T}, solved block column by block column.
    Matrix panel(p, (r + 1) * p);
    for (Eigen::Index c = 0; c < r; ++c) {
      Matrix rhs = kernel_.iteration_factor(iteration, iters_[static_cast<std::size_t>(c)]) * time_cov_;
      if (c > 0) rhs.noalias() -= panel.leftCols(c * p) * rows_[static_cast<std::size_t>(c)].leftCols(c * p).transpose();
      const auto diag = rows_[static_cast<std::size_t>(c)].rightCols(p);
      panel.middleCols(c * p, p) = diag.triangularView<Eigen::Lower>().solve(rhs.transpose()).transpose();
    }
    Matrix schur = time_cov_;
    schur.diagonal().array() += noise_;
    if (r > 0) schur.noalias() -= panel.leftCols(r * p) * panel.leftCols(r * p).transpose();
    const Eigen::LLT<Matrix> llt = detail::robust_llt(0.5 * (schur + schur.transpose()));
    panel.rightCols(p) = llt.matrixL();

    // Forward substitution only needs the new rows.
    Matrix y(p, static_cast<Eigen::Index>(n_));
    for (std::size_t j = 0; j < n_; ++j) y.col(static_cast<Eigen::Index>(j)) = e.block(j);
    if (r > 0) y.noalias() -= panel.leftCols(r * p) * z_.topRows(r * p);
    y = panel.rightCols(p).triangularView<Eigen::Lower>().solve(y);
    z_.conservativeResize((r + 1) * p, static_cast<Eigen::Index>(n_));
    z_.bottomRows(p) = y;

    rows_.push_back(std::move(panel));
    iters_.push_back(iteration);
    solve_alpha();
  }

  /// Posterior mean for iteration `iteration` at every timestep.
  ErrorTrajectory predict(double iteration) const {
    if (rows_.empty()) throw StateError("IncrementalFullGp: no data");
    const auto p = static_cast<Eigen::Index>(p_);
    Matrix weighted = Matrix::Zero(p, static_cast<Eigen::Index>(n_));
    for (std::size_t c = 0; c < rows_.size(); ++c)
      weighted += kernel_.iteration_factor(iteration, iters_[c]) * alpha_.middleRows(static_cast<Eigen::Index>(c) * p, p);
    const Matrix mean = time_cov_ * weighted;
    ErrorTrajectory out(n_, p_);
    for (std::size_t j = 0; j < n_; ++j) out.block(j) = mean.col(static_cast<Eigen::Index>(j));
    return out;
  }

 private:
  void solve_alpha() {
    const auto p = static_cast<Eigen::Index>(p_);
    Matrix acc = z_;
    alpha_.resize(acc.rows(), acc.cols());
    for (auto d = static_cast<Eigen::Index>(rows_.size()) - 1; d >= 0; --d) {
      const Matrix& row = rows_[static_cast<std::size_t>(d)];
      alpha_.middleRows(d * p, p) =
          row.rightCols(p).triangularView<Eigen::Lower>().transpose().solve(acc.middleRows(d * p, p));
      if (d > 0) acc.topRows(d * p).noalias() -= row.leftCols(d * p).transpose() * alpha_.middleRows(d * p, p);
    }
  }

  std::size_t n_;
  std::size_t p_;
  GpKernel kernel_;
  double noise_;
  Matrix time_cov_;
  std::vector<Matrix> rows_;
  std::vector<double> iters_;
  Matrix z_;
  Matrix alpha_;
};

// ---------------------------------------------------------------------------
// Sparse variational GP (collapsed bound).

struct SparseGpOptions {
  std::size_t inducing = 100;
  std::size_t kmeans_iterations = 20;
  std::size_t refine_steps = 5;   ///< gradient-ascent steps on the bound
  double initial_step = 0.5;      ///< in kernel-lengthscale units
  std::uint64_t seed = 0;
  std::optional<std::vector<GpInput>> initial_inducing;  ///< skips k-means when set
};

struct SparseGpModel {
  GpKernel kernel;
  double noise = 0.0;
  std::vector<GpInput> inducing_inputs;
  Matrix luu;       ///< chol(Kuu)
  Matrix lb;        ///< chol(I + A A^T), A = Luu^{-1} Kuf / sigma
  Matrix weights;   ///< Luu^{-T} LB^{-T} c, M x n
  double bound = 0.0;
  std::vector<double> bound_trace;
  double step = 0.0;  ///< last accepted step size, reused by warm starts
  std::vector<std::string> warnings;
};

namespace detail {

struct SparseTerms {
  double bound = 0.0;
  Matrix luu;
  Matrix lb;
  Matrix weights;
  Matrix grad;  ///< d bound / d Z, M x 2 (iteration, timestep); only when requested
};

/// Collapsed lower bound summed over output dimensions, its gradient with
/// respect to the inducing inputs, and the predictive weights.
inline SparseTerms sparse_terms(const GpKernel& kern, double noise, const std::vector<GpInput>& z, const GpDataset& data,
                                bool want_grad) {
  const auto m = static_cast<Eigen::Index>(z.size());
  const auto nn = static_cast<double>(data.size());
  const auto dims = static_cast<double>(data.targets.cols());
  const double beta = 1.0 / noise;
  const double sigma = std::sqrt(noise);

  Matrix kuu = cross_cov(kern, z, z);
  const Matrix kuf = cross_cov(kern, z, data.inputs);
  const Eigen::LLT<Matrix> uu = robust_llt(kuu);
  SparseTerms out;
  out.luu = uu.matrixL();
  const Matrix a = out.luu.triangularView<Eigen::Lower>().solve(kuf) / sigma;
  Matrix b = Matrix::Identity(m, m);
  b.selfadjointView<Eigen::Lower>().rankUpdate(a);
  b = b.selfadjointView<Eigen::Lower>();
  const Eigen::LLT<Matrix> bl = robust_llt(b);
  out.lb = bl.matrixL();
  const Matrix ay = a * data.targets / sigma;
  const Matrix c = out.lb.triangularView<Eigen::Lower>().solve(ay);

  const double log_det_b = 2.0 * out.lb.diagonal().array().log().sum();
  const double yy = data.targets.squaredNorm();
  const double trace_kff = nn * kern.variance();
  const double trace_q = a.squaredNorm() * noise;
  out.bound = -0.5 * dims * (nn * std::log(2.0 * std::numbers::pi) + log_det_b + nn * std::log(noise)) -
              0.5 * (beta * yy - c.squaredNorm()) - 0.5 * dims * beta * (trace_kff - trace_q);
  out.weights = out.luu.transpose().triangularView<Eigen::Upper>().solve(
      out.lb.transpose().triangularView<Eigen::Upper>().solve(c));

  if (!want_grad) return out;

  // With W = Kuf, P = Kuu + beta W W^T = Luu B Luu^T and v_j = P^{-1} W y_j:
  //   dF/dKuu = dims (-P^{-1}/2 + Kuu^{-1}/2 - beta/2 Kuu^{-1} W W^T Kuu^{-1}) - beta^2/2 sum_j v_j v_j^T
  //   dF/dW   = dims (-beta P^{-1} W + beta Kuu^{-1} W) + sum_j (beta^2 v_j y_j^T - beta^3 v_j v_j^T W)
  const Matrix luu_inv = out.luu.triangularView<Eigen::Lower>().solve(Matrix::Identity(m, m));
  const Matrix kuu_inv = luu_inv.transpose() * luu_inv;
  const Matrix lb_inv = out.lb.triangularView<Eigen::Lower>().solve(Matrix::Identity(m, m));
  const Matrix p_inv = luu_inv.transpose() * (lb_inv.transpose() * lb_inv) * luu_inv;
  const Matrix v = p_inv * (kuf * data.targets);       // M x n
  const Matrix kinv_w = kuu_inv * kuf;                  // M x N
  const Matrix g_kuu = dims * (-0.5 * p_inv + 0.5 * kuu_inv - 0.5 * beta * (kinv_w * kinv_w.transpose())) -
                       0.5 * beta * beta * (v * v.transpose());
  Matrix g_w = dims * beta * (kinv_w - p_inv * kuf);
  g_w.noalias() += beta * beta * v * data.targets.transpose();
  g_w.noalias() -= beta * beta * beta * (v * (v.transpose() * kuf));

  out.grad = Matrix::Zero(m, 2);
  for (Eigen::Index r = 0; r < m; ++r) {
    const GpInput& zr = z[static_cast<std::size_t>(r)];
    double gi = 0.0, gt = 0.0;
    for (Eigen::Index s = 0; s < m; ++s) {
      if (s == r) continue;
      const GpInput& zs = z[static_cast<std::size_t>(s)];
      const double w = 2.0 * g_kuu(r, s) * kuu(r, s);
      gi += w * kern.iteration_log_slope(zr.iteration, zs.iteration);
      gt += w * kern.time_log_slope(zr.timestep, zs.timestep);
    }
    for (Eigen::Index s = 0; s < kuf.cols(); ++s) {
      const GpInput& xs = data.inputs[static_cast<std::size_t>(s)];
      const double w = g_w(r, s) * kuf(r, s);
      gi += w * kern.iteration_log_slope(zr.iteration, xs.iteration);
      gt += w * kern.time_log_slope(zr.timestep, xs.timestep);
    }
    out.grad(r, 0) = gi;
    out.grad(r, 1) = gt;
  }
  return out;
}

/// k-means (k-means++ seeding unless `start` is given) in lengthscale-scaled
/// coordinates.
inline std::vector<GpInput> kmeans_inputs(const std::vector<GpInput>& x, std::size_t k, const GpKernel& kern,
                                          std::size_t iterations, std::uint64_t seed,
                                          const std::vector<GpInput>* start = nullptr) {
  const double si = kern.iteration_lengthscale;
  const double st = kern.time.lengthscale();
  auto dist2 = [&](const GpInput& a, const GpInput& b) {
    const double di = (a.iteration - b.iteration) / si;
    const double dt = (a.timestep - b.timestep) / st;
    return di * di + dt * dt;
  };

  std::vector<GpInput> centers;
  if (start && start->size() == k) {
    centers = *start;
  } else {
    auto rng = make_rng(seed, 0x6b6d);
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    centers.push_back(x[pick(rng)]);
    std::vector<double> d(x.size(), std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
      double total = 0.0;
      for (std::size_t q = 0; q < x.size(); ++q) {
        d[q] = std::min(d[q], dist2(x[q], centers.back()));
        total += d[q];
      }
      if (!(total > 0.0)) {
        centers.push_back(x[pick(rng)]);
        continue;
      }
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      std::size_t chosen = x.size() - 1;
      for (std::size_t q = 0; q < x.size(); ++q) {
        target -= d[q];
        if (target <= 0.0) {
          chosen = q;
          break;
        }
      }
      centers.push_back(x[chosen]);
    }
  }

  std::vector<std::size_t> label(x.size(), 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t q = 0; q < x.size(); ++q) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double v = dist2(x[q], centers[c]);
        if (v < bd) {
          bd = v;
          best = c;
        }
      }
      if (best != label[q] || it == 0) changed = changed || best != label[q];
      label[q] = best;
    }
    std::vector<GpInput> sum(centers.size(), GpInput{0.0, 0.0});
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t q = 0; q < x.size(); ++q) {
      sum[label[q]].iteration += x[q].iteration;
      sum[label[q]].timestep += x[q].timestep;
      ++count[label[q]];
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (count[c] > 0) centers[c] = {sum[c].iteration / count[c], sum[c].timestep / count[c]};
    if (!changed && it > 0) break;
  }
  return centers;
}

}  // namespace detail

/// Fits a sparse GP: inducing inputs from k-means over the data (or the given
/// start), then bounded gradient ascent on the collapsed bound, keeping every
/// inducing input inside the data's bounding box.
inline SparseGpModel fit_sparse_gp(const GpDataset& data, const GpKernel& kernel, double noise,
                                   const SparseGpOptions& options = {}) {
  data.validate();
  kernel.validate();
  if (!(noise > 0.0)) throw ParameterError("fit_sparse_gp: noise variance must be positive");
  SparseGpModel model;
  model.kernel = kernel;
  model.noise = noise;

  std::size_t m = options.initial_inducing ? options.initial_inducing->size() : options.inducing;
  if (m == 0) throw ParameterError("fit_sparse_gp: need at least one inducing input");
  if (m > data.size()) {
    model.warnings.push_back("inducing count " + std::to_string(m) + " exceeds data size " + std::to_string(data.size()) +
                             "; clamped");
    m = data.size();
  }

  GpInput lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  GpInput hi{-lo.iteration, -lo.timestep};
  for (const auto& x : data.inputs) {
    lo = {std::min(lo.iteration, x.iteration), std::min(lo.timestep, x.timestep)};
    hi = {std::max(hi.iteration, x.iteration), std::max(hi.timestep, x.timestep)};
  }
  auto clamp_box = [&](GpInput g) {
    return GpInput{std::clamp(g.iteration, lo.iteration, hi.iteration), std::clamp(g.timestep, lo.timestep, hi.timestep)};
  };

  std::vector<GpInput> z;
  if (options.initial_inducing && options.initial_inducing->size() == m && options.kmeans_iterations == 0) {
    z = *options.initial_inducing;
  } else {
    const std::vector<GpInput>* start =
        options.initial_inducing && options.initial_inducing->size() == m ? &*options.initial_inducing : nullptr;
    z = detail::kmeans_inputs(data.inputs, m, kernel, options.kmeans_iterations, options.seed, start);
  }
  for (auto& g : z) g = clamp_box(g);

  detail::SparseTerms cur = detail::sparse_terms(kernel, noise, z, data, options.refine_steps > 0);
  model.bound_trace.push_back(cur.bound);
  const double si = kernel.iteration_lengthscale;
  const double st = kernel.time.lengthscale();
  double step = options.initial_step;
  for (std::size_t s = 0; s < options.refine_steps && step > 1e-6; ++s) {
    // Steepest ascent in lengthscale-scaled coordinates, step capped per point.
    Matrix dir = cur.grad;
    dir.col(0) *= si;
    dir.col(1) *= st;
    const double gmax = dir.cwiseAbs().maxCoeff();
    if (!(gmax > 0.0)) break;
    bool accepted = false;
    while (step > 1e-6) {
      std::vector<GpInput> trial = z;
      for (std::size_t r = 0; r < z.size(); ++r) {
        const auto re = static_cast<Eigen::Index>(r);
        trial[r] = clamp_box({z[r].iteration + step * si * dir(re, 0) / gmax, z[r].timestep + step * st * dir(re, 1) / gmax});
      }
      detail::SparseTerms next = detail::sparse_terms(kernel, noise, trial, data, s + 1 < options.refine_steps);
      if (next.bound > cur.bound) {
        z = std::move(trial);
        cur = std::move(next);
        accepted = true;
        step *= 1.5;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    model.bound_trace.push_back(cur.bound);
    if (cur.grad.size() == 0) break;
  }

  model.inducing_inputs = std::move(z);
  model.luu = std::move(cur.luu);
  model.lb = std::move(cur.lb);
  model.weights = std::move(cur.weights);
  model.bound = cur.bound;
  model.step = step;
  return model;
}

inline Matrix predict_sparse_gp(const SparseGpModel& model, const std::vector<GpInput>& query) {
  if (model.inducing_inputs.empty()) throw StateError("predict_sparse_gp: model is not fitted");
  return detail::cross_cov(model.kernel, query, model.inducing_inputs) * model.weights;
}

inline ErrorTrajectory predict_sparse_gp(const SparseGpModel& model, double iteration, std::size_t p) {
  const Matrix mean = predict_sparse_gp(model, detail::block_inputs(iteration, p));
  ErrorTrajectory out(static_cast<std::size_t>(mean.cols()), p);
  for (Eigen::Index j = 0; j < mean.cols(); ++j) out.block(static_cast<std::size_t>(j)) = mean.col(j);
  return out;
}

/// Log marginal likelihood of the exact GP, summed over output dimensions.
inline double gp_log_marginal(const GpDataset& data, const GpKernel& kernel, double noise) {
  Matrix k = detail::cross_cov(kernel, data.inputs, data.inputs);
  k.diagonal().array() += noise;
  const Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Matrix l = llt.matrixL();
  const Matrix z = l.triangularView<Eigen::Lower>().solve(data.targets);
  const auto nn = static_cast<double>(data.size());
  const auto dims = static_cast<double>(data.targets.cols());
  return -0.5 * z.squaredNorm() - dims * l.diagonal().array().log().sum() -
         0.5 * dims * nn * std::log(2.0 * std::numbers::pi);
}

struct GpHyper {
  GpKernel kernel;
  double noise = 1e-2;
};

/// One-shot hyperparameter fit by maximizing the exact marginal likelihood of
/// `data` (typically the first few iterations) over a log box around `start`.
inline GpHyper prefit_gp(const GpDataset& data, const GpHyper& start, std::size_t evaluations = 150) {
  data.validate();
  start.kernel.validate();
  auto unpack = [&](const Vector& x) {
    GpHyper h = start;
    h.kernel.time.variance = x(0);
    h.kernel.time.params(0) = x(1);
    h.kernel.iteration_lengthscale = x(2);
    h.noise = x(3);
    return h;
  };
  Vector x0(4);
  x0 << start.kernel.time.variance, start.kernel.time.lengthscale(), start.kernel.iteration_lengthscale, start.noise;
  detail::LogBox box{x0 / 100.0, x0 * 100.0};
  auto f = [&](const Vector& x) {
    const GpHyper h = unpack(x);
    return -gp_log_marginal(data, h.kernel, h.noise);
  };
  detail::SearchResult best = detail::nelder_mead_log(f, box, x0, evaluations);
  return unpack(best.x);
}

}  // namespace qpgp_ilc
