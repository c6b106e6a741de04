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
/// Iteration-domain controllers: the standard and predictive input updates,
/// gain annealing, contraction diagnostics, and the closed learning loop with
/// pluggable next-iteration error predictors.

#include "qpgp_ilc/core.hpp"
#include "qpgp_ilc/gp_baseline.hpp"
#include "qpgp_ilc/plant.hpp"
#include "qpgp_ilc/qpgp.hpp"

#include <chrono>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>

namespace qpgp_ilc {

enum class AnnealMode { constant, inverse_iteration };

struct GainSchedule {
  double base_L = 0.0;
  double base_K = 0.0;
  AnnealMode mode = AnnealMode::constant;

  void validate() const {
    if (!std::isfinite(base_L) || !std::isfinite(base_K) || base_L < 0.0 || base_K < 0.0)
      throw ParameterError("gain schedule: gains must be finite and non-negative");
  }
};

struct Gains {
  double L = 0.0;
  double K = 0.0;
};

/// Scalar gains for iteration i (1-based).
inline Gains anneal(const GainSchedule& schedule, std::size_t i) {
  if (i < 1) throw ParameterError("anneal: iterations are numbered from 1");
  schedule.validate();
  if (schedule.mode == AnnealMode::constant) return {schedule.base_L, schedule.base_K};
  const auto d = static_cast<double>(i);
  return {schedule.base_L / d, schedule.base_K / d};
}

/// u_{i+1} = u_i + L e_i.
inline Vector standard_update(const Vector& u, const ErrorTrajectory& e, const Matrix& L) {
  if (L.rows() != u.size() || L.cols() != e.lifted().size()) throw ShapeError("standard_update: gain shape mismatch");
  Vector out = u;
  out.noalias() += L * e.lifted();
  return out;
}

/// u_{i+1} = u_i + L e_i + K ehat_{i+1}.
inline Vector predictive_update(const Vector& u, const ErrorTrajectory& e, const ErrorTrajectory& ehat, const Matrix& L,
                                const Matrix& K) {
  if (!e.same_shape(ehat)) throw ShapeError("predictive_update: prediction shape mismatch");
  if (K.rows() != u.size() || K.cols() != ehat.lifted().size()) throw ShapeError("predictive_update: gain shape mismatch");
  Vector out = standard_update(u, e, L);
  out.noalias() += K * ehat.lifted();
  return out;
}

struct ContractionReport {
  double norm = 0.0;         ///< ||A||_2 or ||B^{(t)}||_2
  double kernel_norm = 0.0;  ///< max_j ||K_j||_2
  bool contraction = false;  ///< norm < 1
  double c = 0.0;            ///< 2 max_j ||K_j||_2
  double covariance_bound = std::numeric_limits<double>::infinity();  ///< c / (1 - norm^2) when contracting
};

namespace detail {

inline ContractionReport make_report(const Matrix& m, const std::vector<CovKernel>& kernels) {
  ContractionReport r;
  r.norm = spectral_norm(m);
  for (const auto& k : kernels) r.kernel_norm = std::max(r.kernel_norm, spectral_norm(k.values));
  r.contraction = r.norm < 1.0;
  r.c = 2.0 * r.kernel_norm;
  if (r.contraction) r.covariance_bound = r.c / (1.0 - r.norm * r.norm);
  return r;
}

/// Lifted indices {block * p + s : s < t} for every block.
inline std::vector<Eigen::Index> prefix_indices(std::size_t blocks, std::size_t p, std::size_t t) {
  std::vector<Eigen::Index> idx;
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t s = 0; s < t; ++s) idx.push_back(static_cast<Eigen::Index>(b * p + s));
  return idx;
}

inline Matrix select(const Matrix& m, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(rows[r], cols[c]);
  return out;
}

}  // namespace detail

/// Block-prediction error map A = I - G L - G K (Omega kron I_p).
inline ContractionReport contraction_block(const Matrix& G, const Matrix& L, const Matrix& K, const Matrix& omega,
                                           const std::vector<CovKernel>& kernels) {
  const Eigen::Index np = G.rows();
  if (omega.rows() != omega.cols() || omega.rows() == 0 || np % omega.rows() != 0)
    throw ShapeError("contraction_block: Omega must be n x n with n dividing the error length");
  if (L.rows() != G.cols() || L.cols() != np || K.rows() != G.cols() || K.cols() != np)
    throw ShapeError("contraction_block: gain shapes do not match G");
  const Eigen::Index p = np / omega.rows();
  for (const auto& k : kernels)
    if (static_cast<Eigen::Index>(k.size()) != p) throw ShapeError("contraction_block: kernel size must equal p");
  Matrix big = Matrix::Zero(np, np);
  for (Eigen::Index j = 0; j < omega.rows(); ++j) big.block(j * p, j * p, p, p).diagonal().setConstant(omega(j, j));
  const Matrix a = Matrix::Identity(np, np) - G * L - G * K * big;
  return detail::make_report(a, kernels);
}

/// Element-prediction error map on the first t samples of every channel:
/// B^{(t)} = I - G^{(t)} L^{(t)} - G^{(t)} K^{(t)} blkdiag_j M_j^{(t)}.
inline ContractionReport contraction_element(const Matrix& G, const Matrix& L, const Matrix& K, const QpgpModel& model,
                                             std::size_t t) {
  model.validate();
  const std::size_t p = model.p;
  const std::size_t n = model.n;
  if (t < 1 || t > p) throw ShapeError("contraction_element: t must lie in 1..p");
  if (static_cast<std::size_t>(G.rows()) != n * p || G.cols() % static_cast<Eigen::Index>(p) != 0)
    throw ShapeError("contraction_element: G must be (n p) x (m p)");
  if (L.rows() != G.cols() || L.cols() != G.rows() || K.rows() != G.cols() || K.cols() != G.rows())
    throw ShapeError("contraction_element: gain shapes do not match G");
  const auto m = static_cast<std::size_t>(G.cols()) / p;
  const auto out_idx = detail::prefix_indices(n, p, t);
  const auto in_idx = detail::prefix_indices(m, p, t);
  const Matrix gt = detail::select(G, out_idx, in_idx);
  const Matrix lt = detail::select(L, in_idx, out_idx);
  const Matrix kt = detail::select(K, in_idx, out_idx);
  const Matrix mt = stacked_predictor_matrix(model, t);
  const auto nt = static_cast<Eigen::Index>(n * t);
  const Matrix b = Matrix::Identity(nt, nt) - gt * lt - gt * kt * mt;
  return detail::make_report(b, model.kernels);
}

// ---------------------------------------------------------------------------
// Learning loop

enum class PredictorKind { none, qpgp_block, qpgp_element, gp_full, gp_sparse };

inline std::string_view to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::none: return "standard";
    case PredictorKind::qpgp_block: return "qpgp_block";
    case PredictorKind::qpgp_element: return "qpgp_element";
    case PredictorKind::gp_full: return "gp_full";
    case PredictorKind::gp_sparse: return "gp_sparse";
  }
  return "unknown";
}

inline PredictorKind predictor_from_string(std::string_view s) {
  for (auto k : {PredictorKind::none, PredictorKind::qpgp_block, PredictorKind::qpgp_element, PredictorKind::gp_full,
                 PredictorKind::gp_sparse})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown controller '" + std::string(s) + "'");
}

struct ControllerConfig {
  std::string label;  ///< defaults to the predictor name
  PredictorKind predictor = PredictorKind::none;
  GainSchedule gains;
  EstimateOptions qpgp;
  std::optional<QpgpModel> oracle_model;  ///< fixed model, skips estimation
  GpHyper gp;
  std::size_t gp_prefit_iterations = 0;  ///< 0 keeps the configured hyperparameters
  SparseGpOptions sparse;
  std::size_t sparse_refit_every = 1;

  std::string id() const { return label.empty() ? std::string(to_string(predictor)) : label; }
};

struct ExperimentRecord {
  std::string controller;
  std::uint64_t seed = 0;
  std::size_t iteration = 0;
  double rms_error = 0.0;
  double max_error = 0.0;
  double predict_s = 0.0;
  double estimate_s = 0.0;
  double rollout_s = 0.0;
  double cumulative_s = 0.0;
};

struct IlcResult {
  std::vector<ExperimentRecord> records;
  bool aborted = false;
  std::string diagnostic;
};

struct LoopHooks {
  /// Called after every rollout with the 1-based iteration index.
  std::function<void(std::size_t, const PlantRollout&)> on_rollout;
  /// Called as each record is finalized, before any later step can throw.
  std::function<void(const ExperimentRecord&)> on_record;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Input sparsity of T: for input timestep t, the (row, col) entries whose
/// error column must be predicted online.
struct MapEntries {
  std::vector<std::vector<std::pair<Eigen::Index, Eigen::Index>>> by_step;
};

inline MapEntries map_entries(const Matrix& t_map, PlantDims d) {
  MapEntries out;
  out.by_step.resize(d.p);
  for (std::size_t a = 0; a < d.m; ++a)
    for (std::size_t t = 0; t < d.p; ++t) {
      const auto r = static_cast<Eigen::Index>(lifted_index(a, t, d.p));
      for (Eigen::Index c = 0; c < t_map.cols(); ++c)
        if (t_map(r, c) != 0.0) out.by_step[t].emplace_back(r, c);
    }
  return out;
}

/// Online element-wise correction: input(t) = base(t) + k (T ehat)(t), with
/// ehat the conditional mean given the error prefix of this iteration.
class ElementPolicy final : public StepPolicy {
 public:
  ElementPolicy(const Vector& base, const Matrix& t_map, const MapEntries& entries, double k, ElementPredictor& pred,
                PlantDims d)
      : base_(base), t_map_(t_map), entries_(entries), k_(k), pred_(pred), d_(d) {}

  Vector input(std::size_t t) override {
    const auto t0 = Clock::now();
    Vector out(static_cast<Eigen::Index>(d_.m));
    for (std::size_t a = 0; a < d_.m; ++a) out(static_cast<Eigen::Index>(a)) = base_(static_cast<Eigen::Index>(lifted_index(a, t, d_.p)));
    for (const auto& [r, c] : entries_.by_step[t]) {
      const auto j = static_cast<std::size_t>(c) / d_.p;
      const auto s = static_cast<std::size_t>(c) % d_.p;
      const double ehat = s < pred_.observed(j) ? observed_(c) : pred_.predict(j, s);
      out(r / static_cast<Eigen::Index>(d_.p)) += k_ * t_map_(r, c) * ehat;
    }
    seconds += seconds_since(t0);
    return out;
  }

  void observe(std::size_t t, const Vector& error) override {
    const auto t0 = Clock::now();
    if (observed_.size() == 0) observed_ = Vector::Zero(static_cast<Eigen::Index>(d_.n * d_.p));
    for (std::size_t j = 0; j < d_.n; ++j) {
      observed_(static_cast<Eigen::Index>(lifted_index(j, t, d_.p))) = error(static_cast<Eigen::Index>(j));
      pred_.observe(j, t, error(static_cast<Eigen::Index>(j)));
    }
    seconds += seconds_since(t0);
  }

  double seconds = 0.0;

 private:
  const Vector& base_;
  const Matrix& t_map_;
  const MapEntries& entries_;
  double k_;
  ElementPredictor& pred_;
  PlantDims d_;
  Vector observed_;
};

}  // namespace detail

/// Runs `iterations` learning iterations. Deterministic in (plant, config, seed)
/// apart from the timing columns.
inline IlcResult run_ilc_loop(const Plant& plant, const ControllerConfig& config, std::size_t iterations, std::uint64_t seed,
                              const LoopHooks& hooks = {}) {
  using detail::Clock;
  using detail::seconds_since;
  config.gains.validate();
  const PlantDims d = plant.dims();
  const PredictorKind kind = config.predictor;
  const bool qpgp = kind == PredictorKind::qpgp_block || kind == PredictorKind::qpgp_element;
  if (config.oracle_model && (config.oracle_model->n != d.n || config.oracle_model->p != d.p))
    throw ShapeError("oracle model does not match the plant dimensions");

  IlcResult result;
  const auto emit = [&](const ExperimentRecord& r) {
    result.records.push_back(r);
    if (hooks.on_record) hooks.on_record(r);
  };
  Vector u = plant.initial_input();
  if (static_cast<std::size_t>(u.size()) != d.m * d.p) throw ShapeError("plant initial input has the wrong length");

  QpgpEstimator estimator(d.n, d.p, config.qpgp);
  std::optional<QpgpModel> model = config.oracle_model;
  std::optional<ElementPredictor> element;
  if (model && kind == PredictorKind::qpgp_element) element.emplace(*model);
  GpHyper hyper = config.gp;
  std::optional<IncrementalFullGp> full_gp;
  GpDataset gp_data;
  std::optional<SparseGpModel> sparse;

  std::optional<ErrorTrajectory> prev_error;
  Vector element_base;
  Matrix t_map;
  detail::MapEntries entries;
  double element_k = 0.0;
  double cumulative = 0.0;

  for (std::size_t i = 1; i <= iterations; ++i) {
    ExperimentRecord rec;
    rec.controller = config.id();
    rec.seed = seed;
    rec.iteration = i;

    // Rollout; in element mode the predictive term is formed online.
    PlantRollout ro;
    double hook_s = 0.0;
    const bool online = kind == PredictorKind::qpgp_element && element && prev_error && element_base.size() > 0;
    auto t0 = Clock::now();
    if (online) {
      element->reset(*prev_error);
      detail::ElementPolicy policy(element_base, t_map, entries, element_k, *element, d);
      ro = plant.rollout(policy, i, seed);
      hook_s = policy.seconds;
      u = ro.inputs;
    } else {
      if (element_base.size() > 0) u = element_base;
      ro = plant.rollout(u, i, seed);
    }
    element_base.resize(0);
    rec.rollout_s = std::max(0.0, seconds_since(t0) - hook_s);
    rec.predict_s += hook_s;

    const ErrorTrajectory& e = ro.errors;
    if (!e.all_finite() || !ro.inputs.allFinite()) {
      result.aborted = true;
      result.diagnostic = "non-finite error or input at iteration " + std::to_string(i) + " of " + config.id();
      rec.rms_error = std::numeric_limits<double>::quiet_NaN();
      rec.max_error = std::numeric_limits<double>::quiet_NaN();
      rec.cumulative_s = cumulative;
      emit(rec);
      return result;
    }
    rec.rms_error = e.rms();
    rec.max_error = e.max_norm();
    if (hooks.on_rollout) hooks.on_rollout(i, ro);

    // The final iteration still estimates and computes u_{N+1}, so every
    // record carries a full iteration of compute.
    // Model update with e_i.
    t0 = Clock::now();
    bool have_model = false;
    if (qpgp) {
      if (config.oracle_model) {
        have_model = true;
      } else {
        estimator.add(e);
        if (estimator.ready()) {
          model = estimator.refit();
          if (kind == PredictorKind::qpgp_element) element.emplace(*model);
          have_model = true;
        }
      }
    } else if (kind == PredictorKind::gp_full) {
      const bool prefit_now = config.gp_prefit_iterations > 0 && i == config.gp_prefit_iterations;
      gp_data.append(static_cast<double>(i), e);
      if (prefit_now) {
        hyper = prefit_gp(gp_data, hyper);
        full_gp.reset();
      }
      if (!full_gp) {
        full_gp.emplace(d.n, d.p, hyper.kernel, hyper.noise);
        // Replay history under the current hyperparameters.
        for (std::size_t k = 0; k + 1 < i; ++k) {
          ErrorTrajectory past(d.n, d.p);
          for (std::size_t j = 0; j < d.n; ++j)
            past.block(j) = gp_data.targets.col(static_cast<Eigen::Index>(j)).segment(static_cast<Eigen::Index>(k * d.p), static_cast<Eigen::Index>(d.p));
          full_gp->add(static_cast<double>(k + 1), past);
        }
      }
      full_gp->add(static_cast<double>(i), e);
      have_model = true;
    } else if (kind == PredictorKind::gp_sparse) {
      gp_data.append(static_cast<double>(i), e);
      if (config.gp_prefit_iterations > 0 && i == config.gp_prefit_iterations) hyper = prefit_gp(gp_data, hyper);
      SparseGpOptions opt = config.sparse;
      opt.seed = seed;
      if (sparse && sparse->inducing_inputs.size() == std::min(opt.inducing, gp_data.size())) {
        opt.initial_inducing = sparse->inducing_inputs;
        opt.initial_step = sparse->step;
      }
      const bool refit = !sparse || config.sparse_refit_every <= 1 || i % config.sparse_refit_every == 0;
      if (!refit && opt.initial_inducing) {
        opt.refine_steps = 0;
        opt.kmeans_iterations = 0;  // keep the inducing set; only the posterior sees the new block
      }
      sparse = fit_sparse_gp(gp_data, hyper.kernel, hyper.noise, opt);
      have_model = true;
    }
    rec.estimate_s = seconds_since(t0);

    // Input update for iteration i+1.
    t0 = Clock::now();
    const Gains g = anneal(config.gains, i);
    t_map = plant.learning_map(u);
    if (static_cast<std::size_t>(t_map.rows()) != d.m * d.p || static_cast<std::size_t>(t_map.cols()) != d.n * d.p)
      throw ShapeError("plant learning map has the wrong shape");
    const Matrix L = g.L * t_map;
    if (kind == PredictorKind::none || !have_model) {
      u = standard_update(u, e, L);
    } else if (kind == PredictorKind::qpgp_element) {
      element_base = standard_update(u, e, L);
      entries = detail::map_entries(t_map, d);
      element_k = g.K;
    } else {
      ErrorTrajectory ehat;
      if (kind == PredictorKind::qpgp_block) ehat = block_predict(*model, e);
      else if (kind == PredictorKind::gp_full) ehat = full_gp->predict(static_cast<double>(i + 1));
      else ehat = predict_sparse_gp(*sparse, static_cast<double>(i + 1), d.p);
      u = predictive_update(u, e, ehat, L, g.K * t_map);
    }
    rec.predict_s += seconds_since(t0);
    cumulative += rec.predict_s + rec.estimate_s;
    rec.cumulative_s = cumulative;
    emit(rec);
    prev_error = e;
  }
  return result;
}

}  // namespace qpgp_ilc
