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

#include "qpgp_ilc/core.hpp"

#include <functional>
#include <limits>

namespace qpgp_ilc::detail {

/// Axis-aligned box; the search runs in log coordinates so bounds must be positive.
struct LogBox {
  Vector lower;
  Vector upper;

  std::size_t size() const { return static_cast<std::size_t>(lower.size()); }

  void validate() const {
    if (lower.size() == 0 || lower.size() != upper.size()) throw ConfigError("search box is empty or ragged");
    for (Eigen::Index k = 0; k < lower.size(); ++k) {
      if (!(lower(k) > 0.0) || !(upper(k) >= lower(k)) || !std::isfinite(upper(k))) {
        throw ConfigError("search box bound " + std::to_string(k) + " is empty or non-positive");
      }
    }
  }

  Vector clamp(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

struct SearchResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  std::vector<double> start_values;
};

/// Nelder-Mead in log coordinates, clamped to the box. Never returns a point
/// worse than its starting point.
inline SearchResult nelder_mead_log(const std::function<double(const Vector&)>& f, const LogBox& box,
                                    const Vector& start, std::size_t max_evals = 400, double tol = 1e-10) {
  const Eigen::Index d = start.size();
  const Vector lo = box.lower.array().log();
  const Vector hi = box.upper.array().log();
  auto to_x = [&](const Vector& y) { return box.clamp(y.cwiseMax(lo).cwiseMin(hi).array().exp().matrix()); };

  SearchResult out;
  auto eval = [&](const Vector& y) {
    ++out.evaluations;
    const double v = f(to_x(y));
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> simplex(static_cast<std::size_t>(d + 1), start.array().log().matrix());
  std::vector<double> values(simplex.size());
  for (Eigen::Index k = 0; k < d; ++k) {
    const double span = std::max(hi(k) - lo(k), 1e-12);
    auto& v = simplex[static_cast<std::size_t>(k + 1)];
    const double step = 0.15 * span;
    v(k) = (v(k) + step <= hi(k)) ? v(k) + step : v(k) - step;
  }
  for (std::size_t s = 0; s < simplex.size(); ++s) values[s] = eval(simplex[s]);
  out.start_values.push_back(values[0]);

  while (out.evaluations < max_evals) {
    std::vector<std::size_t> order(simplex.size());
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];

    double spread = 0.0;
    for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).cwiseAbs().maxCoeff());
    if (spread < 1e-9 || std::abs(values[worst] - values[best]) <= tol * (1.0 + std::abs(values[best]))) break;

    Vector centroid = Vector::Zero(d);
    for (std::size_t s = 0; s < simplex.size(); ++s)
      if (s != worst) centroid += simplex[s];
    centroid /= static_cast<double>(d);

    const Vector reflected = (centroid + (centroid - simplex[worst])).cwiseMax(lo).cwiseMin(hi);
    const double fr = eval(reflected);
    if (fr < values[best]) {
      const Vector expanded = (centroid + 2.0 * (centroid - simplex[worst])).cwiseMax(lo).cwiseMin(hi);
      const double fe = eval(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const Vector contracted = centroid + 0.5 * (simplex[worst] - centroid);
    const double fc = eval(contracted);
    if (fc < values[worst]) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t s = 0; s < simplex.size(); ++s) {
      if (s == best) continue;
      simplex[s] = simplex[best] + 0.5 * (simplex[s] - simplex[best]);
      values[s] = eval(simplex[s]);
    }
  }

  std::size_t best = 0;
  for (std::size_t s = 1; s < simplex.size(); ++s)
    if (values[s] < values[best]) best = s;
  out.x = to_x(simplex[best]);
  out.value = values[best];
  return out;
}

/// Multi-start local search with starts drawn log-uniformly over the box.
inline SearchResult multistart_log(const std::function<double(const Vector&)>& f, const LogBox& box,
                                   std::size_t starts, std::uint64_t seed, std::size_t max_evals_per_start = 400) {
  box.validate();
  if (starts == 0) throw ConfigError("multi-start search needs at least one start");
  auto rng = make_rng(seed, 0x5eed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SearchResult best;
  for (std::size_t s = 0; s < starts; ++s) {
    Vector x0(static_cast<Eigen::Index>(box.size()));
    for (Eigen::Index k = 0; k < x0.size(); ++k) {
      const double a = std::log(box.lower(k));
      const double b = std::log(box.upper(k));
      x0(k) = std::exp(a + (b - a) * unit(rng));
    }
    SearchResult local = nelder_mead_log(f, box, x0, max_evals_per_start);
    best.start_values.push_back(local.start_values.front());
    best.evaluations += local.evaluations;
    if (local.value < best.value) {
      best.x = local.x;
      best.value = local.value;
    }
  }
  return best;
}

}  // namespace qpgp_ilc::detail
