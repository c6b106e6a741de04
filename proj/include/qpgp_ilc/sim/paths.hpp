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
/// Closed reference paths sampled at p points.

#include "qpgp_ilc/core.hpp"

#include <numbers>
#include <ostream>

namespace qpgp_ilc::sim {

struct ReferencePath {
  Matrix points;  ///< p x 2, columns x and y (meters)
  Vector s;       ///< curve parameter of each point
  bool closed = true;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  Eigen::Vector2d point(std::size_t k) const { return points.row(static_cast<Eigen::Index>(k)).transpose(); }

  double polyline_length() const {
    double len = 0.0;
    const auto p = points.rows();
    const Eigen::Index last = closed ? p : p - 1;
    for (Eigen::Index k = 0; k < last; ++k) len += (points.row((k + 1) % p) - points.row(k)).norm();
    return len;
  }

  void validate() const {
    if (points.rows() < 3 || points.cols() != 2 || s.size() != points.rows())
      throw ShapeError("reference path needs at least 3 points with x, y and s");
  }
};

namespace detail {

template <class F>
ReferencePath sample_closed(std::size_t p, double s0, double step, F&& f) {
  if (p < 3) throw ParameterError("reference path: p must be at least 3");
  ReferencePath out;
  out.points.resize(static_cast<Eigen::Index>(p), 2);
  out.s.resize(static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < p; ++k) {
    const double s = s0 + step * static_cast<double>(k);
    const Eigen::Vector2d xy = f(s);
    out.s(static_cast<Eigen::Index>(k)) = s;
    out.points.row(static_cast<Eigen::Index>(k)) = xy.transpose();
  }
  return out;
}

}  // namespace detail

/// Polar racetrack R(s) = 10 + 2 sin 2s + sin 3s at s_j = 2 pi j / p,
/// j = 1..p, scaled so the closed polyline is v dt p long.
inline ReferencePath gen_raceline(std::size_t p, double v, double dt) {
  if (!(v > 0.0) || !(dt > 0.0)) throw ParameterError("gen_raceline: v and dt must be positive");
  const double step = 2.0 * std::numbers::pi / static_cast<double>(p);
  ReferencePath path = detail::sample_closed(p, step, step, [](double s) {
    const double r = 10.0 + 2.0 * std::sin(2.0 * s) + std::sin(3.0 * s);
    return Eigen::Vector2d(r * std::cos(s), r * std::sin(s));
  });
  path.points *= v * dt * static_cast<double>(p) / path.polyline_length();
  return path;
}

/// Circle of radius 0.5 about (1.5, 1.0), s uniform on [0, 2 pi).
inline ReferencePath gen_circle_ref(std::size_t p) {
  const double step = 2.0 * std::numbers::pi / static_cast<double>(p);
  return detail::sample_closed(p, 0.0, step, [](double s) {
    return Eigen::Vector2d(1.5 + 0.5 * std::cos(s), 1.0 + 0.5 * std::sin(s));
  });
}

/// Lissajous figure (0.25 + 0.04 sin(3t + pi/2), 0.45 + 0.02 sin 2t), t uniform on [0, 2 pi).
inline ReferencePath gen_lissajous_ref(std::size_t p) {
  const double step = 2.0 * std::numbers::pi / static_cast<double>(p);
  return detail::sample_closed(p, 0.0, step, [](double t) {
    return Eigen::Vector2d(0.25 + 0.04 * std::sin(3.0 * t + std::numbers::pi / 2.0), 0.45 + 0.02 * std::sin(2.0 * t));
  });
}

/// CSV with header `index,s,x,y`.
inline void write_path_csv(const ReferencePath& path, std::ostream& os) {
  path.validate();
  const auto old = os.precision(17);
  os << "index,s,x,y\n";
  for (Eigen::Index k = 0; k < path.points.rows(); ++k)
    os << k << ',' << path.s(k) << ',' << path.points(k, 0) << ',' << path.points(k, 1) << '\n';
  os.precision(old);
}

}  // namespace qpgp_ilc::sim
