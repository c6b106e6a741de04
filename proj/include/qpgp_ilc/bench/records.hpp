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
/// Per-iteration record CSV and the per-controller summary document.

#include "qpgp_ilc/bench/config.hpp"

#include <charconv>
#include <cmath>
#include <map>

namespace qpgp_ilc::bench {

inline constexpr std::string_view kCsvHeader =
    "controller,seed,iteration,rms_error,max_error,predict_s,estimate_s,rollout_s,cumulative_s";

namespace detail {

/// Shortest decimal that round-trips, so error columns are bit-reproducible.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("records: bad number '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("records: bad integer '" + s + "'");
  return v;
}

}  // namespace detail

inline std::string to_csv_row(const ExperimentRecord& r) {
  using detail::format_double;
  if (r.controller.find_first_of(",\n\"") != std::string::npos) throw ConfigError("controller label must not contain ',', '\"' or newlines");
  return r.controller + ',' + std::to_string(r.seed) + ',' + std::to_string(r.iteration) + ',' + format_double(r.rms_error) +
         ',' + format_double(r.max_error) + ',' + format_double(r.predict_s) + ',' + format_double(r.estimate_s) + ',' +
         format_double(r.rollout_s) + ',' + format_double(r.cumulative_s);
}

inline void write_csv(std::ostream& os, const std::vector<ExperimentRecord>& rows) {
  os << kCsvHeader << '\n';
  for (const auto& r : rows) os << to_csv_row(r) << '\n';
}

inline std::vector<ExperimentRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("records: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw ConfigError("records: unexpected header '" + line + "'");
  std::vector<ExperimentRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 9) throw ConfigError("records: expected 9 fields, got " + std::to_string(f.size()));
    ExperimentRecord r;
    r.controller = f[0];
    r.seed = detail::parse_uint(f[1]);
    r.iteration = detail::parse_uint(f[2]);
    r.rms_error = detail::parse_double(f[3]);
    r.max_error = detail::parse_double(f[4]);
    r.predict_s = detail::parse_double(f[5]);
    r.estimate_s = detail::parse_double(f[6]);
    r.rollout_s = detail::parse_double(f[7]);
    r.cumulative_s = detail::parse_double(f[8]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary

struct ControllerSummary {
  std::string controller;
  std::size_t seeds = 0;
  std::vector<double> mean_rms;    ///< per iteration, across seeds
  std::vector<double> stddev_rms;  ///< sample standard deviation (0 for one seed)
  double final10_rms = 0.0;        ///< mean RMS over the last 10 iterations
  std::optional<std::size_t> iterations_to_half;
  std::optional<std::size_t> iterations_to_tenth;
  double total_compute_s = 0.0;  ///< mean over seeds of the final cumulative time
};

/// Iterations taken for `curve` to first fall to `fraction` of its first
/// value: the first 1-based index i with curve_i <= fraction curve_1, minus 1.
inline std::optional<std::size_t> iterations_to_fraction(const std::vector<double>& curve, double fraction) {
  if (curve.empty()) return std::nullopt;
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve[i] <= fraction * curve.front()) return i;
  return std::nullopt;
}

/// Aggregates in first-appearance order of controllers.
inline std::vector<ControllerSummary> summarize(const std::vector<ExperimentRecord>& records) {
  if (records.empty()) throw ConfigError("summarize: no records");
  std::vector<std::string> order;
  std::map<std::string, std::map<std::uint64_t, std::vector<const ExperimentRecord*>>> grouped;
  for (const auto& r : records) {
    if (r.iteration < 1) throw ConfigError("summarize: iterations are 1-based");
    if (!grouped.count(r.controller)) order.push_back(r.controller);
    grouped[r.controller][r.seed].push_back(&r);
  }
  std::vector<ControllerSummary> out;
  for (const auto& name : order) {
    const auto& by_seed = grouped[name];
    ControllerSummary s;
    s.controller = name;
    s.seeds = by_seed.size();
    std::size_t len = std::numeric_limits<std::size_t>::max();
    std::vector<std::vector<double>> curves;
    for (const auto& [seed, rows] : by_seed) {
      std::vector<double> curve(rows.size(), std::numeric_limits<double>::quiet_NaN());
      double last_cum = 0.0;
      std::size_t last_it = 0;
      for (const auto* r : rows) {
        if (r->iteration > rows.size()) throw ConfigError("summarize: iterations of " + name + " are not contiguous");
        curve[r->iteration - 1] = r->rms_error;
        if (r->iteration >= last_it) {
          last_it = r->iteration;
          last_cum = r->cumulative_s;
        }
      }
      s.total_compute_s += last_cum / static_cast<double>(by_seed.size());
      len = std::min(len, curve.size());
      curves.push_back(std::move(curve));
    }
    s.mean_rms.assign(len, 0.0);
    s.stddev_rms.assign(len, 0.0);
    const auto k = static_cast<double>(curves.size());
    for (std::size_t i = 0; i < len; ++i) {
      double m = 0.0;
      for (const auto& c : curves) m += c[i] / k;
      double v = 0.0;
      for (const auto& c : curves) v += (c[i] - m) * (c[i] - m);
      s.mean_rms[i] = m;
      s.stddev_rms[i] = curves.size() > 1 ? std::sqrt(v / (k - 1.0)) : 0.0;
    }
    const std::size_t tail = std::min<std::size_t>(10, len);
    for (std::size_t i = len - tail; i < len; ++i) s.final10_rms += s.mean_rms[i] / static_cast<double>(tail);
    s.iterations_to_half = iterations_to_fraction(s.mean_rms, 0.5);
    s.iterations_to_tenth = iterations_to_fraction(s.mean_rms, 0.1);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disturbance recovery

struct RecoveryOptions {
  std::size_t injection = 25;  ///< first disturbed iteration
  std::size_t window = 10;     ///< pre-disturbance iterations averaged
  double tolerance = 1.1;      ///< recovered at RMS <= tolerance * pre-disturbance RMS
};

/// Iterations after the injection until `curve` (1-based iterations, stored
/// 0-based) returns within tolerance of its pre-disturbance mean; counting the
/// injection iteration as 1. Empty if it never recovers.
inline std::optional<std::size_t> recovery_iterations(const std::vector<double>& curve, const RecoveryOptions& o) {
  if (o.injection <= o.window || o.injection > curve.size()) throw ConfigError("recovery: injection outside the run");
  double pre = 0.0;
  for (std::size_t i = o.injection - 1 - o.window; i < o.injection - 1; ++i) pre += curve[i] / static_cast<double>(o.window);
  for (std::size_t i = o.injection - 1; i < curve.size(); ++i)
    if (curve[i] <= o.tolerance * pre) return i - (o.injection - 1) + 1;
  return std::nullopt;
}

inline json optional_json(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

inline json summary_json(const std::vector<ControllerSummary>& summaries, const std::vector<ExperimentRecord>& records,
                         const std::optional<RecoveryOptions>& recovery = std::nullopt) {
  json out{{"schema_version", kSchemaVersion}, {"controllers", json::array()}};
  for (const auto& s : summaries) {
    json c{{"controller", s.controller},
           {"seeds", s.seeds},
           {"iterations", s.mean_rms.size()},
           {"final10_mean_rms", s.final10_rms},
           {"iterations_to_half", optional_json(s.iterations_to_half)},
           {"iterations_to_tenth", optional_json(s.iterations_to_tenth)},
           {"total_compute_s", s.total_compute_s},
           {"mean_rms", s.mean_rms},
           {"stddev_rms", s.stddev_rms}};
    if (recovery) {
      json per_seed = json::object();
      std::map<std::uint64_t, std::vector<double>> curves;
      for (const auto& r : records)
        if (r.controller == s.controller) {
          auto& v = curves[r.seed];
          if (v.size() < r.iteration) v.resize(r.iteration, std::numeric_limits<double>::quiet_NaN());
          v[r.iteration - 1] = r.rms_error;
        }
      for (const auto& [seed, curve] : curves)
        per_seed[std::to_string(seed)] =
            curve.size() >= recovery->injection ? optional_json(recovery_iterations(curve, *recovery)) : json(nullptr);
      c["recovery_iterations"] = per_seed;
    }
    out["controllers"].push_back(std::move(c));
  }
  if (recovery)
    out["recovery"] = json{{"injection_iteration", recovery->injection},
                           {"pre_window", recovery->window},
                           {"tolerance", recovery->tolerance}};
  return out;
}

}  // namespace qpgp_ilc::bench
