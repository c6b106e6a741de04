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
/// Executes an ExperimentConfig over its (controller, seed) grid and writes
/// the run directory:
///
///   manifest.json        resolved config, schema version, file list, status
///   records.csv          one row per (controller, seed, iteration)
///   summary.json         per-controller aggregates
///   reference_path.csv   index,s,x,y
///   trajectories/        <controller>_seed<k>_iter<i>.csv with index,x,y

#include "qpgp_ilc/bench/records.hpp"

#include <atomic>
#include <filesystem>
#include <mutex>
#include <thread>

namespace qpgp_ilc::bench {

inline constexpr std::string_view kToolName = "qpgp_ilc_bench";
inline constexpr std::string_view kToolVersion = "0.1.0";

struct RunOptions {
  std::filesystem::path out_dir;
  std::size_t jobs = 0;  ///< 0 selects std::thread::hardware_concurrency()
  std::ostream* log = nullptr;
};

struct CellResult {
  std::string controller;
  std::uint64_t seed = 0;
  IlcResult result;
  std::vector<std::pair<std::size_t, Matrix>> snapshots;
};

struct RunOutcome {
  std::vector<CellResult> cells;  ///< controller-major, seeds in config order
  std::vector<ExperimentRecord> records;
  bool aborted = false;
  std::vector<std::string> diagnostics;
};

/// Output directory precedence: explicit flag, then config.output_dir, then
/// $QPGP_ILC_OUT/<name>, then ./results/<name>.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c, const std::optional<std::string>& flag) {
  if (flag) return *flag;
  if (c.output_dir) return *c.output_dir;
  if (const char* env = std::getenv("QPGP_ILC_OUT"); env && *env) return std::filesystem::path(env) / c.name;
  return std::filesystem::path("results") / c.name;
}

inline std::string snapshot_file_name(const std::string& controller, std::uint64_t seed, std::size_t iteration) {
  return controller + "_seed" + std::to_string(seed) + "_iter" + std::to_string(iteration) + ".csv";
}

inline std::optional<RecoveryOptions> recovery_for(const ExperimentConfig& c) {
  if (c.plant != PlantKind::manipulator || !c.manipulator.disturbance) return std::nullopt;
  RecoveryOptions o;
  o.injection = c.manipulator.disturbance->iteration;
  if (o.injection <= o.window || o.injection > c.iterations) return std::nullopt;
  return o;
}

namespace detail {

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + file.string());
}

inline void write_snapshot(const std::filesystem::path& file, const Matrix& path) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "index,x,y\n";
  for (Eigen::Index k = 0; k < path.rows(); ++k)
    out << k << ',' << format_double(path(k, 0)) << ',' << format_double(path(k, 1)) << '\n';
}

inline CellResult run_cell(const ExperimentConfig& c, const ControllerConfig& controller, std::uint64_t seed) {
  CellResult cell;
  cell.controller = controller.id();
  cell.seed = seed;
  const std::set<std::size_t> wanted(c.snapshots.begin(), c.snapshots.end());
  LoopHooks hooks;
  std::vector<ExperimentRecord> rows;
  hooks.on_record = [&](const ExperimentRecord& r) { rows.push_back(r); };
  if (!wanted.empty())
    hooks.on_rollout = [&](std::size_t i, const PlantRollout& r) {
      if (wanted.count(i) && r.path.rows() > 0) cell.snapshots.emplace_back(i, r.path);
    };
  try {
    const auto plant = make_plant(c);
    cell.result = run_ilc_loop(*plant, controller, c.iterations, seed, hooks);
  } catch (const std::exception& e) {
    cell.result.records = std::move(rows);
    cell.result.aborted = true;
    cell.result.diagnostic = cell.controller + " seed " + std::to_string(seed) + ": " + e.what();
  }
  return cell;
}

}  // namespace detail

/// Runs every cell on a pool of `jobs` workers. Results are gathered per cell
/// and written in grid order, so records.csv does not depend on scheduling.
inline RunOutcome run_experiment(const ExperimentConfig& c, const RunOptions& o) {
  namespace fs = std::filesystem;
  fs::create_directories(o.out_dir);

  struct Job {
    const ControllerConfig* controller;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& k : c.controllers)
    for (auto s : c.seeds) jobs.push_back({&k, s});

  RunOutcome outcome;
  outcome.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      outcome.cells[j] = detail::run_cell(c, *jobs[j].controller, jobs[j].seed);
      if (o.log) {
        const auto& cell = outcome.cells[j];
        std::lock_guard lock(log_mutex);
        *o.log << "[" << (j + 1) << "/" << jobs.size() << "] " << cell.controller << " seed " << cell.seed;
        if (cell.result.aborted) *o.log << " ABORTED: " << cell.result.diagnostic;
        else if (!cell.result.records.empty()) *o.log << " final rms " << cell.result.records.back().rms_error;
        *o.log << '\n';
      }
    }
  };
  std::size_t n_workers = o.jobs ? o.jobs : std::max(1u, std::thread::hardware_concurrency());
  n_workers = std::min(n_workers, jobs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  for (const auto& cell : outcome.cells) {
    outcome.records.insert(outcome.records.end(), cell.result.records.begin(), cell.result.records.end());
    if (cell.result.aborted) {
      outcome.aborted = true;
      outcome.diagnostics.push_back(cell.result.diagnostic);
    }
  }

  // Records first: an aborted run still leaves every completed row on disk.
  {
    std::ostringstream csv;
    write_csv(csv, outcome.records);
    detail::write_text(o.out_dir / "records.csv", csv.str());
  }
  {
    std::ostringstream ref;
    sim::write_path_csv(reference_path(*make_plant(c)), ref);
    detail::write_text(o.out_dir / "reference_path.csv", ref.str());
  }
  json trajectories = json::array();
  if (!c.snapshots.empty()) fs::create_directories(o.out_dir / "trajectories");
  for (const auto& cell : outcome.cells)
    for (const auto& [iteration, path] : cell.snapshots) {
      const std::string name = snapshot_file_name(cell.controller, cell.seed, iteration);
      detail::write_snapshot(o.out_dir / "trajectories" / name, path);
      trajectories.push_back(json{{"controller", cell.controller},
                                  {"seed", cell.seed},
                                  {"iteration", iteration},
                                  {"file", "trajectories/" + name}});
    }

  json files{{"records", "records.csv"}, {"reference_path", "reference_path.csv"}, {"trajectories", trajectories}};
  if (!outcome.records.empty()) {
    const auto recovery = recovery_for(c);
    detail::write_text(o.out_dir / "summary.json", summary_json(summarize(outcome.records), outcome.records, recovery).dump(2) + "\n");
    files["summary"] = "summary.json";
  }

  json manifest{{"schema_version", kSchemaVersion},
                {"tool", json{{"name", kToolName}, {"version", kToolVersion}}},
                {"status", outcome.aborted ? "aborted" : "complete"},
                {"diagnostics", outcome.diagnostics},
                {"config", to_json(c)},
                {"artifact_choices", c.artifact_choices},
                {"controllers", json::array()},
                {"files", files},
                {"csv_header", kCsvHeader},
                {"reproducibility",
                 "error columns (rms_error, max_error) and snapshots are bit-reproducible given config and seed; "
                 "timing columns (predict_s, estimate_s, rollout_s, cumulative_s) are wall-clock measurements and are not"}};
  for (const auto& k : c.controllers)
    manifest["controllers"].push_back(json{{"id", k.id()}, {"type", std::string(to_string(k.predictor))}});
  detail::write_text(o.out_dir / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

/// Reads a run directory written by run_experiment.
inline std::vector<ExperimentRecord> load_records(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw ConfigError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("manifest.json is not valid JSON: ") + e.what());
  }
  if (manifest.value("schema_version", -1) != kSchemaVersion)
    throw ConfigError("unsupported manifest schema_version in " + manifest_path.string());
  std::ifstream in(dir / "records.csv");
  if (!in) throw ConfigError("no records.csv in " + dir.string());
  return read_csv(in);
}

}  // namespace qpgp_ilc::bench
