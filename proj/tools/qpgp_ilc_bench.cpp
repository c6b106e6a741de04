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

// Experiment runner CLI.
//
//   qpgp_ilc_bench run <config.json>      run the grid, write a result directory
//   qpgp_ilc_bench summarize <dir>        recompute summary.json from records.csv
//   qpgp_ilc_bench validate <config.json> parse and print the resolved config
//   qpgp_ilc_bench list-plants
//
// Exit codes: 0 ok, 2 config error, 3 runtime abort.

#include "qpgp_ilc/qpgp_ilc.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;

struct Flags {
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out;
  bool quiet = false;
  std::size_t jobs = 0;
};

qpgp_ilc::bench::ExperimentConfig load(const std::string& path, const Flags& f) {
  auto c = qpgp_ilc::bench::load_config(path);
  if (f.seed_override) c.seeds = {*f.seed_override};
  return c;
}

int cmd_run(const std::string& path, const Flags& f) {
  using namespace qpgp_ilc::bench;
  const auto c = load(path, f);
  RunOptions o;
  o.out_dir = resolve_output_dir(c, f.out);
  o.jobs = f.jobs;
  o.log = f.quiet ? nullptr : &std::cerr;
  const auto outcome = run_experiment(c, o);
  if (outcome.aborted) {
    for (const auto& d : outcome.diagnostics) std::cerr << "error: " << d << '\n';
    std::cerr << "partial records written to " << (o.out_dir / "records.csv").string() << '\n';
    return kExitAbort;
  }
  if (!f.quiet) {
    for (const auto& s : summarize(outcome.records))
      std::cout << s.controller << ": final-10 rms " << s.final10_rms << ", compute " << s.total_compute_s << " s\n";
    std::cout << "wrote " << o.out_dir.string() << '\n';
  }
  return kExitOk;
}

int cmd_summarize(const std::string& dir, const Flags& f) {
  using namespace qpgp_ilc::bench;
  const auto records = load_records(dir);
  std::optional<RecoveryOptions> recovery;
  {
    std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
    const auto manifest = json::parse(mf);
    recovery = recovery_for(parse_config(manifest.at("config")));
  }
  const auto doc = summary_json(summarize(records), records, recovery);
  const auto out = f.out ? std::filesystem::path(*f.out) : std::filesystem::path(dir) / "summary.json";
  std::ofstream(out) << doc.dump(2) << '\n';
  if (!f.quiet) std::cout << "wrote " << out.string() << '\n';
  return kExitOk;
}

int cmd_validate(const std::string& path, const Flags& f) {
  const auto c = load(path, f);
  if (!f.quiet) std::cout << qpgp_ilc::bench::to_json(c).dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QPGP predictive ILC experiment runner"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  std::uint64_t seed = 0;
  std::string out;
  auto* seed_opt = app.add_option("--seed-override", seed, "Run a single seed instead of the configured list");
  auto* out_opt = app.add_option("--out", out, "Output directory (run) or summary file (summarize)");
  app.add_flag("--quiet,-q", flags.quiet, "Suppress progress output");
  app.add_option("--jobs,-j", flags.jobs, "Worker threads; 0 uses all cores")->check(CLI::NonNegativeNumber);

  std::string target;
  auto* run = app.add_subcommand("run", "Run every (controller, seed) cell of a config");
  run->add_option("config", target, "Config JSON")->required();
  auto* summarize = app.add_subcommand("summarize", "Recompute summary.json for a result directory");
  summarize->add_option("dir", target, "Result directory")->required();
  auto* validate = app.add_subcommand("validate", "Check a config and print it fully resolved");
  validate->add_option("config", target, "Config JSON")->required();
  auto* list = app.add_subcommand("list-plants", "List the simulated plants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) flags.seed_override = seed;
  if (*out_opt) flags.out = out;

  try {
    if (*run) return cmd_run(target, flags);
    if (*summarize) return cmd_summarize(target, flags);
    if (*validate) return cmd_validate(target, flags);
    if (*list) {
      for (auto name : qpgp_ilc::bench::plant_names()) std::cout << name << '\n';
      return kExitOk;
    }
  } catch (const qpgp_ilc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const qpgp_ilc::bench::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitAbort;
  }
  return kExitConfig;
}
