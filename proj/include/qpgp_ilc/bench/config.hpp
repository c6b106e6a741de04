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
/// Experiment configuration: strict JSON parsing (unknown keys are errors),
/// defaults, validation, and the resolved form written to manifest.json.

#include "qpgp_ilc/ilc.hpp"
#include "qpgp_ilc/sim/manipulator.hpp"
#include "qpgp_ilc/sim/vehicle.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <memory>
#include <set>
#include <sstream>

namespace qpgp_ilc::bench {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

enum class PlantKind { vehicle, manipulator };

inline std::string_view to_string(PlantKind k) { return k == PlantKind::vehicle ? "vehicle" : "manipulator"; }

inline std::vector<std::string_view> plant_names() { return {"vehicle", "manipulator"}; }

struct ExperimentConfig {
  std::string name = "experiment";
  PlantKind plant = PlantKind::vehicle;
  std::size_t p = 200;
  std::size_t iterations = 100;
  std::vector<std::uint64_t> seeds{0};
  sim::VehicleConfig vehicle;
  sim::ManipConfig manipulator;
  std::vector<ControllerConfig> controllers;
  std::vector<std::size_t> snapshots;  ///< iterations whose executed path is saved
  std::optional<std::string> output_dir;
  json artifact_choices = json::object();  ///< free-form notes copied to the manifest
};

namespace detail {

inline void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, std::string_view where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

inline double positive(const json& obj, const char* key, double fallback, std::string_view where) {
  const double v = get_or(obj, key, fallback, where);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(where) + "." + key + " must be positive");
  return v;
}

inline double non_negative(const json& obj, const char* key, double fallback, std::string_view where) {
  const double v = get_or(obj, key, fallback, where);
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(where) + "." + key + " must be non-negative");
  return v;
}

inline std::size_t count(const json& obj, const char* key, std::size_t fallback, std::string_view where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(std::string(where) + "." + key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

inline Eigen::Vector3d vec3(const json& obj, const char* key, const Eigen::Vector3d& fallback, std::string_view where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(std::string(where) + "." + key + " must be an array of 3 numbers");
  Eigen::Vector3d out;
  for (int k = 0; k < 3; ++k) {
    if (!v[static_cast<std::size_t>(k)].is_number()) throw ConfigError(std::string(where) + "." + key + " must hold numbers");
    out(k) = v[static_cast<std::size_t>(k)].get<double>();
  }
  return out;
}

inline json vec3_json(const Eigen::Vector3d& v) { return json::array({v(0), v(1), v(2)}); }

inline sim::VehicleConfig parse_vehicle(const json& j) {
  constexpr std::string_view w = "vehicle";
  check_keys(j, w, {"speed", "wheelbase", "dt", "steering_gain", "bias", "bias_slope", "noise_variance", "heading_drift",
                    "saturation"});
  sim::VehicleConfig c;
  c.speed = positive(j, "speed", c.speed, w);
  c.wheelbase = positive(j, "wheelbase", c.wheelbase, w);
  c.dt = positive(j, "dt", c.dt, w);
  c.steering_gain = positive(j, "steering_gain", c.steering_gain, w);
  c.bias = get_or(j, "bias", c.bias, w);
  c.bias_slope = get_or(j, "bias_slope", c.bias_slope, w);
  c.noise_variance = non_negative(j, "noise_variance", c.noise_variance, w);
  c.heading_drift = get_or(j, "heading_drift", c.heading_drift, w);
  c.saturation = positive(j, "saturation", c.saturation, w);
  return c;
}

inline json vehicle_json(const sim::VehicleConfig& c) {
  return json{{"speed", c.speed},       {"wheelbase", c.wheelbase},   {"dt", c.dt},
              {"steering_gain", c.steering_gain}, {"bias", c.bias}, {"bias_slope", c.bias_slope},
              {"noise_variance", c.noise_variance}, {"heading_drift", c.heading_drift}, {"saturation", c.saturation}};
}

inline sim::ManipConfig parse_manipulator(const json& j) {
  constexpr std::string_view w = "manipulator";
  check_keys(j, w, {"links", "bias_means", "noise_std", "damping", "disturbance"});
  sim::ManipConfig c;
  c.links = vec3(j, "links", c.links, w);
  c.bias_means = get_or(j, "bias_means", c.bias_means, w);
  c.noise_std = vec3(j, "noise_std", c.noise_std, w);
  c.damping = positive(j, "damping", c.damping, w);
  if (j.contains("disturbance") && !j.at("disturbance").is_null()) {
    const json& d = j.at("disturbance");
    constexpr std::string_view wd = "manipulator.disturbance";
    check_keys(d, wd, {"iteration", "offsets", "start_step"});
    sim::Disturbance dist;
    dist.iteration = count(d, "iteration", dist.iteration, wd);
    dist.offsets = vec3(d, "offsets", dist.offsets, wd);
    dist.start_step = count(d, "start_step", dist.start_step, wd);
    if (dist.iteration < 1) throw ConfigError("manipulator.disturbance.iteration is 1-based");
    c.disturbance = dist;
  }
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline json manipulator_json(const sim::ManipConfig& c) {
  json j{{"links", vec3_json(c.links)}, {"bias_means", c.bias_means}, {"noise_std", vec3_json(c.noise_std)},
         {"damping", c.damping}};
  if (c.disturbance)
    j["disturbance"] = json{{"iteration", c.disturbance->iteration},
                            {"offsets", vec3_json(c.disturbance->offsets)},
                            {"start_step", c.disturbance->start_step}};
  else
    j["disturbance"] = nullptr;
  return j;
}

inline ControllerConfig parse_controller(const json& j, std::size_t index) {
  const std::string w = "controllers[" + std::to_string(index) + "]";
  check_keys(j, w, {"type", "label", "gains", "kernel_mode", "psd_floor", "max_alternations", "gp", "sparse"});
  if (!j.contains("type") || !j.at("type").is_string()) throw ConfigError(w + ".type is required");
  ControllerConfig c;
  c.predictor = predictor_from_string(j.at("type").get<std::string>());
  c.label = get_or<std::string>(j, "label", "", w);

  if (j.contains("gains")) {
    const json& g = j.at("gains");
    check_keys(g, w + ".gains", {"L", "K", "anneal"});
    c.gains.base_L = non_negative(g, "L", 0.0, w + ".gains");
    c.gains.base_K = non_negative(g, "K", 0.0, w + ".gains");
    const std::string anneal = get_or<std::string>(g, "anneal", "constant", w + ".gains");
    if (anneal == "constant") c.gains.mode = AnnealMode::constant;
    else if (anneal == "inverse_iteration") c.gains.mode = AnnealMode::inverse_iteration;
    else throw ConfigError(w + ".gains.anneal must be 'constant' or 'inverse_iteration'");
  } else {
    throw ConfigError(w + ".gains is required");
  }

  const std::string mode = get_or<std::string>(j, "kernel_mode", "general", w);
  const KernelKind kind = kernel_kind_from_string(mode);
  c.qpgp.kernel_mode = kind == KernelKind::general ? KernelMode::general() : KernelMode::parametric(kind);
  c.qpgp.stage2.relative_floor = non_negative(j, "psd_floor", c.qpgp.stage2.relative_floor, w);
  c.qpgp.stage1.max_alternations = count(j, "max_alternations", c.qpgp.stage1.max_alternations, w);
  if (c.qpgp.stage1.max_alternations == 0) throw ConfigError(w + ".max_alternations must be positive");

  if (j.contains("gp")) {
    const json& g = j.at("gp");
    const std::string wg = w + ".gp";
    check_keys(g, wg, {"variance", "time_lengthscale", "iteration_lengthscale", "noise", "prefit_iterations"});
    c.gp.kernel.time = KernelFamily::rbf(positive(g, "variance", c.gp.kernel.time.variance, wg),
                                         positive(g, "time_lengthscale", c.gp.kernel.time.lengthscale(), wg));
    c.gp.kernel.iteration_lengthscale = positive(g, "iteration_lengthscale", c.gp.kernel.iteration_lengthscale, wg);
    c.gp.noise = positive(g, "noise", c.gp.noise, wg);
    c.gp_prefit_iterations = count(g, "prefit_iterations", 0, wg);
  }
  if (j.contains("sparse")) {
    const json& s = j.at("sparse");
    const std::string ws = w + ".sparse";
    check_keys(s, ws, {"inducing", "kmeans_iterations", "refine_steps", "refit_every"});
    c.sparse.inducing = count(s, "inducing", c.sparse.inducing, ws);
    c.sparse.kmeans_iterations = count(s, "kmeans_iterations", c.sparse.kmeans_iterations, ws);
    c.sparse.refine_steps = count(s, "refine_steps", c.sparse.refine_steps, ws);
    c.sparse_refit_every = count(s, "refit_every", c.sparse_refit_every, ws);
    if (c.sparse.inducing == 0) throw ConfigError(ws + ".inducing must be positive");
  }
  return c;
}

inline json controller_json(const ControllerConfig& c) {
  return json{{"type", std::string(to_string(c.predictor))},
              {"label", c.id()},
              {"gains",
               {{"L", c.gains.base_L},
                {"K", c.gains.base_K},
                {"anneal", c.gains.mode == AnnealMode::constant ? "constant" : "inverse_iteration"}}},
              {"kernel_mode", std::string(to_string(c.qpgp.kernel_mode.kind))},
              {"psd_floor", c.qpgp.stage2.relative_floor},
              {"max_alternations", c.qpgp.stage1.max_alternations},
              {"gp",
               {{"variance", c.gp.kernel.time.variance},
                {"time_lengthscale", c.gp.kernel.time.lengthscale()},
                {"iteration_lengthscale", c.gp.kernel.iteration_lengthscale},
                {"noise", c.gp.noise},
                {"prefit_iterations", c.gp_prefit_iterations}}},
              {"sparse",
               {{"inducing", c.sparse.inducing},
                {"kmeans_iterations", c.sparse.kmeans_iterations},
                {"refine_steps", c.sparse.refine_steps},
                {"refit_every", c.sparse_refit_every}}}};
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  detail::check_keys(j, "config", {"name", "plant", "p", "iterations", "seeds", "vehicle", "manipulator", "controllers",
                                   "snapshots", "output_dir", "artifact_choices"});
  ExperimentConfig c;
  c.name = detail::get_or<std::string>(j, "name", c.name, "config");
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
    throw ConfigError("config.name must be a non-empty file-name-safe string");
  if (!j.contains("plant") || !j.at("plant").is_string()) throw ConfigError("config.plant is required");
  const std::string plant = j.at("plant").get<std::string>();
  if (plant == "vehicle") c.plant = PlantKind::vehicle;
  else if (plant == "manipulator") c.plant = PlantKind::manipulator;
  else throw ConfigError("config.plant: unknown plant '" + plant + "'");

  c.p = detail::count(j, "p", c.plant == PlantKind::vehicle ? 200 : 100, "config");
  c.iterations = detail::count(j, "iterations", c.plant == PlantKind::vehicle ? 100 : 60, "config");
  if (c.p < 3) throw ConfigError("config.p must be at least 3");
  if (c.iterations < 2) throw ConfigError("config.iterations must be at least 2");

  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (!s.is_array()) throw ConfigError("config.seeds must be an array");
    c.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("config.seeds must hold non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (c.seeds.empty()) throw ConfigError("config.seeds must not be empty");

  if (j.contains("vehicle")) {
    if (c.plant != PlantKind::vehicle) throw ConfigError("config.vehicle given for a non-vehicle plant");
    c.vehicle = detail::parse_vehicle(j.at("vehicle"));
  }
  if (j.contains("manipulator")) {
    if (c.plant != PlantKind::manipulator) throw ConfigError("config.manipulator given for a non-manipulator plant");
    c.manipulator = detail::parse_manipulator(j.at("manipulator"));
  }
  if (c.manipulator.disturbance && c.manipulator.disturbance->start_step >= c.p)
    throw ConfigError("manipulator.disturbance.start_step must be below p");

  if (!j.contains("controllers") || !j.at("controllers").is_array() || j.at("controllers").empty())
    throw ConfigError("config.controllers must be a non-empty array");
  std::set<std::string> labels;
  for (std::size_t k = 0; k < j.at("controllers").size(); ++k) {
    c.controllers.push_back(detail::parse_controller(j.at("controllers")[k], k));
    if (!labels.insert(c.controllers.back().id()).second)
      throw ConfigError("duplicate controller label '" + c.controllers.back().id() + "'");
  }

  if (j.contains("snapshots")) {
    if (!j.at("snapshots").is_array()) throw ConfigError("config.snapshots must be an array");
    for (const auto& v : j.at("snapshots")) {
      if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<std::size_t>() > c.iterations)
        throw ConfigError("config.snapshots entries must lie in 1..iterations");
      c.snapshots.push_back(v.get<std::size_t>());
    }
  }
  if (j.contains("output_dir")) c.output_dir = detail::get_or<std::string>(j, "output_dir", "", "config");
  if (j.contains("artifact_choices")) {
    if (!j.at("artifact_choices").is_object()) throw ConfigError("config.artifact_choices must be an object");
    c.artifact_choices = j.at("artifact_choices");
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Fully resolved config; parse_config(to_json(c)) reproduces c.
inline json to_json(const ExperimentConfig& c) {
  json j{{"name", c.name}, {"plant", std::string(to_string(c.plant))}, {"p", c.p}, {"iterations", c.iterations},
         {"seeds", c.seeds}};
  if (c.plant == PlantKind::vehicle) j["vehicle"] = detail::vehicle_json(c.vehicle);
  else j["manipulator"] = detail::manipulator_json(c.manipulator);
  j["controllers"] = json::array();
  for (const auto& k : c.controllers) j["controllers"].push_back(detail::controller_json(k));
  j["snapshots"] = c.snapshots;
  if (c.output_dir) j["output_dir"] = *c.output_dir;
  j["artifact_choices"] = c.artifact_choices;
  return j;
}

inline std::unique_ptr<Plant> make_plant(const ExperimentConfig& c) {
  try {
    if (c.plant == PlantKind::vehicle) return std::make_unique<sim::VehiclePlant>(sim::VehiclePlant::raceline(c.p, c.vehicle));
    return std::make_unique<sim::ManipulatorPlant>(c.p, c.manipulator);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

/// Reference path of the configured plant.
inline sim::ReferencePath reference_path(const Plant& plant) {
  if (auto v = dynamic_cast<const sim::VehiclePlant*>(&plant)) return v->path();
  if (auto m = dynamic_cast<const sim::ManipulatorPlant*>(&plant)) return m->path();
  throw ConfigError("plant has no reference path");
}

}  // namespace qpgp_ilc::bench
