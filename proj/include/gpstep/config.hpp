#pragma once

#include "gpstep/backstepping.hpp"
#include "gpstep/simulate.hpp"
#include "gpstep/strict_feedback.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace gpstep {

using nlohmann::json;

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// Per-subsystem GP settings: either explicit kernels (one per output
// dimension, or one shared) or a hyperparameter-fit directive.
struct GpSubsystemConfig {
  bool fit = false;
  std::optional<SeKernelParams> fit_init;  // defaults derived from the domain
  std::vector<SeKernelParams> kernels;     // used when !fit
};

struct MonteCarloBoundConfig {
  double threshold = 0.0;        // preset |eta||rho_bar| product
  long realizations = 100000;
  double confidence = 1.0 - 1e-10;
  double calibration_quantile = 0.985;  // empirical quantile defining the calibrated threshold
};

struct ProbabilisticBoundConfig {
  double epsilon = 0.05;
  std::vector<VecX> rkhs_bounds;  // per subsystem, per output dim
  std::vector<VecX> info_gain;    // per subsystem, per output dim
};

struct DeterministicBoundConfig {
  std::vector<VecX> hoelder_constants;  // per subsystem, per output dim
};

// Piecewise-constant reference signal; a single segment is a constant.
struct InputSignalConfig {
  std::vector<double> times;   // segment start times, first is 0
  std::vector<VecX> values;    // one value per segment

  VecX at(double t) const {
    std::size_t seg = 0;
    while (seg + 1 < times.size() && t >= times[seg + 1]) ++seg;
    return values[seg];
  }
};

struct ScenarioConfig {
  std::string name;
  VecX x0, x0_other;
  InputSignalConfig u_hat, u_hat_other;
};

struct RunConfig {
  std::uint64_t seed = 2024;
  std::string output = "runs/out";

  std::string plant_type;  // "maglev" | "twolink"
  MaglevParams maglev;
  TwoLinkParams twolink;

  DataGenConfig data;

  std::vector<GpSubsystemConfig> gp_subsystems;
  int rho_bar_grid = 25;

  std::optional<MonteCarloBoundConfig> monte_carlo;
  std::optional<ProbabilisticBoundConfig> probabilistic;
  std::optional<DeterministicBoundConfig> deterministic;

  SynthesisOptions controller;

  SimConfig simulation;
  std::vector<ScenarioConfig> scenarios;

  StrictFeedbackSystem make_system() const {
    if (plant_type == "maglev") return as_strict_feedback(maglev);
    return as_strict_feedback(twolink);
  }
};

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

inline const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) fail(path + "." + key, "missing required field");
  return j.at(key);
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

inline double positive(const json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v > 0.0)) fail(path, "must be strictly positive");
  return v;
}

inline VecX vector(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of numbers");
  VecX v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<long>(i)] = number(j[i], path);
  return v;
}

inline SeKernelParams kernel_params(const json& j, const std::string& path) {
  SeKernelParams p;
  p.signal_std = positive(require(j, "signal_std", path), path + ".signal_std");
  p.length_scales = vector(require(j, "length_scales", path), path + ".length_scales");
  for (long i = 0; i < p.length_scales.size(); ++i)
    if (!(p.length_scales[i] > 0)) fail(path + ".length_scales", "entries must be positive");
  return p;
}

inline InputSignalConfig input_signal(const json& j, const std::string& path, int dim) {
  InputSignalConfig sig;
  if (j.is_array()) {
    sig.times = {0.0};
    sig.values = {vector(j, path)};
  } else if (j.is_object()) {
    const json& times = require(j, "times", path);
    const json& values = require(j, "values", path);
    if (!times.is_array() || !values.is_array() || times.size() != values.size() || times.empty())
      fail(path, "times and values must be equal-length non-empty arrays");
    for (std::size_t i = 0; i < times.size(); ++i) {
      sig.times.push_back(number(times[i], path + ".times"));
      sig.values.push_back(vector(values[i], path + ".values"));
      if (i > 0 && !(sig.times[i] > sig.times[i - 1]))
        fail(path + ".times", "must increase strictly");
    }
    if (sig.times.front() != 0.0) fail(path + ".times", "first segment must start at 0");
  } else {
    fail(path, "expected an array (constant) or {times, values} (piecewise constant)");
  }
  for (const auto& v : sig.values)
    if (v.size() != dim) fail(path, "values must have dimension " + std::to_string(dim));
  return sig;
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
  using detail::fail;
  using detail::require;
  RunConfig cfg;

  if (!j.is_object()) fail("config", "expected a JSON object");
  const int version = require(j, "version", "config").get<int>();
  if (version != kConfigVersion)
    fail("config.version", "unsupported schema version " + std::to_string(version) +
                               " (this build reads version " + std::to_string(kConfigVersion) + ")");

  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0)
      fail("config.seed", "expected a nonnegative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("output")) cfg.output = j["output"].get<std::string>();

  // Plant.
  const json& plant = require(j, "plant", "config");
  cfg.plant_type = require(plant, "type", "config.plant").get<std::string>();
  if (cfg.plant_type != "maglev" && cfg.plant_type != "twolink")
    fail("config.plant.type", "must be 'maglev' or 'twolink'");
  if (plant.contains("maglev")) {
    const json& p = plant["maglev"];
    const std::string base = "config.plant.maglev";
    if (p.contains("mass")) cfg.maglev.mass = detail::positive(p["mass"], base + ".mass");
    if (p.contains("gravity")) cfg.maglev.gravity = detail::positive(p["gravity"], base + ".gravity");
    if (p.contains("resistance"))
      cfg.maglev.resistance = detail::positive(p["resistance"], base + ".resistance");
    if (p.contains("coil_alpha"))
      cfg.maglev.coil_alpha = detail::positive(p["coil_alpha"], base + ".coil_alpha");
  }
  if (plant.contains("twolink")) {
    const json& p = plant["twolink"];
    const std::string base = "config.plant.twolink";
    if (p.contains("link_mass"))
      cfg.twolink.link_mass = detail::positive(p["link_mass"], base + ".link_mass");
    if (p.contains("link_length"))
      cfg.twolink.link_length = detail::positive(p["link_length"], base + ".link_length");
    if (p.contains("gravity")) cfg.twolink.gravity = detail::positive(p["gravity"], base + ".gravity");
  }

  const StrictFeedbackSystem sys = cfg.make_system();
  const int h = sys.num_subsystems;
  const int n = sys.block_dim;

  // Data generation.
  const json& data = require(j, "data", "config");
  cfg.data.samples = static_cast<int>(detail::positive(require(data, "samples", "config.data"),
                                                       "config.data.samples"));
  cfg.data.noise_std =
      detail::positive(require(data, "noise_std", "config.data"), "config.data.noise_std");
  if (data.contains("mode")) {
    const std::string m = data["mode"].get<std::string>();
    if (m == "exact-oracle")
      cfg.data.mode = DataGenConfig::Mode::ExactOracle;
    else if (m == "finite-difference")
      cfg.data.mode = DataGenConfig::Mode::FiniteDifference;
    else
      fail("config.data.mode", "must be 'exact-oracle' or 'finite-difference'");
  }
  if (data.contains("sampling_time"))
    cfg.data.sampling_time = detail::positive(data["sampling_time"], "config.data.sampling_time");
  if (data.contains("sampling")) {
    const std::string m = data["sampling"].get<std::string>();
    if (m == "uniform")
      cfg.data.sampling = DataGenConfig::Sampling::Uniform;
    else if (m == "trajectory")
      cfg.data.sampling = DataGenConfig::Sampling::Trajectory;
    else
      fail("config.data.sampling", "must be 'uniform' or 'trajectory'");
  }

  // GP settings.
  const json& gp = require(j, "gp", "config");
  if (gp.contains("rho_bar_grid")) {
    cfg.rho_bar_grid = gp["rho_bar_grid"].get<int>();
    if (cfg.rho_bar_grid < 2) fail("config.gp.rho_bar_grid", "must be at least 2");
  }
  const json& subs = require(gp, "subsystems", "config.gp");
  if (!subs.is_array() || static_cast<int>(subs.size()) != h)
    fail("config.gp.subsystems", "expected an array with one entry per subsystem (" +
                                     std::to_string(h) + ")");
  for (int i = 0; i < h; ++i) {
    const std::string base = "config.gp.subsystems[" + std::to_string(i) + "]";
    const json& s = subs[i];
    GpSubsystemConfig sc;
    if (s.contains("fit") && s["fit"].get<bool>()) {
      sc.fit = true;
      if (s.contains("init")) sc.fit_init = detail::kernel_params(s["init"], base + ".init");
    } else {
      const json& ks = require(s, "kernels", base);
      if (!ks.is_array() || ks.empty()) fail(base + ".kernels", "expected a non-empty array");
      for (std::size_t kidx = 0; kidx < ks.size(); ++kidx)
        sc.kernels.push_back(
            detail::kernel_params(ks[kidx], base + ".kernels[" + std::to_string(kidx) + "]"));
      if (static_cast<int>(sc.kernels.size()) != 1 && static_cast<int>(sc.kernels.size()) != n)
        fail(base + ".kernels", "expected 1 shared kernel or one per output dimension (" +
                                    std::to_string(n) + ")");
      const int want_dim = (i + 1) * n;
      for (const auto& kp : sc.kernels)
        if (kp.input_dim() != want_dim)
          fail(base + ".kernels", "length_scales must have " + std::to_string(want_dim) +
                                      " entries for subsystem " + std::to_string(i + 1));
    }
    cfg.gp_subsystems.push_back(std::move(sc));
  }

  // Error bounds; each section optional but at least one required.
  const json& bounds = require(j, "bounds", "config");
  if (bounds.contains("monte_carlo")) {
    const json& mc = bounds["monte_carlo"];
    const std::string base = "config.bounds.monte_carlo";
    MonteCarloBoundConfig m;
    m.threshold = detail::positive(require(mc, "threshold", base), base + ".threshold");
    if (mc.contains("realizations")) {
      m.realizations = mc["realizations"].get<long>();
      if (m.realizations < 1000) fail(base + ".realizations", "must be at least 1000");
    }
    if (mc.contains("confidence")) {
      m.confidence = detail::number(mc["confidence"], base + ".confidence");
      if (!(m.confidence > 0.0) || !(m.confidence < 1.0))
        fail(base + ".confidence", "must lie in (0,1)");
    }
    if (mc.contains("calibration_quantile")) {
      m.calibration_quantile = detail::number(mc["calibration_quantile"], base + ".calibration_quantile");
      if (!(m.calibration_quantile > 0.0) || !(m.calibration_quantile < 1.0))
        fail(base + ".calibration_quantile", "must lie in (0,1)");
    }
    cfg.monte_carlo = m;
  }
  if (bounds.contains("probabilistic")) {
    const json& pb = bounds["probabilistic"];
    const std::string base = "config.bounds.probabilistic";
    ProbabilisticBoundConfig p;
    p.epsilon = detail::number(require(pb, "epsilon", base), base + ".epsilon");
    if (!(p.epsilon > 0.0) || !(p.epsilon < 1.0)) fail(base + ".epsilon", "must lie in (0,1)");
    const json& rk = require(pb, "rkhs_bounds", base);
    const json& gi = require(pb, "info_gain", base);
    if (!rk.is_array() || static_cast<int>(rk.size()) != h)
      fail(base + ".rkhs_bounds", "expected one array per subsystem");
    if (!gi.is_array() || static_cast<int>(gi.size()) != h)
      fail(base + ".info_gain", "expected one array per subsystem");
    for (int i = 0; i < h; ++i) {
      p.rkhs_bounds.push_back(detail::vector(rk[i], base + ".rkhs_bounds[" + std::to_string(i) + "]"));
      p.info_gain.push_back(detail::vector(gi[i], base + ".info_gain[" + std::to_string(i) + "]"));
      if (p.rkhs_bounds.back().size() != n || p.info_gain.back().size() != n)
        fail(base, "per-subsystem arrays must have one entry per output dimension");
    }
    cfg.probabilistic = p;
  }
  if (bounds.contains("deterministic")) {
    const json& db = bounds["deterministic"];
    const std::string base = "config.bounds.deterministic";
    DeterministicBoundConfig d;
    const json& hc = require(db, "hoelder_constants", base);
    if (!hc.is_array() || static_cast<int>(hc.size()) != h)
      fail(base + ".hoelder_constants", "expected one array per subsystem");
    for (int i = 0; i < h; ++i) {
      d.hoelder_constants.push_back(
          detail::vector(hc[i], base + ".hoelder_constants[" + std::to_string(i) + "]"));
      if (d.hoelder_constants.back().size() != n)
        fail(base + ".hoelder_constants", "need one constant per output dimension");
      if (d.hoelder_constants.back().minCoeff() <= 0)
        fail(base + ".hoelder_constants", "constants must be positive");
    }
    cfg.deterministic = d;
  }
  if (!cfg.monte_carlo && !cfg.probabilistic && !cfg.deterministic)
    fail("config.bounds", "configure at least one of monte_carlo, probabilistic, deterministic");

  // Controller synthesis.
  const json& ctrl = require(j, "controller", "config");
  if (ctrl.contains("margins")) {
    const VecX m = detail::vector(ctrl["margins"], "config.controller.margins");
    cfg.controller.margins.assign(m.data(), m.data() + m.size());
    for (double v : cfg.controller.margins)
      if (!(v > 0)) fail("config.controller.margins", "entries must be positive");
  } else if (ctrl.contains("margin")) {
    cfg.controller.margin = detail::positive(ctrl["margin"], "config.controller.margin");
  }
  if (ctrl.contains("safety")) {
    cfg.controller.safety = detail::number(ctrl["safety"], "config.controller.safety");
    if (cfg.controller.safety < 1.0) fail("config.controller.safety", "must be at least 1");
  }
  if (ctrl.contains("lipschitz_grid")) {
    cfg.controller.lipschitz_grid = ctrl["lipschitz_grid"].get<int>();
    if (cfg.controller.lipschitz_grid < 3) fail("config.controller.lipschitz_grid", "must be >= 3");
  }
  if (ctrl.contains("derivative_mode")) {
    const std::string m = ctrl["derivative_mode"].get<std::string>();
    if (m == "analytic")
      cfg.controller.mode = DerivativeMode::Analytic;
    else if (m == "finite-difference")
      cfg.controller.mode = DerivativeMode::FiniteDifference;
    else
      fail("config.controller.derivative_mode", "must be 'analytic' or 'finite-difference'");
  }
  if (ctrl.contains("gains")) {
    const json& g = ctrl["gains"];
    if (!g.is_array()) fail("config.controller.gains", "expected an array");
    for (const auto& v : g)
      cfg.controller.fixed_gains.push_back(detail::positive(v, "config.controller.gains"));
    if (static_cast<int>(cfg.controller.fixed_gains.size()) > h)
      fail("config.controller.gains", "more gains than subsystems");
  }

  // Simulation scenarios.
  const json& sim = require(j, "simulation", "config");
  cfg.simulation.t_end = detail::positive(require(sim, "t_end", "config.simulation"),
                                          "config.simulation.t_end");
  cfg.simulation.dt =
      detail::positive(require(sim, "dt", "config.simulation"), "config.simulation.dt");
  if (!(cfg.simulation.dt < cfg.simulation.t_end))
    fail("config.simulation.dt", "must be smaller than t_end");
  if (sim.contains("method")) {
    const std::string m = sim["method"].get<std::string>();
    if (m == "rk4")
      cfg.simulation.method = Integrator::Rk4;
    else if (m == "euler")
      cfg.simulation.method = Integrator::Euler;
    else
      fail("config.simulation.method", "must be 'rk4' or 'euler'");
  }
  if (sim.contains("clamp_to_domain"))
    cfg.simulation.clamp_to_domain = sim["clamp_to_domain"].get<bool>();
  const json& scens = require(sim, "scenarios", "config.simulation");
  if (!scens.is_array() || scens.empty())
    fail("config.simulation.scenarios", "expected a non-empty array");
  for (std::size_t sidx = 0; sidx < scens.size(); ++sidx) {
    const std::string base = "config.simulation.scenarios[" + std::to_string(sidx) + "]";
    const json& s = scens[sidx];
    ScenarioConfig sc;
    sc.name = require(s, "name", base).get<std::string>();
    sc.x0 = detail::vector(require(s, "x0", base), base + ".x0");
    sc.x0_other = detail::vector(require(s, "x0_other", base), base + ".x0_other");
    sc.u_hat = detail::input_signal(require(s, "u_hat", base), base + ".u_hat", n);
    sc.u_hat_other = s.contains("u_hat_other")
                         ? detail::input_signal(s["u_hat_other"], base + ".u_hat_other", n)
                         : sc.u_hat;
    if (sc.x0.size() != h * n || sc.x0_other.size() != h * n)
      fail(base, "initial states must have dimension " + std::to_string(h * n));
    for (const auto& other : cfg.scenarios)
      if (other.name == sc.name) fail(base + ".name", "duplicate scenario name '" + sc.name + "'");
    cfg.scenarios.push_back(std::move(sc));
  }

  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg = parse_config(j);
  // Paths resolve relative to the config file.
  const auto dir = std::filesystem::path(path).parent_path();
  if (!cfg.output.empty() && !std::filesystem::path(cfg.output).is_absolute())
    cfg.output = (dir / cfg.output).lexically_normal().string();
  return cfg;
}

}  // namespace gpstep
