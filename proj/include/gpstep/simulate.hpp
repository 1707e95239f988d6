#pragma once

#include "gpstep/backstepping.hpp"
#include "gpstep/rng.hpp"
#include "gpstep/strict_feedback.hpp"
#include "gpstep/trajectory.hpp"

#include <cmath>
#include <functional>
#include <optional>

namespace gpstep {

enum class Integrator { Rk4, Euler };

struct SimConfig {
  double t_end = 10.0;
  double dt = 1e-3;
  Integrator method = Integrator::Rk4;
  bool clamp_to_domain = false;

  void validate() const {
    if (!(dt > 0.0) || !(dt < t_end)) throw ConfigError("SimConfig: need 0 < dt < t_end");
  }
};

using InputSignal = std::function<VecX(double)>;

inline InputSignal constant_input(const VecX& u) {
  return [u](double) { return u; };
}

struct SimResult {
  Trajectory trajectory;
  long clamp_events = 0;   // domain clamps plus validity-floor clamps
  long domain_exits = 0;   // grid points outside the box (when not clamping)
  bool finite = true;
  double failure_time = 0.0;
};

namespace detail {

// Applied input at a state: closed loop when a controller is given, raw
// u_hat otherwise (open-loop data generation runs with u_hat = 0).
inline VecX applied_input(const StrictFeedbackSystem& sys, const BacksteppingController* ctrl,
                          const VecX& state, const VecX& u_hat) {
  if (ctrl) return control_law(*ctrl, state, u_hat);
  return u_hat;
}

}  // namespace detail

// Fixed-step integration of the true plant. The control law is re-evaluated
// at every stage point of every step. Non-finite states abort with the
// failure time recorded.
inline SimResult integrate(const StrictFeedbackSystem& sys, const BacksteppingController* ctrl,
                           const VecX& x0, const InputSignal& u_hat, const SimConfig& cfg) {
  cfg.validate();
  if (x0.size() != sys.state_dim()) throw ConfigError("integrate: initial state dimension mismatch");

  const auto rhs = [&](const VecX& x, double t) {
    return sys.rhs(x, detail::applied_input(sys, ctrl, x, u_hat(t)));
  };

  SimResult res;
  const long steps = static_cast<long>(std::llround(cfg.t_end / cfg.dt));
  VecX x = sys.apply_floor(x0);
  double t = 0.0;
  res.trajectory.times.reserve(steps + 1);
  for (long k = 0;; ++k) {
    res.trajectory.times.push_back(t);
    res.trajectory.states.push_back(x);
    res.trajectory.u_hats.push_back(u_hat(t));
    res.trajectory.inputs.push_back(detail::applied_input(sys, ctrl, x, u_hat(t)));
    if (!sys.domain.contains(x)) ++res.domain_exits;
    if (k == steps) break;

    VecX x_next;
    if (cfg.method == Integrator::Euler) {
      x_next = x + cfg.dt * rhs(x, t);
    } else {
      const VecX k1 = rhs(x, t);
      const VecX k2 = rhs(x + 0.5 * cfg.dt * k1, t + 0.5 * cfg.dt);
      const VecX k3 = rhs(x + 0.5 * cfg.dt * k2, t + 0.5 * cfg.dt);
      const VecX k4 = rhs(x + cfg.dt * k3, t + cfg.dt);
      x_next = x + (cfg.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    const VecX floored = sys.apply_floor(x_next);
    if (floored != x_next) ++res.clamp_events;
    x_next = floored;
    if (cfg.clamp_to_domain) {
      const VecX clamped = sys.domain.clamp(x_next);
      if (clamped != x_next) ++res.clamp_events;
      x_next = clamped;
    }
    if (!x_next.allFinite()) {
      res.finite = false;
      res.failure_time = t + cfg.dt;
      break;
    }
    x = x_next;
    t = (k + 1) * cfg.dt;
  }
  return res;
}

struct PairResult {
  TrajectoryPair pair;
  long clamp_events = 0;
  long domain_exits = 0;
  bool finite = true;
};

// Two closed-loop trajectories on one shared grid.
inline PairResult simulate_pair(const StrictFeedbackSystem& sys,
                                const BacksteppingController& ctrl, const VecX& x0,
                                const VecX& x0_other, const InputSignal& u_hat,
                                const InputSignal& u_hat_other, const SimConfig& cfg) {
  SimResult a = integrate(sys, &ctrl, x0, u_hat, cfg);
  SimResult b = integrate(sys, &ctrl, x0_other, u_hat_other, cfg);
  if (!a.finite || !b.finite)
    throw NumericalError("simulate_pair: trajectory diverged at t = " +
                         std::to_string(a.finite ? b.failure_time : a.failure_time));
  PairResult out;
  out.pair.first = std::move(a.trajectory);
  out.pair.second = std::move(b.trajectory);
  out.clamp_events = a.clamp_events + b.clamp_events;
  out.domain_exits = a.domain_exits + b.domain_exits;
  out.pair.validate();
  return out;
}

struct DataGenConfig {
  int samples = 200;
  double noise_std = 0.01;
  enum class Mode { ExactOracle, FiniteDifference } mode = Mode::ExactOracle;
  double sampling_time = 1e-4;  // tau for the finite-difference rollout
  enum class Sampling { Uniform, Trajectory } sampling = Sampling::Uniform;
  double trajectory_step = 1e-2;   // grid step along rollouts (Trajectory sampling)
  int samples_per_trajectory = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (samples < 1) throw ConfigError("DataGenConfig: need at least one sample");
    if (!(noise_std > 0.0)) throw ConfigError("DataGenConfig: noise_std must be positive");
    if (mode == Mode::FiniteDifference && !(sampling_time > 0.0))
      throw ConfigError("DataGenConfig: sampling_time must be positive");
  }
};

namespace detail {

// Derivative measurement for subsystem i at a full state, input identically
// zero: exact oracle or a short finite-difference rollout
// (xi_i(tau) - xi_i(0)) / tau, both with the known b_i xi_{i+1} subtracted.
inline VecX drift_measurement(const StrictFeedbackSystem& sys, int i, const VecX& state,
                              const DataGenConfig& cfg) {
  const int n = sys.block_dim;
  if (cfg.mode == DataGenConfig::Mode::ExactOracle) return sys.drift[i - 1](sys.prefix(state, i));
  SimConfig roll;
  roll.t_end = cfg.sampling_time;
  roll.dt = cfg.sampling_time / 8.0;
  const SimResult r =
      integrate(sys, nullptr, state, constant_input(VecX::Zero(n)), roll);
  if (!r.finite) throw NumericalError("drift_measurement: rollout diverged");
  const VecX xi_dot =
      (r.trajectory.states.back().segment((i - 1) * n, n) - state.segment((i - 1) * n, n)) /
      cfg.sampling_time;
  VecX y = xi_dot;
  if (i < sys.num_subsystems) y -= sys.gains[i - 1] * state.segment(i * n, n);
  // i = h contributes g_h * v with v = 0.
  return y;
}

}  // namespace detail

// Draws N states, measures the subsystem drift, adds Gaussian noise.
// Counter-based draws keep the dataset a pure function of the seed.
inline Dataset generate_dataset(const StrictFeedbackSystem& sys, int subsystem,
                                const DataGenConfig& cfg) {
  cfg.validate();
  if (subsystem < 1 || subsystem > sys.num_subsystems)
    throw ConfigError("generate_dataset: subsystem index out of range");
  const int n = sys.block_dim;
  const int q = subsystem * n;

  Dataset ds;
  ds.noise_std = cfg.noise_std;
  ds.inputs.resize(cfg.samples, q);
  ds.targets.resize(cfg.samples, n);

  const std::uint64_t draw_seed = rng::derive(cfg.seed, 0xD5A11ULL + subsystem);
  const std::uint64_t noise_seed = rng::derive(cfg.seed, 0x9015EULL + subsystem);

  std::vector<VecX> states;
  states.reserve(cfg.samples);
  if (cfg.sampling == DataGenConfig::Sampling::Uniform) {
    std::uint64_t counter = 0;
    while (static_cast<int>(states.size()) < cfg.samples) {
      const VecX x = rng::uniform_in_box(draw_seed, counter++, sys.domain);
      if (!sys.sample_filter || sys.sample_filter(x)) states.push_back(x);
      if (counter > 1000ULL * static_cast<std::uint64_t>(cfg.samples) + 1000ULL)
        throw NumericalError("generate_dataset: sample filter rejects nearly all draws");
    }
  } else {
    // Short open-loop rollouts from random initial states.
    SimConfig roll;
    roll.t_end = cfg.trajectory_step * cfg.samples_per_trajectory;
    roll.dt = cfg.trajectory_step;
    std::uint64_t counter = 0;
    while (static_cast<int>(states.size()) < cfg.samples) {
      const VecX x0 = rng::uniform_in_box(draw_seed, counter++, sys.domain);
      if (sys.sample_filter && !sys.sample_filter(x0)) continue;
      const SimResult r = integrate(sys, nullptr, x0, constant_input(VecX::Zero(n)), roll);
      for (const VecX& x : r.trajectory.states) {
        if (static_cast<int>(states.size()) >= cfg.samples) break;
        if (!sys.domain.contains(x)) continue;
        if (sys.sample_filter && !sys.sample_filter(x)) continue;
        states.push_back(x);
      }
      if (counter > 100ULL * static_cast<std::uint64_t>(cfg.samples) + 100ULL)
        throw NumericalError("generate_dataset: trajectory sampling starved");
    }
  }

  for (int s = 0; s < cfg.samples; ++s) {
    ds.inputs.row(s) = states[s].head(q).transpose();
    const VecX y = detail::drift_measurement(sys, subsystem, states[s], cfg);
    const VecX w = cfg.noise_std * rng::gaussian_vec(noise_seed, static_cast<std::uint64_t>(s), n);
    ds.targets.row(s) = (y + w).transpose();
  }
  ds.validate();
  return ds;
}

}  // namespace gpstep
