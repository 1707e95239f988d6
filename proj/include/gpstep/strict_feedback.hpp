#pragma once

#include "gpstep/common.hpp"
#include "gpstep/plants.hpp"

#include <Eigen/SVD>

#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace gpstep {

// Black-box drift f_i : R^{i*n} -> R^n, truth oracle only; the controller
// never sees it.
using DriftFn = std::function<VecX(const VecX&)>;

// State-dependent input-gain map g_h : full state -> R^{n x n}.
using GainMatrixFn = std::function<MatX(const VecX&)>;

// Cascade of h subsystems with n-dimensional blocks:
//   xi_i' = f_i(nu_i) + b_i xi_{i+1}      for i < h
//   xi_h' = f_h(nu_h) + g_h(xi) v
// where nu_i stacks the first i state blocks. The constants b_i are known;
// the drifts f_i are not. The template assumes a constant last-stage gain
// b_h; both case-study plants have a state-dependent one, so the last stage
// generalizes to a known invertible map g_h that the controller cancels
// exactly (g_h = b_h * I recovers the plain form).
struct StrictFeedbackSystem {
  int num_subsystems = 0;  // h >= 1
  int block_dim = 0;       // n >= 1

  std::vector<DriftFn> drift;  // size h; drift[i] takes the first (i+1)*n coords
  std::vector<double> gains;   // b_1..b_{h-1}, all nonzero

  double input_gain_scalar = 1.0;  // b_h when no map is set
  GainMatrixFn input_gain_fn;      // g_h when state-dependent

  Box domain;

  // Per-coordinate hard floors applied during simulation (e.g. the maglev
  // flux state must stay nonnegative for the square root). Unused entries
  // are -inf.
  VecX state_floor;

  // Accept/reject predicate for training-data draws; default accepts all.
  std::function<bool(const VecX&)> sample_filter;

  int state_dim() const { return num_subsystems * block_dim; }

  void validate() const {
    if (num_subsystems < 1) throw ConfigError("StrictFeedbackSystem: need h >= 1");
    if (block_dim < 1) throw ConfigError("StrictFeedbackSystem: need n >= 1");
    if (static_cast<int>(drift.size()) != num_subsystems)
      throw ConfigError("StrictFeedbackSystem: expected one drift oracle per subsystem");
    if (static_cast<int>(gains.size()) != num_subsystems - 1)
      throw ConfigError("StrictFeedbackSystem: expected h-1 interconnection gains");
    for (double b : gains)
      if (b == 0.0) throw ConfigError("StrictFeedbackSystem: gains b_i must be nonzero");
    if (!input_gain_fn && input_gain_scalar == 0.0)
      throw ConfigError("StrictFeedbackSystem: input gain must be nonzero");
    domain.validate();
    if (domain.dim() != state_dim())
      throw ConfigError("StrictFeedbackSystem: domain dimension must equal h*n");
  }

  VecX block(const VecX& state, int i) const {  // i is 1-based
    return state.segment((i - 1) * block_dim, block_dim);
  }

  // nu_i, the first i blocks.
  VecX prefix(const VecX& state, int i) const { return state.head(i * block_dim); }

  MatX input_gain(const VecX& state) const {
    if (input_gain_fn) return input_gain_fn(state);
    return input_gain_scalar * MatX::Identity(block_dim, block_dim);
  }

  // Assembled dynamics; `input` is the physical input v in R^n.
  VecX rhs(const VecX& state, const VecX& input) const {
    const int n = block_dim;
    VecX dx(state_dim());
    for (int i = 1; i <= num_subsystems; ++i) {
      VecX fi = drift[i - 1](prefix(state, i));
      if (i < num_subsystems)
        dx.segment((i - 1) * n, n) = fi + gains[i - 1] * block(state, i + 1);
      else
        dx.segment((i - 1) * n, n) = fi + input_gain(state) * input;
    }
    return dx;
  }

  VecX apply_floor(VecX state) const {
    if (state_floor.size() == state.size()) state = state.cwiseMax(state_floor);
    return state;
  }
};

// Samples the input gain on a uniform grid of cell centers (centers avoid
// measure-zero boundary singularities such as sqrt(x3) at x3 = 0) and
// requires the smallest singular value to stay positive everywhere.
inline void check_input_gain_invertible(const StrictFeedbackSystem& sys, int grid_per_dim = 5) {
  const int d = sys.state_dim();
  long total = 1;
  for (int i = 0; i < d; ++i) total *= grid_per_dim;
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    VecX x(d);
    for (int i = 0; i < d; ++i) {
      const int cell = static_cast<int>(rem % grid_per_dim);
      rem /= grid_per_dim;
      const double w = (sys.domain.upper[i] - sys.domain.lower[i]) / grid_per_dim;
      x[i] = sys.domain.lower[i] + (cell + 0.5) * w;
    }
    const MatX g = sys.input_gain(x);
    const double smin = g.jacobiSvd().singularValues().minCoeff();
    if (!(smin > 0.0))
      throw NumericalError("input gain is singular inside the domain");
  }
}

// Maglev cast onto the cascade template: h = 3, n = 1,
//   f1 = 0,            b1 = 1/M
//   f2 = -M g,         b2 = 1/(2 alpha)
//   f3 = -(2R/alpha)(1 - x1) x3,   g_h = 2 sqrt(x3)
inline StrictFeedbackSystem as_strict_feedback(const MaglevParams& p) {
  p.validate();
  StrictFeedbackSystem sys;
  sys.num_subsystems = 3;
  sys.block_dim = 1;
  sys.drift = {
      [](const VecX&) { return VecX::Zero(1); },
      [p](const VecX&) { return VecX::Constant(1, -p.mass * p.gravity); },
      [p](const VecX& nu) {
        return VecX::Constant(
            1, -(2.0 * p.resistance / p.coil_alpha) * (1.0 - nu[0]) * nu[2]);
      },
  };
  sys.gains = {1.0 / p.mass, 1.0 / (2.0 * p.coil_alpha)};
  sys.input_gain_fn = [](const VecX& state) {
    return MatX::Constant(1, 1, 2.0 * std::sqrt(std::max(state[2], 0.0)));
  };
  sys.domain.lower = Eigen::Vector3d(0.0, -6.0, 0.0);
  sys.domain.upper = Eigen::Vector3d(4.0, 6.0, 18.0);
  sys.state_floor = VecX::Constant(3, -std::numeric_limits<double>::infinity());
  sys.state_floor[2] = 1e-9;  // keep sqrt(x3) real and g_h invertible
  sys.sample_filter = [](const VecX& x) { return x[2] >= 1e-6; };
  sys.validate();
  return sys;
}

// Two-link manipulator cast: h = 2, n = 2,
//   f1 = 0,  b1 = 1
//   f2 = M^-1 (-H - c),  g_h = M^-1
inline StrictFeedbackSystem as_strict_feedback(const TwoLinkParams& p) {
  p.validate();
  StrictFeedbackSystem sys;
  sys.num_subsystems = 2;
  sys.block_dim = 2;
  sys.drift = {
      [](const VecX&) { return VecX::Zero(2); },
      [p](const VecX& nu) {
        const Eigen::Vector2d q = nu.head<2>();
        const Eigen::Vector2d dq = nu.segment<2>(2);
        const Eigen::Vector2d rhs2 = -twolink_velocity_terms(p, q, dq) - twolink_gravity_terms(p, q);
        return VecX(twolink_mass_matrix_inverse(p, q[1]) * rhs2);
      },
  };
  sys.gains = {1.0};
  sys.input_gain_fn = [p](const VecX& state) {
    return MatX(twolink_mass_matrix_inverse(p, state[1]));
  };
  sys.domain.lower = Eigen::Vector4d(-3.0, -3.0, -0.1, -0.1);
  sys.domain.upper = Eigen::Vector4d(3.0, 3.0, 0.1, 0.1);
  sys.validate();
  return sys;
}

}  // namespace gpstep
