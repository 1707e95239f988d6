#pragma once

#include "gpstep/common.hpp"

#include <cmath>

namespace gpstep {

// Magnetic levitation plant. State: [displacement, momentum, squared flux
// linkage]; input: coil voltage. The benchmark leaves the physical
// constants unspecified; these defaults are repo-chosen (and overridable
// through the run config) so that the reference simulation scenario settles
// strictly inside the benchmark state box: the open-loop force balance pins
// the equilibrium flux at 2*alpha*M*g, and the displacement equilibrium
// under a constant reference scales with 1/(M * lambda_h).
struct MaglevParams {
  double mass = 0.45;       // M, ball mass [kg]
  double gravity = 9.81;    // g [m/s^2]
  double resistance = 0.5;  // R, coil resistance [ohm]
  double coil_alpha = 0.25; // alpha, coil-turn constant, > 0

  void validate() const {
    if (mass <= 0 || gravity <= 0 || resistance <= 0 || coil_alpha <= 0)
      throw ConfigError("MaglevParams: all parameters must be strictly positive");
  }
};

//   x1' = x2 / M
//   x2' = x3 / (2 alpha) - M g
//   x3' = -(2R/alpha) (1 - x1) x3 + 2 sqrt(x3) v
inline Eigen::Vector3d maglev_rhs(const MaglevParams& p, const Eigen::Vector3d& state,
                                  double voltage) {
  if (state[2] < 0.0)
    throw std::domain_error("maglev_rhs: flux-linkage state must be nonnegative");
  Eigen::Vector3d dx;
  dx[0] = state[1] / p.mass;
  dx[1] = state[2] / (2.0 * p.coil_alpha) - p.mass * p.gravity;
  dx[2] = -(2.0 * p.resistance / p.coil_alpha) * (1.0 - state[0]) * state[2] +
          2.0 * std::sqrt(state[2]) * voltage;
  return dx;
}

// Planar two-link manipulator with equal link masses/lengths. State:
// [theta1, theta2, dtheta1, dtheta2]; input: joint torques.
struct TwoLinkParams {
  double link_mass = 1.0;    // m [kg]
  double link_length = 1.0;  // l [m]
  double gravity = 9.81;     // a_g [m/s^2]

  void validate() const {
    if (link_mass <= 0 || link_length <= 0 || gravity <= 0)
      throw ConfigError("TwoLinkParams: all parameters must be strictly positive");
  }
};

inline Eigen::Matrix2d twolink_mass_matrix(const TwoLinkParams& p, double theta2) {
  const double ml2 = p.link_mass * p.link_length * p.link_length;
  const double c2 = std::cos(theta2);
  Eigen::Matrix2d m;
  m << ml2 * (5.0 / 3.0 + c2), ml2 * (1.0 / 3.0 + 0.5 * c2),
       ml2 * (1.0 / 3.0 + 0.5 * c2), ml2 / 3.0;
  return m;
}

// Velocity-product terms H(q, dq); both entries vanish with zero velocity.
inline Eigen::Vector2d twolink_velocity_terms(const TwoLinkParams& p, const Eigen::Vector2d& q,
                                              const Eigen::Vector2d& dq) {
  const double ml2 = p.link_mass * p.link_length * p.link_length;
  const double s2 = std::sin(q[1]);
  Eigen::Vector2d h;
  h[0] = ml2 * s2 * (-0.5 * dq[1] * dq[1] - dq[0] * dq[1]);
  h[1] = ml2 * s2 * (0.5 * dq[0] * dq[0]);
  return h;
}

inline Eigen::Vector2d twolink_gravity_terms(const TwoLinkParams& p, const Eigen::Vector2d& q) {
  const double mgl = p.link_mass * p.gravity * p.link_length;
  Eigen::Vector2d c;
  c[0] = mgl * (1.5 * std::cos(q[0]) + 0.5 * std::cos(q[0] + q[1]));
  c[1] = mgl * 0.5 * std::cos(q[0] + q[1]);
  return c;
}

//   q'  = dq
//   dq' = M(q)^-1 [-H(q,dq) - c(q)] + M(q)^-1 tau
inline Eigen::Vector4d twolink_rhs(const TwoLinkParams& p, const Eigen::Vector4d& state,
                                   const Eigen::Vector2d& torque) {
  const Eigen::Vector2d q = state.head<2>();
  const Eigen::Vector2d dq = state.tail<2>();
  const Eigen::Matrix2d m = twolink_mass_matrix(p, q[1]);
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  if (std::abs(det) < 1e-9 * m.cwiseAbs().maxCoeff())
    throw NumericalError("twolink_rhs: mass matrix numerically singular");
  const Eigen::Vector2d rhs2 = -twolink_velocity_terms(p, q, dq) - twolink_gravity_terms(p, q) + torque;
  Eigen::Matrix2d minv;
  minv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
  minv /= det;
  Eigen::Vector4d dx;
  dx.head<2>() = dq;
  dx.tail<2>() = minv * rhs2;
  return dx;
}

inline Eigen::Matrix2d twolink_mass_matrix_inverse(const TwoLinkParams& p, double theta2) {
  const Eigen::Matrix2d m = twolink_mass_matrix(p, theta2);
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  if (std::abs(det) < 1e-9 * m.cwiseAbs().maxCoeff())
    throw NumericalError("twolink_mass_matrix_inverse: mass matrix numerically singular");
  Eigen::Matrix2d minv;
  minv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
  return minv / det;
}

}  // namespace gpstep
