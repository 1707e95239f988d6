#pragma once

#include "gpstep/backstepping.hpp"
#include "gpstep/error_bounds.hpp"
#include "gpstep/trajectory.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace gpstep {

// Incremental practical-stability certificate for the closed loop. With the
// transformed coordinates zeta = phi(xi) and the distance
// d(x, x') = |phi(x) - phi(x')|_2, any two trajectories satisfy (with the
// bound's probability)
//
//   d(t) <= 6 e^{-k t} d(0)^2 + (3/(e k)) sup|du|^2 + c
//
// where k is the slowest per-subsystem decay constant, c = 3 c~/(e k), and
// c~ collects the squared model-error products.
struct IspsCertificate {
  VecX k_per_subsystem;     // k_1..k_h
  double decay_rate = 0.0;  // k = min_k
  double c_tilde = 0.0;
  double residual = 0.0;    // c = 3 c~ / (e k)
  double probability = 1.0;

  double beta(double r, double s) const { return 6.0 * std::exp(-decay_rate * s) * r * r; }
  double gamma(double r) const { return 3.0 * r * r / (M_E * decay_rate); }
};

// Decay constants from the gain conditions:
//   k_1 = 2 lambda_1 - 2
//   k_i = 2 lambda_i - 2 - 2 sum_j L_{psi_{i-1} xi_j}     (1 < i < h)
//   k_h = 2 lambda_h - 3 - 2 sum_j L_{psi_{h-1} xi_j}
// and the Lyapunov offset
//   c~ = 2 sum_k |eta_k|^2 |rho_bar_k|^2
//        + 2 sum_{k=2..h} sum_{j<k} L_{psi_{k-1} xi_j} |eta_j|^2 |rho_bar_j|^2.
inline IspsCertificate build_certificate(const std::vector<double>& lambdas, const MatX& lipschitz,
                                         const std::vector<ErrorBound>& bounds) {
  const int h = static_cast<int>(lambdas.size());
  if (h < 1) throw ConfigError("build_certificate: need at least one gain");
  if (static_cast<int>(bounds.size()) != h)
    throw ConfigError("build_certificate: one error bound per subsystem required");
  verify_gain_conditions(lambdas, lipschitz, h);
  for (const auto& bd : bounds) bd.validate();

  IspsCertificate cert;
  cert.k_per_subsystem.resize(h);
  for (int i = 1; i <= h; ++i) {
    const double lsum = i >= 2 ? lipschitz.row(i - 2).head(i - 1).sum() : 0.0;
    if (i == h)
      cert.k_per_subsystem[i - 1] = 2.0 * lambdas[i - 1] - 3.0 - 2.0 * lsum;
    else if (i == 1)
      cert.k_per_subsystem[0] = 2.0 * lambdas[0] - 2.0;
    else
      cert.k_per_subsystem[i - 1] = 2.0 * lambdas[i - 1] - 2.0 - 2.0 * lsum;
  }
  cert.decay_rate = cert.k_per_subsystem.minCoeff();
  if (!(cert.decay_rate > 0.0))
    throw NumericalError("build_certificate: nonpositive decay constant");

  double ct = 0.0;
  for (int k = 1; k <= h; ++k) {
    const double p = bounds[k - 1].product;
    ct += 2.0 * p * p;
  }
  for (int k = 2; k <= h; ++k)
    for (int j = 1; j <= k - 1; ++j) {
      const double p = bounds[j - 1].product;
      ct += 2.0 * lipschitz(k - 2, j - 1) * p * p;
    }
  cert.c_tilde = ct;
  cert.residual = 3.0 * ct / (M_E * cert.decay_rate);

  cert.probability = 1.0;
  for (const auto& bd : bounds) cert.probability = std::min(cert.probability, 1.0 - bd.epsilon);
  return cert;
}

// d(x, x') = |phi(x) - phi(x')|_2. The proof's Lyapunov chain is Euclidean,
// so the metric is too.
inline double closeness(const BacksteppingController& ctrl, const VecX& x, const VecX& x_other) {
  return (transform(ctrl, x) - transform(ctrl, x_other)).norm();
}

// Right-hand side of the trajectory-closeness bound at time t.
inline double closeness_bound(const IspsCertificate& cert, double d0, double delta_u_sup,
                              double t) {
  if (d0 < 0 || delta_u_sup < 0 || t < 0)
    throw ConfigError("closeness_bound: arguments must be nonnegative");
  return cert.beta(d0, t) + cert.gamma(delta_u_sup) + cert.residual;
}

struct BoundReport {
  long violations = 0;
  double max_violation = 0.0;  // max over the grid of closeness - bound
  std::optional<double> first_violation_time;
  double final_closeness = 0.0;
  double initial_closeness = 0.0;
  double delta_u_sup = 0.0;
  std::vector<double> times;
  std::vector<double> closeness_series;
  std::vector<double> bound_series;
};

// Evaluates closeness and its certified bound along a trajectory pair.
// Violations are data, not errors.
inline BoundReport verify_bound(const IspsCertificate& cert, const BacksteppingController& ctrl,
                                const TrajectoryPair& pair) {
  pair.validate();
  if (pair.size() == 0) throw ConfigError("verify_bound: empty trajectory pair");

  BoundReport rep;
  const std::size_t m = pair.size();
  rep.times = pair.times();
  rep.closeness_series.resize(m);
  rep.bound_series.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    double du = inf_norm(VecX(pair.first.u_hats[i] - pair.second.u_hats[i]));
    rep.delta_u_sup = std::max(rep.delta_u_sup, du);
  }
  const double d0 = closeness(ctrl, pair.first.states[0], pair.second.states[0]);
  rep.initial_closeness = d0;
  rep.max_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    const double d = closeness(ctrl, pair.first.states[i], pair.second.states[i]);
    const double bd = closeness_bound(cert, d0, rep.delta_u_sup, rep.times[i]);
    rep.closeness_series[i] = d;
    rep.bound_series[i] = bd;
    const double gap = d - bd;
    rep.max_violation = std::max(rep.max_violation, gap);
    if (gap > 0) {
      ++rep.violations;
      if (!rep.first_violation_time) rep.first_violation_time = rep.times[i];
    }
  }
  rep.final_closeness = rep.closeness_series.back();
  return rep;
}

struct ResidualSeries {
  std::vector<double> times;      // interior grid points
  std::vector<double> residual;   // r(t) = V' + k V - |du|^2 - c~
  std::vector<double> lyapunov;   // V(t) on the same points
  double tolerance_scale = 0.0;   // grid-step-squared scale of the V' estimate
};

// Lyapunov-inequality residual along a pair: V(t) = |dz(t)|^2 with V'
// obtained by centered differences on the simulation grid. Nonpositive
// values (within the finite-difference tolerance) confirm the certificate.
inline ResidualSeries lyapunov_residual(const IspsCertificate& cert,
                                        const BacksteppingController& ctrl,
                                        const TrajectoryPair& pair) {
  pair.validate();
  const std::size_t m = pair.size();
  if (m < 3) throw ConfigError("lyapunov_residual: need at least three grid points");

  std::vector<double> v(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double d = closeness(ctrl, pair.first.states[i], pair.second.states[i]);
    v[i] = d * d;
  }
  ResidualSeries out;
  out.times.reserve(m - 2);
  out.residual.reserve(m - 2);
  out.lyapunov.reserve(m - 2);
  double max_step = 0.0;
  for (std::size_t i = 1; i + 1 < m; ++i) {
    const double dt_total = pair.times()[i + 1] - pair.times()[i - 1];
    max_step = std::max(max_step, dt_total / 2.0);
    const double vdot = (v[i + 1] - v[i - 1]) / dt_total;
    const VecX du = pair.first.u_hats[i] - pair.second.u_hats[i];
    out.times.push_back(pair.times()[i]);
    out.lyapunov.push_back(v[i]);
    out.residual.push_back(vdot + cert.decay_rate * v[i] - du.squaredNorm() - cert.c_tilde);
  }
  out.tolerance_scale = max_step * max_step;
  return out;
}

}  // namespace gpstep
