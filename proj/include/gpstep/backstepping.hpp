#pragma once

#include "gpstep/mean_model.hpp"
#include "gpstep/strict_feedback.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <vector>

namespace gpstep {

enum class DerivativeMode { Analytic, FiniteDifference };

inline std::string to_string(DerivativeMode m) {
  return m == DerivativeMode::Analytic ? "analytic" : "finite-difference";
}

// State-feedback backstepping controller over learned drift estimates. For
// stages i = 1..h (conventions psi_{-1} = psi_0 = b_0 = xi_0 = 0):
//
//   r_i  = mu_i + b_{i-1}(xi_{i-1} - psi_{i-2}) + lambda_i(xi_i - psi_{i-1})
//          - sum_{j<i} (d psi_{i-1} / d xi_j)(mu_j + b_j xi_{j+1})
//   psi_i = -r_i / b_i                      for i < h (virtual controls)
//   v     = g_h(xi)^-1 (-r_h + u_hat)       applied input
//
// g_h^-1 cancels the physical input gain exactly, so the closed loop matches
// the constant-gain template the stability analysis assumes. The controller
// only ever uses known quantities: the gains b_i, g_h, and the model means.
struct BacksteppingController {
  int h = 0;  // subsystem count
  int n = 0;  // block dimension

  std::vector<ModelPtr> models;  // size h
  std::vector<double> lambdas;   // size h
  std::vector<double> b;         // b_1..b_{h-1}

  double input_gain_scalar = 1.0;
  GainMatrixFn input_gain_fn;  // g_h when state-dependent

  MatX lipschitz;  // (h-1)x(h-1) lower triangular, row j: L_{psi_j xi_k}
  double safety = 1.2;
  DerivativeMode mode = DerivativeMode::Analytic;
  Box domain;

  std::shared_ptr<std::atomic<long>> extrapolation_count =
      std::make_shared<std::atomic<long>>(0);

  MatX input_gain(const VecX& state) const {
    if (input_gain_fn) return input_gain_fn(state);
    return input_gain_scalar * MatX::Identity(n, n);
  }

  void validate() const {
    if (h < 1 || n < 1) throw ConfigError("BacksteppingController: invalid dimensions");
    if (static_cast<int>(models.size()) != h)
      throw ConfigError("BacksteppingController: one model per subsystem required");
    if (static_cast<int>(lambdas.size()) != h)
      throw ConfigError("BacksteppingController: one gain per subsystem required");
    if (static_cast<int>(b.size()) != h - 1)
      throw ConfigError("BacksteppingController: h-1 interconnection gains required");
    for (int i = 0; i < h; ++i)
      if (models[i]->input_dim() != (i + 1) * n || models[i]->output_dim() != n)
        throw ConfigError("BacksteppingController: model dimensions inconsistent at stage " +
                          std::to_string(i + 1));
  }
};

namespace detail {

struct StageEval {
  VecX psi;                // R^n
  MatX jac;                // n x (i*n)
  std::vector<MatX> hess;  // n entries, each (i*n) x (i*n)
};

// Everything the stage recursion reads; decoupled from the controller so gain
// synthesis can evaluate partially-built gain vectors.
struct StageContext {
  const std::vector<ModelPtr>* models;
  const std::vector<double>* lambdas;
  const std::vector<double>* b;
  int n;
  DerivativeMode mode;
  VecX fd_step;  // per state coordinate
};

inline StageEval eval_stage(const StageContext& c, int i, const VecX& prefix, int order);

// r_i as above; prefix holds the first i blocks. Stage values below i are
// evaluated recursively.
inline VecX eval_bracket(const StageContext& c, int i, const VecX& prefix) {
  const int n = c.n;
  const VecX nu_i = prefix.head(i * n);
  VecX r = (*c.models)[i - 1]->mean(nu_i);
  VecX xi_i = prefix.segment((i - 1) * n, n);
  if (i == 1) {
    r += (*c.lambdas)[0] * xi_i;
    return r;
  }
  const StageEval prev = eval_stage(c, i - 1, prefix.head((i - 1) * n), 1);
  const VecX xi_im1 = prefix.segment((i - 2) * n, n);
  VecX psi_im2 = VecX::Zero(n);
  if (i >= 3) psi_im2 = eval_stage(c, i - 2, prefix.head((i - 2) * n), 0).psi;
  r += (*c.b)[i - 2] * (xi_im1 - psi_im2);
  r += (*c.lambdas)[i - 1] * (xi_i - prev.psi);
  for (int j = 1; j <= i - 1; ++j) {
    const VecX mu_j = (*c.models)[j - 1]->mean(prefix.head(j * n));
    const VecX v_j = mu_j + (*c.b)[j - 1] * prefix.segment(j * n, n);
    r -= prev.jac.middleCols((j - 1) * n, n) * v_j;
  }
  return r;
}

inline MatX fd_jacobian(const StageContext& c, int i, const VecX& prefix) {
  const int q = static_cast<int>(prefix.size());
  MatX jac(c.n, q);
  for (int d = 0; d < q; ++d) {
    const double step = c.fd_step[d];
    VecX xp = prefix, xm = prefix;
    xp[d] += step;
    xm[d] -= step;
    const VecX fp = eval_stage(c, i, xp, 0).psi;
    const VecX fm = eval_stage(c, i, xm, 0).psi;
    jac.col(d) = (fp - fm) / (2.0 * step);
  }
  return jac;
}

// order: 0 value, 1 + jacobian, 2 + hessian. Analytic hessians exist only at
// stage 1 (they come straight from the model); that suffices for exact
// jacobians up to stage 2 and hence exact control laws up to h = 3. Deeper
// cascades use finite differences throughout.
inline StageEval eval_stage(const StageContext& c, int i, const VecX& prefix, int order) {
  const int n = c.n;
  StageEval out;
  if (i == 0) {
    out.psi = VecX::Zero(n);
    out.jac = MatX::Zero(n, 0);
    return out;
  }

  const VecX r = eval_bracket(c, i, prefix);
  out.psi = -r / (*c.b)[i - 1];
  if (order == 0) return out;

  if (c.mode == DerivativeMode::FiniteDifference) {
    out.jac = fd_jacobian(c, i, prefix);
    if (order >= 2) {
      // Hessian of each output as finite differences of the jacobian row.
      out.hess.assign(n, MatX::Zero(i * n, i * n));
      for (int d = 0; d < i * n; ++d) {
        const double step = c.fd_step[d];
        VecX xp = prefix, xm = prefix;
        xp[d] += step;
        xm[d] -= step;
        const MatX jp = fd_jacobian(c, i, xp);
        const MatX jm = fd_jacobian(c, i, xm);
        for (int comp = 0; comp < n; ++comp)
          out.hess[comp].col(d) = (jp.row(comp) - jm.row(comp)).transpose() / (2.0 * step);
      }
    }
    return out;
  }

  // Analytic jacobian: differentiate r_i block by block.
  const MatX gmu_i = (*c.models)[i - 1]->mean_jacobian(prefix);
  MatX dr = gmu_i;  // n x (i*n)
  const double lambda_i = (*c.lambdas)[i - 1];
  dr.middleCols((i - 1) * n, n) += lambda_i * MatX::Identity(n, n);

  if (i >= 2) {
    const VecX sub_prefix = prefix.head((i - 1) * n);
    const StageEval prev = eval_stage(c, i - 1, sub_prefix, 2);
    dr.middleCols((i - 2) * n, n) += (*c.b)[i - 2] * MatX::Identity(n, n);
    if (i >= 3) {
      const StageEval prev2 = eval_stage(c, i - 2, prefix.head((i - 2) * n), 1);
      dr.leftCols((i - 2) * n) -= (*c.b)[i - 2] * prev2.jac;
    }
    dr.leftCols((i - 1) * n) -= lambda_i * prev.jac;

    // d/dxi [ sum_j Jpsi_{i-1,j} v_j ] = (Hess psi_{i-1} . v_stack)
    //                                    + sum_j Jpsi_{i-1,j} dv_j/dxi
    VecX v_stack((i - 1) * n);
    for (int j = 1; j <= i - 1; ++j) {
      const VecX mu_j = (*c.models)[j - 1]->mean(prefix.head(j * n));
      v_stack.segment((j - 1) * n, n) = mu_j + (*c.b)[j - 1] * prefix.segment(j * n, n);
    }
    for (int comp = 0; comp < n; ++comp)
      dr.row(comp).head((i - 1) * n) -= (prev.hess[comp] * v_stack).transpose();
    for (int j = 1; j <= i - 1; ++j) {
      const MatX jpsi_j = prev.jac.middleCols((j - 1) * n, n);  // n x n
      const MatX gmu_j = (*c.models)[j - 1]->mean_jacobian(prefix.head(j * n));
      dr.leftCols(j * n) -= jpsi_j * gmu_j;
      dr.middleCols(j * n, n) -= (*c.b)[j - 1] * jpsi_j;
    }
  }
  out.jac = -dr / (*c.b)[i - 1];
  if (order < 2) return out;

  if (i == 1) {
    out.hess = (*c.models)[0]->mean_hessian(prefix);
    for (auto& hcomp : out.hess) hcomp = -hcomp / (*c.b)[0];
    return out;
  }
  throw NumericalError(
      "backstepping: analytic derivatives support cascades up to h = 3; use finite differences");
}

inline StageContext make_context(const BacksteppingController& ctrl) {
  StageContext c;
  c.models = &ctrl.models;
  c.lambdas = &ctrl.lambdas;
  c.b = &ctrl.b;
  c.n = ctrl.n;
  c.mode = ctrl.mode;
  c.fd_step = 1e-5 * ctrl.domain.width();
  return c;
}

}  // namespace detail

// psi_i evaluated at the first i state blocks, i in 1..h-1.
inline VecX virtual_control(const BacksteppingController& ctrl, int i, const VecX& prefix) {
  if (i < 1 || i > ctrl.h - 1) throw ConfigError("virtual_control: stage index out of range");
  if (prefix.size() != i * ctrl.n) throw ConfigError("virtual_control: prefix dimension mismatch");
  if (!ctrl.domain.head(i * ctrl.n).contains(prefix)) ctrl.extrapolation_count->fetch_add(1);
  return detail::eval_stage(detail::make_context(ctrl), i, prefix, 0).psi;
}

inline MatX virtual_control_jacobian(const BacksteppingController& ctrl, int i,
                                     const VecX& prefix) {
  if (i < 1 || i > ctrl.h - 1) throw ConfigError("virtual_control_jacobian: stage index out of range");
  if (prefix.size() != i * ctrl.n)
    throw ConfigError("virtual_control_jacobian: prefix dimension mismatch");
  return detail::eval_stage(detail::make_context(ctrl), i, prefix, 1).jac;
}

// Applied input v for the measured full state and exogenous u_hat.
inline VecX control_law(const BacksteppingController& ctrl, const VecX& state, const VecX& u_hat) {
  if (state.size() != ctrl.h * ctrl.n) throw ConfigError("control_law: state dimension mismatch");
  if (u_hat.size() != ctrl.n) throw ConfigError("control_law: u_hat dimension mismatch");
  if (!ctrl.domain.contains(state)) ctrl.extrapolation_count->fetch_add(1);
  const VecX r = detail::eval_bracket(detail::make_context(ctrl), ctrl.h, state);
  const MatX g = ctrl.input_gain(state);
  if (ctrl.n == 1) {
    if (g(0, 0) == 0.0) throw NumericalError("control_law: singular input gain");
    return (u_hat - r) / g(0, 0);
  }
  const Eigen::FullPivLU<MatX> lu(g);
  if (!lu.isInvertible()) throw NumericalError("control_law: singular input gain");
  return lu.solve(u_hat - r);
}

// zeta = phi(xi): first block unchanged, then xi_k - psi_{k-1}.
inline VecX transform(const BacksteppingController& ctrl, const VecX& state) {
  if (state.size() != ctrl.h * ctrl.n) throw ConfigError("transform: state dimension mismatch");
  const auto c = detail::make_context(ctrl);
  VecX zeta = state;
  for (int k = 2; k <= ctrl.h; ++k)
    zeta.segment((k - 1) * ctrl.n, ctrl.n) -=
        detail::eval_stage(c, k - 1, state.head((k - 1) * ctrl.n), 0).psi;
  return zeta;
}

// Inverse of the transformation, reconstructing xi block by block.
inline VecX untransform(const BacksteppingController& ctrl, const VecX& zeta) {
  if (zeta.size() != ctrl.h * ctrl.n) throw ConfigError("untransform: dimension mismatch");
  const auto c = detail::make_context(ctrl);
  VecX state = zeta;
  for (int k = 2; k <= ctrl.h; ++k)
    state.segment((k - 1) * ctrl.n, ctrl.n) +=
        detail::eval_stage(c, k - 1, state.head((k - 1) * ctrl.n), 0).psi;
  return state;
}

namespace detail {

// Row j of the Lipschitz matrix: sup-norm of each block of d psi_j / d xi
// over a uniform grid on the first j blocks, inflated by the safety factor.
inline VecX lipschitz_row(const StageContext& c, int j, const Box& domain, int grid_per_dim,
                          double safety, long max_grid_total) {
  const int n = c.n;
  VecX row = VecX::Zero(j);
  detail::for_each_grid_point(domain.head(j * n), grid_per_dim, max_grid_total,
                              [&](const VecX& x) {
                                const MatX jac = eval_stage(c, j, x, 1).jac;
                                for (int k = 0; k < j; ++k)
                                  row[k] = std::max(
                                      row[k], induced_inf_norm(jac.middleCols(k * n, n)));
                              });
  return safety * row;
}

}  // namespace detail

// L_{psi_j xi_k} for j in 1..h-1, k in 1..j. Grid maxima underestimate the
// supremum, hence the safety inflation (default 1.2).
inline MatX estimate_lipschitz(const BacksteppingController& ctrl, const Box& domain,
                               int grid_per_dim, double safety, long max_grid_total = 20000) {
  if (grid_per_dim < 3) throw ConfigError("estimate_lipschitz: need grid_per_dim >= 3");
  auto c = detail::make_context(ctrl);
  MatX lip = MatX::Zero(std::max(ctrl.h - 1, 0), std::max(ctrl.h - 1, 0));
  for (int j = 1; j <= ctrl.h - 1; ++j)
    lip.row(j - 1).head(j) =
        detail::lipschitz_row(c, j, domain, grid_per_dim, safety, max_grid_total).transpose();
  return lip;
}

// Gains satisfying the stability conditions with the given margin:
//   lambda_1 = 1 + m,  lambda_i = 1 + sum_k L_{psi_{i-1} xi_k} + m,
//   lambda_h = 1.5 + sum_k L_{psi_{h-1} xi_k} + m
inline std::vector<double> select_gains(const MatX& lipschitz, double margin, int h) {
  if (!(margin > 0.0)) throw ConfigError("select_gains: margin must be positive");
  if (h < 1) throw ConfigError("select_gains: h must be positive");
  if (lipschitz.rows() < h - 1 || lipschitz.cols() < h - 1)
    throw ConfigError("select_gains: Lipschitz matrix too small");
  if (h > 1 && lipschitz.size() > 0 && lipschitz.minCoeff() < 0)
    throw ConfigError("select_gains: Lipschitz entries must be nonnegative");
  std::vector<double> lambdas(h);
  if (h == 1) {
    lambdas[0] = 1.5 + margin;
    return lambdas;
  }
  lambdas[0] = 1.0 + margin;
  for (int i = 2; i <= h; ++i) {
    const double lsum = lipschitz.row(i - 2).head(i - 1).sum();
    lambdas[i - 1] = (i < h ? 1.0 : 1.5) + lsum + margin;
  }
  return lambdas;
}

// Verifies the strict gain inequalities; throws naming the failing one.
inline void verify_gain_conditions(const std::vector<double>& lambdas, const MatX& lipschitz,
                                   int h) {
  if (static_cast<int>(lambdas.size()) != h)
    throw ConfigError("verify_gain_conditions: gain count mismatch");
  if (h == 1) {
    if (!(lambdas[0] > 1.5))
      throw NumericalError("gain condition violated: lambda_1 > 1.5 (single stage)");
    return;
  }
  if (!(lambdas[0] > 1.0)) throw NumericalError("gain condition violated: lambda_1 > 1");
  for (int i = 2; i <= h; ++i) {
    const double lsum = lipschitz.row(i - 2).head(i - 1).sum();
    const double floor = (i < h ? 1.0 : 1.5) + lsum;
    if (!(lambdas[i - 1] > floor))
      throw NumericalError("gain condition violated: lambda_" + std::to_string(i) + " > " +
                           std::to_string(floor));
  }
}

struct SynthesisOptions {
  double margin = 3.0;
  std::vector<double> margins;  // per-stage override of `margin`, may be empty
  double safety = 1.2;
  int lipschitz_grid = 25;
  long max_grid_total = 20000;
  DerivativeMode mode = DerivativeMode::Analytic;
  std::vector<double> fixed_gains;  // prefix of lambdas to honor, may be empty
  int max_passes = 10;

  double margin_for(int stage) const {  // 1-based
    if (margins.empty()) return margin;
    if (stage <= static_cast<int>(margins.size())) return margins[stage - 1];
    return margins.back();
  }
};

// Stage-by-stage synthesis. L_{psi_{i-1}} depends only on lambda_1..lambda_{i-1},
// so a forward sweep settles the gains; extra passes re-verify the fixed
// point and guard against a prefix of user-pinned gains that violates the
// conditions.
inline BacksteppingController synthesize_controller(const std::vector<ModelPtr>& models,
                                                    const StrictFeedbackSystem& sys,
                                                    const SynthesisOptions& opts = {}) {
  sys.validate();
  const int h = sys.num_subsystems;
  const int n = sys.block_dim;
  if (static_cast<int>(models.size()) != h)
    throw ConfigError("synthesize_controller: one model per subsystem required");
  if (static_cast<int>(opts.fixed_gains.size()) > h)
    throw ConfigError("synthesize_controller: more fixed gains than subsystems");
  for (int i = 1; i <= h; ++i)
    if (!(opts.margin_for(i) > 0.0))
      throw ConfigError("synthesize_controller: margins must be positive");

  BacksteppingController ctrl;
  ctrl.h = h;
  ctrl.n = n;
  ctrl.models = models;
  ctrl.b = sys.gains;
  ctrl.input_gain_scalar = sys.input_gain_scalar;
  ctrl.input_gain_fn = sys.input_gain_fn;
  ctrl.safety = opts.safety;
  ctrl.domain = sys.domain;
  ctrl.mode = opts.mode;
  if (opts.mode == DerivativeMode::Analytic && h > 3) ctrl.mode = DerivativeMode::FiniteDifference;

  ctrl.lambdas.assign(h, 0.0);
  ctrl.lipschitz = MatX::Zero(std::max(h - 1, 0), std::max(h - 1, 0));
  const auto fixed = [&](int i) { return i <= static_cast<int>(opts.fixed_gains.size()); };
  for (int i = 1; i <= h; ++i)
    if (fixed(i)) ctrl.lambdas[i - 1] = opts.fixed_gains[i - 1];

  bool settled = false;
  for (int pass = 0; pass < opts.max_passes && !settled; ++pass) {
    settled = true;
    auto c = detail::make_context(ctrl);
    for (int i = 1; i <= h; ++i) {
      if (i >= 2)
        ctrl.lipschitz.row(i - 2).head(i - 1) =
            detail::lipschitz_row(c, i - 1, sys.domain, opts.lipschitz_grid, opts.safety,
                                  opts.max_grid_total)
                .transpose();
      if (fixed(i)) continue;
      double floor;
      if (h == 1)
        floor = 1.5;
      else if (i == 1)
        floor = 1.0;
      else
        floor = (i < h ? 1.0 : 1.5) + ctrl.lipschitz.row(i - 2).head(i - 1).sum();
      const double next = floor + opts.margin_for(i);
      if (std::abs(next - ctrl.lambdas[i - 1]) > 1e-12) {
        ctrl.lambdas[i - 1] = next;
        settled = false;
      }
    }
  }
  if (!settled)
    throw NumericalError("synthesize_controller: gain sweep did not settle within pass limit");
  verify_gain_conditions(ctrl.lambdas, ctrl.lipschitz, h);
  ctrl.validate();
  return ctrl;
}

}  // namespace gpstep
