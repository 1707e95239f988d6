#pragma once

#include "gpstep/common.hpp"

#include <deque>
#include <functional>

namespace gpstep {

// Objective callback: returns f(x) and writes the gradient.
using ObjectiveFn = std::function<double(const VecX&, VecX&)>;

struct LbfgsOptions {
  int max_iterations = 200;
  int memory = 10;
  double gradient_tol = 1e-7;   // on the projected gradient, inf-norm
  double step_tol = 1e-12;
  int max_backtracks = 40;
};

struct LbfgsResult {
  VecX x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Box-constrained minimization: limited-memory BFGS two-loop direction with
// gradient projection and Armijo backtracking on projected iterates. Adequate
// for smooth low-dimensional marginal-likelihood surfaces; fully
// deterministic given the starting point.
inline LbfgsResult lbfgs_minimize_box(const ObjectiveFn& fn, const VecX& x0, const VecX& lower,
                                      const VecX& upper, const LbfgsOptions& opts = {}) {
  const auto project = [&](const VecX& x) -> VecX { return x.cwiseMax(lower).cwiseMin(upper); };

  LbfgsResult res;
  VecX x = project(x0);
  VecX g(x.size());
  double f = fn(x, g);

  std::deque<VecX> s_hist, y_hist;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter + 1;
    const VecX pg = x - project(x - g);  // projected gradient
    if (inf_norm(pg) < opts.gradient_tol) {
      res.converged = true;
      break;
    }

    // Two-loop recursion.
    VecX d = -g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha[i] = rho * s_hist[i].dot(d);
      d -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const VecX& s = s_hist.back();
      const VecX& y = y_hist.back();
      d *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho * y_hist[i].dot(d);
      d += (alpha[i] - beta) * s_hist[i];
    }
    if (d.dot(g) > -1e-14 * d.norm() * g.norm()) d = -g;  // not a descent direction

    // Armijo backtracking on projected points.
    double step = 1.0;
    VecX x_new;
    VecX g_new(x.size());
    double f_new = f;
    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      x_new = project(x + step * d);
      const VecX dx = x_new - x;
      if (inf_norm(dx) < opts.step_tol) break;
      f_new = fn(x_new, g_new);
      if (f_new <= f + 1e-4 * g.dot(dx)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Steepest-descent rescue with fresh memory.
      s_hist.clear();
      y_hist.clear();
      step = 1.0 / std::max(1.0, inf_norm(g));
      bool rescued = false;
      for (int bt = 0; bt < opts.max_backtracks; ++bt) {
        x_new = project(x - step * g);
        if (inf_norm(x_new - x) < opts.step_tol) break;
        f_new = fn(x_new, g_new);
        if (f_new < f) {
          rescued = true;
          break;
        }
        step *= 0.5;
      }
      if (!rescued) break;  // no further progress possible
    }

    const VecX s = x_new - x;
    const VecX y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    x = x_new;
    g = g_new;
    f = f_new;
  }

  res.x = x;
  res.value = f;
  return res;
}

}  // namespace gpstep
