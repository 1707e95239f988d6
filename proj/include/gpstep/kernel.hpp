#pragma once

#include "gpstep/common.hpp"

#include <cmath>

namespace gpstep {

// Squared-exponential kernel with per-coordinate length scales:
//   k(x, y) = rho_k^2 exp( sum_j (x_j - y_j)^2 / (-2 l_j^2) )
// rho_k is the signal standard deviation, so k(x, x) = rho_k^2.
struct SeKernelParams {
  double signal_std = 1.0;
  VecX length_scales;

  int input_dim() const { return static_cast<int>(length_scales.size()); }

  void validate() const {
    if (!(signal_std > 0.0)) throw ConfigError("SeKernelParams: signal_std must be positive");
    if (length_scales.size() == 0)
      throw ConfigError("SeKernelParams: at least one length scale required");
    for (int i = 0; i < length_scales.size(); ++i)
      if (!(length_scales[i] > 0.0))
        throw ConfigError("SeKernelParams: length scale " + std::to_string(i + 1) +
                          " must be positive");
  }

  bool operator==(const SeKernelParams& o) const {
    return signal_std == o.signal_std && length_scales.size() == o.length_scales.size() &&
           length_scales == o.length_scales;
  }
};

inline double kernel_eval(const SeKernelParams& p, const VecX& x, const VecX& y) {
  if (x.size() != y.size() || x.size() != p.length_scales.size())
    throw ConfigError("kernel_eval: dimension mismatch");
  double expo = 0.0;
  for (int j = 0; j < x.size(); ++j) {
    const double d = (x[j] - y[j]) / p.length_scales[j];
    expo -= 0.5 * d * d;
  }
  return p.signal_std * p.signal_std * std::exp(expo);
}

// d k(x, q) / d q, evaluated coordinate-wise: k * (x_j - q_j) / l_j^2.
inline VecX kernel_grad_query(const SeKernelParams& p, const VecX& x, const VecX& q) {
  const double k = kernel_eval(p, x, q);
  VecX g(q.size());
  for (int j = 0; j < q.size(); ++j)
    g[j] = k * (x[j] - q[j]) / (p.length_scales[j] * p.length_scales[j]);
  return g;
}

// d^2 k(x, q) / d q d q:
//   k * [ (x_a - q_a)(x_b - q_b) / (l_a^2 l_b^2) - delta_ab / l_a^2 ]
inline MatX kernel_hess_query(const SeKernelParams& p, const VecX& x, const VecX& q) {
  const double k = kernel_eval(p, x, q);
  const int d = static_cast<int>(q.size());
  MatX h(d, d);
  for (int a = 0; a < d; ++a) {
    const double la2 = p.length_scales[a] * p.length_scales[a];
    for (int b = 0; b < d; ++b) {
      const double lb2 = p.length_scales[b] * p.length_scales[b];
      h(a, b) = k * (x[a] - q[a]) * (x[b] - q[b]) / (la2 * lb2);
      if (a == b) h(a, b) -= k / la2;
    }
  }
  return h;
}

// k_bar: kernel between each row of `inputs` and the query.
inline VecX kernel_vector(const SeKernelParams& p, const MatX& inputs, const VecX& q) {
  VecX kbar(inputs.rows());
  for (int i = 0; i < inputs.rows(); ++i) kbar[i] = kernel_eval(p, inputs.row(i), q);
  return kbar;
}

inline MatX gram_matrix(const SeKernelParams& p, const MatX& inputs) {
  const int n = static_cast<int>(inputs.rows());
  MatX k(n, n);
  for (int i = 0; i < n; ++i) {
    k(i, i) = p.signal_std * p.signal_std;
    for (int j = i + 1; j < n; ++j) {
      k(i, j) = kernel_eval(p, inputs.row(i), inputs.row(j));
      k(j, i) = k(i, j);
    }
  }
  return k;
}

// Supremum of the kernel-gradient infinity norm over all point pairs. Along
// coordinate j the scalar profile rho^2 t e^{-t^2/2} / l_j (t = distance in
// units of l_j) peaks at t = 1 with value rho^2 e^{-1/2} / l_j.
inline double kernel_grad_sup_norm(const SeKernelParams& p) {
  p.validate();
  return p.signal_std * p.signal_std * std::exp(-0.5) / p.length_scales.minCoeff();
}

}  // namespace gpstep
