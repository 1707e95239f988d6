#pragma once

#include "gpstep/kernel.hpp"
#include "gpstep/lbfgs.hpp"

#include <Eigen/Cholesky>

#include <atomic>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace gpstep {

// Training data for one subsystem: N input points in R^q with N targets in
// R^n, plus the measurement-noise level.
struct Dataset {
  MatX inputs;   // N x q
  MatX targets;  // N x n
  double noise_std = 0.01;

  int size() const { return static_cast<int>(inputs.rows()); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
  int output_dim() const { return static_cast<int>(targets.cols()); }

  void validate() const {
    if (inputs.rows() != targets.rows())
      throw ConfigError("Dataset: inputs and targets must have equal row counts");
    if (!(noise_std > 0.0)) throw ConfigError("Dataset: noise_std must be positive");
    if (!inputs.allFinite() || !targets.allFinite())
      throw ConfigError("Dataset: non-finite entries");
  }
};

// Exact GP posterior for one subsystem, one independent GP per output
// dimension. The Gram factorization (K + rho_f^2 I = L L^T) and the weight
// vectors alpha = (K + rho_f^2 I)^-1 y are cached at fit time; mean queries
// are O(N), variance queries O(N^2). Immutable after fit.
struct GpModel {
  Dataset data;
  std::vector<SeKernelParams> kernels;          // size n
  std::vector<Eigen::LLT<MatX>> factorizations;  // size n (empty when N = 0)
  std::vector<MatX> grams;                       // noise-free K per dimension
  MatX alpha;                                    // N x n

  std::optional<Box> domain;  // for extrapolation accounting only
  std::shared_ptr<std::atomic<long>> extrapolation_queries =
      std::make_shared<std::atomic<long>>(0);

  int size() const { return data.size(); }
  int input_dim() const { return data.input_dim(); }
  int output_dim() const { return static_cast<int>(kernels.size()); }

  // Solves (K_j + rho_f^2 I) z = b through the cached factorization, then
  // applies two rounds of iterative refinement with long-double residuals.
  // The large signal-to-noise ratios of the case studies put the system's
  // condition number near 1e10, where a plain double solve leaves the
  // posterior variance dominated by cancellation noise.
  VecX refined_solve(int j, const VecX& b) const {
    const auto& llt = factorizations[j];
    const MatX& gram = grams[j];
    const long double jitter =
        static_cast<long double>(data.noise_std) * static_cast<long double>(data.noise_std);
    VecX z = llt.solve(b);
    for (int round = 0; round < 2; ++round) {
      VecX r(z.size());
      for (int a = 0; a < z.size(); ++a) {
        long double acc = static_cast<long double>(b[a]) - jitter * z[a];
        for (int c = 0; c < z.size(); ++c)
          acc -= static_cast<long double>(gram(a, c)) * static_cast<long double>(z[c]);
        r[a] = static_cast<double>(acc);
      }
      z += llt.solve(r);
    }
    return z;
  }

  void note_query(const VecX& q) const {
    if (domain && !domain->contains(q)) extrapolation_queries->fetch_add(1);
  }

  // mu(q) = k_bar^T alpha per output dimension. Outside the domain the
  // posterior extrapolates toward the zero prior mean; allowed but counted.
  VecX posterior_mean(const VecX& q) const {
    check_query(q);
    note_query(q);
    VecX mu = VecX::Zero(output_dim());
    if (size() == 0) return mu;
    for (int j = 0; j < output_dim(); ++j) {
      const VecX kbar = kernel_vector(kernels[j], data.inputs, q);
      mu[j] = kbar.dot(alpha.col(j));
    }
    return mu;
  }

  // Per-dimension variance k(q,q) - k_bar^T (K + rho_f^2 I)^-1 k_bar,
  // clamped to [0, k(q,q)] against round-off.
  VecX posterior_var(const VecX& q) const {
    check_query(q);
    note_query(q);
    VecX var(output_dim());
    for (int j = 0; j < output_dim(); ++j) {
      const double kqq = kernels[j].signal_std * kernels[j].signal_std;
      if (size() == 0) {
        var[j] = kqq;
        continue;
      }
      const VecX kbar = kernel_vector(kernels[j], data.inputs, q);
      const VecX z = refined_solve(j, kbar);
      long double acc = static_cast<long double>(kqq);
      for (int a = 0; a < kbar.size(); ++a)
        acc -= static_cast<long double>(kbar[a]) * static_cast<long double>(z[a]);
      var[j] = std::clamp(static_cast<double>(acc), 0.0, kqq);
    }
    return var;
  }

  VecX posterior_std(const VecX& q) const { return posterior_var(q).cwiseSqrt(); }

  // Exact Jacobian of the posterior mean, n x q:
  //   d mu_j / d q = sum_m alpha_mj k(x_m, q) (x_m - q) / l^2
  MatX mean_gradient(const VecX& q) const {
    check_query(q);
    MatX jac = MatX::Zero(output_dim(), q.size());
    if (size() == 0) return jac;
    for (int j = 0; j < output_dim(); ++j) {
      const auto& kp = kernels[j];
      for (int m = 0; m < size(); ++m)
        jac.row(j) += alpha(m, j) * kernel_grad_query(kp, data.inputs.row(m), q).transpose();
    }
    return jac;
  }

  // Exact Hessian of the posterior mean per output dimension, each q x q.
  std::vector<MatX> mean_hessian(const VecX& q) const {
    check_query(q);
    std::vector<MatX> hess(output_dim(), MatX::Zero(q.size(), q.size()));
    if (size() == 0) return hess;
    for (int j = 0; j < output_dim(); ++j)
      for (int m = 0; m < size(); ++m)
        hess[j] += alpha(m, j) * kernel_hess_query(kernels[j], data.inputs.row(m), q);
    return hess;
  }

  // y_j^T (K_j + rho_f^2 I)^-1 y_j, reusing the cached weights.
  double quadratic_form(int j) const {
    if (size() == 0) return 0.0;
    return data.targets.col(j).dot(alpha.col(j));
  }

 private:
  void check_query(const VecX& q) const {
    if (q.size() != input_dim() && size() > 0)
      throw ConfigError("GpModel: query dimension mismatch");
    if (size() == 0 && !kernels.empty() && q.size() != kernels[0].input_dim())
      throw ConfigError("GpModel: query dimension mismatch");
  }
};

// Builds the posterior caches. Kernels: one per output dimension, or a
// single one broadcast across dimensions. Identical kernels share one
// factorization.
inline GpModel fit(const Dataset& dataset, std::vector<SeKernelParams> kernels) {
  dataset.validate();
  const int n = dataset.output_dim();
  if (kernels.size() == 1 && n > 1) kernels.resize(n, kernels[0]);
  if (static_cast<int>(kernels.size()) != n)
    throw ConfigError("fit: expected one kernel per output dimension");
  for (const auto& k : kernels) {
    k.validate();
    if (dataset.size() > 0 && k.input_dim() != dataset.input_dim())
      throw ConfigError("fit: kernel length-scale count must match input dimension");
  }

  GpModel model;
  model.data = dataset;
  model.kernels = kernels;
  const int N = dataset.size();
  model.alpha = MatX::Zero(N, n);
  if (N == 0) return model;

  const double jitter = dataset.noise_std * dataset.noise_std;
  model.factorizations.resize(n);
  model.grams.resize(n);
  for (int j = 0; j < n; ++j) {
    int shared = -1;
    for (int i = 0; i < j; ++i)
      if (kernels[i] == kernels[j]) {
        shared = i;
        break;
      }
    if (shared >= 0) {
      model.factorizations[j] = model.factorizations[shared];
      model.grams[j] = model.grams[shared];
    } else {
      model.grams[j] = gram_matrix(kernels[j], dataset.inputs);
      MatX shifted = model.grams[j];
      shifted.diagonal().array() += jitter;
      model.factorizations[j].compute(shifted);
      if (model.factorizations[j].info() != Eigen::Success)
        throw NumericalError("fit: Cholesky factorization failed for output dimension " +
                             std::to_string(j + 1) + " (non-finite data?)");
    }
    model.alpha.col(j) = model.refined_solve(j, dataset.targets.col(j));
  }
  return model;
}

inline GpModel fit(const Dataset& dataset, const SeKernelParams& kernel) {
  return fit(dataset, std::vector<SeKernelParams>{kernel});
}

// Log marginal likelihood of one target column under the SE kernel, with the
// gradient w.r.t. theta = (log rho_k, log l_1..log l_q) when requested.
inline double log_marginal_likelihood(const MatX& inputs, const VecX& y, double noise_std,
                                      const SeKernelParams& params, VecX* grad = nullptr) {
  const int N = static_cast<int>(inputs.rows());
  const int q = static_cast<int>(inputs.cols());
  MatX k = gram_matrix(params, inputs);
  MatX ky = k;
  ky.diagonal().array() += noise_std * noise_std;
  Eigen::LLT<MatX> llt(ky);
  if (llt.info() != Eigen::Success) {
    // Ill-conditioned corner of hyperparameter space; report as infinitely
    // unlikely so optimizers back away instead of aborting.
    if (grad) grad->setZero(1 + q);
    return -std::numeric_limits<double>::infinity();
  }
  const VecX alpha = llt.solve(y);
  double logdet = 0.0;
  for (int i = 0; i < N; ++i) logdet += std::log(llt.matrixLLT()(i, i));
  const double lml = -0.5 * y.dot(alpha) - logdet - 0.5 * N * std::log(2.0 * M_PI);
  if (grad) {
    // d lml / d theta_j = 1/2 tr((alpha alpha^T - Ky^-1) dK/dtheta_j)
    const MatX kinv = llt.solve(MatX::Identity(N, N));
    const MatX w = alpha * alpha.transpose() - kinv;
    grad->resize(1 + q);
    (*grad)[0] = 0.5 * (w.cwiseProduct(2.0 * k)).sum();  // dK/dlog rho = 2K
    for (int d = 0; d < q; ++d) {
      const double l2 = params.length_scales[d] * params.length_scales[d];
      double acc = 0.0;
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
          const double diff = inputs(a, d) - inputs(b, d);
          acc += w(a, b) * k(a, b) * diff * diff / l2;
        }
      (*grad)[1 + d] = 0.5 * acc;
    }
  }
  return lml;
}

struct HyperFitResult {
  std::vector<SeKernelParams> kernels;   // one per output dimension
  std::vector<double> log_marginal;      // at the returned parameters
  bool converged = true;                 // all dimensions converged
};

// Maximizes the log marginal likelihood per output dimension over
// log-parameters with box constraints, three deterministic starts around the
// init (init, init*3, init/3). Non-convergence is flagged, not fatal: the
// best parameters found are still returned.
inline HyperFitResult fit_hyperparameters(const Dataset& dataset, const SeKernelParams& init) {
  dataset.validate();
  init.validate();
  if (dataset.size() < 5) throw ConfigError("fit_hyperparameters: need at least 5 samples");
  if (init.input_dim() != dataset.input_dim())
    throw ConfigError("fit_hyperparameters: init length-scale count must match input dimension");

  const int q = dataset.input_dim();
  const VecX lower = VecX::Constant(1 + q, std::log(1e-4));
  const VecX upper = VecX::Constant(1 + q, std::log(1e7));

  const auto to_params = [&](const VecX& theta) {
    SeKernelParams p;
    p.signal_std = std::exp(theta[0]);
    p.length_scales = theta.tail(q).array().exp();
    return p;
  };
  const auto to_theta = [&](const SeKernelParams& p) {
    VecX theta(1 + q);
    theta[0] = std::log(p.signal_std);
    theta.tail(q) = p.length_scales.array().log();
    return theta;
  };

  HyperFitResult out;
  for (int j = 0; j < dataset.output_dim(); ++j) {
    const VecX y = dataset.targets.col(j);
    const ObjectiveFn nll = [&](const VecX& theta, VecX& grad) {
      VecX g;
      const double lml = log_marginal_likelihood(dataset.inputs, y, dataset.noise_std,
                                                 to_params(theta), &g);
      grad = -g;
      return -lml;
    };

    double best_nll = std::numeric_limits<double>::infinity();
    VecX best_theta = to_theta(init);
    bool best_converged = false;
    for (double scale : {1.0, 3.0, 1.0 / 3.0}) {
      const VecX theta0 =
          (to_theta(init).array() + std::log(scale)).cwiseMax(lower.array()).cwiseMin(upper.array());
      const LbfgsResult r = lbfgs_minimize_box(nll, theta0, lower, upper);
      if (std::isfinite(r.value) && r.value < best_nll) {
        best_nll = r.value;
        best_theta = r.x;
        best_converged = r.converged;
      }
    }
    out.kernels.push_back(to_params(best_theta));
    out.log_marginal.push_back(-best_nll);
    out.converged = out.converged && best_converged;
  }
  return out;
}

// Per-dimension posterior-std maxima over the domain and their inf-norm.
struct StdMaxResult {
  VecX per_dim;   // rho_bar per output dimension
  double norm;    // max over dimensions
};

// Grid sweep followed by projected-gradient ascent from the best grid point,
// per output dimension.
inline StdMaxResult max_std_over_domain(const GpModel& model, const Box& domain,
                                        int grid_per_dim = 25, long max_grid_total = 20000) {
  domain.validate();
  if (grid_per_dim < 2) throw ConfigError("max_std_over_domain: need grid_per_dim >= 2");
  const int n = model.output_dim();

  StdMaxResult res;
  res.per_dim = VecX::Zero(n);
  std::vector<VecX> argmax(n, 0.5 * (domain.lower + domain.upper));
  detail::for_each_grid_point(domain, grid_per_dim, max_grid_total, [&](const VecX& x) {
    const VecX s = model.posterior_std(x);
    for (int j = 0; j < n; ++j)
      if (s[j] > res.per_dim[j]) {
        res.per_dim[j] = s[j];
        argmax[j] = x;
      }
  });

  // Local refinement: ascend sigma_j with central-difference gradients.
  const VecX fd_step = domain.width() / (10.0 * grid_per_dim);
  for (int j = 0; j < n; ++j) {
    VecX x = argmax[j];
    double fx = model.posterior_std(x)[j];
    double step = 1.0;
    for (int it = 0; it < 60; ++it) {
      VecX g(domain.dim());
      for (int d = 0; d < domain.dim(); ++d) {
        VecX xp = x, xm = x;
        xp[d] = std::min(x[d] + fd_step[d], domain.upper[d]);
        xm[d] = std::max(x[d] - fd_step[d], domain.lower[d]);
        const double denom = xp[d] - xm[d];
        g[d] = denom > 0 ? (model.posterior_std(xp)[j] - model.posterior_std(xm)[j]) / denom : 0.0;
      }
      if (inf_norm(g) < 1e-15) break;
      bool improved = false;
      while (step > 1e-12) {
        const VecX cand = domain.clamp(x + step * domain.width().cwiseProduct(g) / inf_norm(g));
        const double fc = model.posterior_std(cand)[j];
        if (fc > fx) {
          x = cand;
          fx = fc;
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    res.per_dim[j] = std::max(res.per_dim[j], fx);
  }
  res.norm = inf_norm(res.per_dim);
  return res;
}

}  // namespace gpstep
