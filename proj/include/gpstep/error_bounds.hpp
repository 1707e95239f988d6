#pragma once

#include "gpstep/gp.hpp"
#include "gpstep/rng.hpp"
#include "gpstep/strict_feedback.hpp"

#include <boost/math/distributions/beta.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace gpstep {

enum class BoundKind { Probabilistic, Deterministic, MonteCarlo };

inline std::string to_string(BoundKind k) {
  switch (k) {
    case BoundKind::Probabilistic: return "probabilistic";
    case BoundKind::Deterministic: return "deterministic";
    case BoundKind::MonteCarlo: return "monte-carlo";
  }
  return "?";
}

// Model-error bound for one subsystem: ||f_i - mu_i|| <= eta_norm * rho_bar_norm
// with probability 1 - epsilon (epsilon = 0 for the deterministic kind).
// All norms are infinity norms over the output dimensions.
struct ErrorBound {
  BoundKind kind = BoundKind::Probabilistic;
  double eta_norm = 0.0;
  double rho_bar_norm = 0.0;
  double epsilon = 0.0;
  double product = 0.0;  // eta_norm * rho_bar_norm (or the preset threshold)

  void validate() const {
    if (eta_norm < 0 || rho_bar_norm < 0 || product < 0)
      throw ConfigError("ErrorBound: entries must be nonnegative");
    if (epsilon < 0 || epsilon >= 1) throw ConfigError("ErrorBound: epsilon must be in [0,1)");
    if (kind == BoundKind::Deterministic && epsilon != 0)
      throw ConfigError("ErrorBound: deterministic bounds carry epsilon = 0");
  }
};

struct EtaResult {
  VecX eta;     // per output dimension
  double norm;  // infinity norm
};

// High-probability scaling factors:
//   eta_ij = B_ij + sigma sqrt(2 (gamma_ij + 1 + ln(1/eps_nh))),  eps_nh = eps/(n h)
// The union bound over dimensions and subsystems splits eps; eps_nh = 1 (so
// the log vanishes) is admitted as the degenerate corner case.
inline EtaResult probabilistic_eta(const VecX& rkhs_bounds, double sigma, const VecX& gamma_info,
                                   double epsilon, int n, int h) {
  if (!(epsilon > 0.0) || epsilon > 1.0)
    throw std::domain_error("probabilistic_eta: epsilon must be in (0,1]");
  if (!(sigma > 0.0)) throw std::domain_error("probabilistic_eta: sigma must be positive");
  if (n < 1 || h < 1) throw ConfigError("probabilistic_eta: n and h must be positive");
  if (rkhs_bounds.size() != n || gamma_info.size() != n)
    throw ConfigError("probabilistic_eta: expected one B and one gamma per output dimension");
  if (rkhs_bounds.minCoeff() < 0 || gamma_info.minCoeff() < 0)
    throw std::domain_error("probabilistic_eta: B and gamma must be nonnegative");

  const double eps_nh = epsilon / (static_cast<double>(n) * h);
  EtaResult r;
  r.eta.resize(n);
  for (int j = 0; j < n; ++j)
    r.eta[j] = rkhs_bounds[j] + sigma * std::sqrt(2.0 * (gamma_info[j] + 1.0 + std::log(1.0 / eps_nh)));
  r.norm = inf_norm(r.eta);
  return r;
}

// RKHS-norm bound from a Hoelder-type constant L on f,
// |f(x) - f(x')| <= L sqrt(||x - x'||):
//   B = L / sqrt(2 ||dk/dn||)
// with ||dk/dn|| the supremum kernel-gradient norm (closed form for SE).
inline double rkhs_bound_from_lipschitz(double hoelder_constant, const SeKernelParams& kernel) {
  if (!(hoelder_constant > 0.0))
    throw std::domain_error("rkhs_bound_from_lipschitz: constant must be positive");
  return hoelder_constant / std::sqrt(2.0 * kernel_grad_sup_norm(kernel));
}

// Deterministic scaling factors, valid with probability 1 when B_ij bounds
// the RKHS norm:
//   eta~_ij = sqrt(B_ij^2 - y_ij^T (K_ij + sigma^2 I)^-1 y_ij + N)
inline EtaResult deterministic_eta(const GpModel& model, const VecX& rkhs_bounds) {
  const int n = model.output_dim();
  if (rkhs_bounds.size() != n)
    throw ConfigError("deterministic_eta: expected one B per output dimension");
  EtaResult r;
  r.eta.resize(n);
  for (int j = 0; j < n; ++j) {
    const double radicand =
        rkhs_bounds[j] * rkhs_bounds[j] - model.quadratic_form(j) + model.size();
    if (radicand < 0)
      throw NumericalError("deterministic_eta: negative radicand for output dimension " +
                           std::to_string(j + 1) + " (RKHS bound too small)");
    r.eta[j] = std::sqrt(radicand);
  }
  r.norm = inf_norm(r.eta);
  return r;
}

// Two-sided exact binomial confidence interval at the given confidence.
struct ProbabilityInterval {
  double lower = 0.0;
  double upper = 1.0;
  double confidence = 0.0;
  long realizations = 0;

  bool contains(double p) const { return lower <= p && p <= upper; }
};

inline ProbabilityInterval clopper_pearson(long successes, long trials, double confidence) {
  if (trials < 1) throw ConfigError("clopper_pearson: need at least one trial");
  if (successes < 0 || successes > trials)
    throw ConfigError("clopper_pearson: successes out of range");
  if (!(confidence > 0.0) || !(confidence < 1.0))
    throw ConfigError("clopper_pearson: confidence must be in (0,1)");
  const double alpha = 1.0 - confidence;
  ProbabilityInterval iv;
  iv.confidence = confidence;
  iv.realizations = trials;
  const double k = static_cast<double>(successes);
  const double n = static_cast<double>(trials);
  if (successes == 0)
    iv.lower = 0.0;
  else
    iv.lower = boost::math::quantile(boost::math::beta_distribution<double>(k, n - k + 1.0),
                                     alpha / 2.0);
  if (successes == trials)
    iv.upper = 1.0;
  else
    iv.upper = boost::math::quantile(boost::math::beta_distribution<double>(k + 1.0, n - k),
                                     1.0 - alpha / 2.0);
  return iv;
}

// Monte-Carlo certification of P(||f(x) - mu(x)|| <= threshold) over uniform
// domain draws. Counter-based sampling: the seed alone fixes the sample set.
inline ProbabilityInterval estimate_bound_probability(const GpModel& model, const DriftFn& truth,
                                                      const Box& domain, double threshold,
                                                      long samples, double confidence,
                                                      std::uint64_t seed) {
  if (samples < 1000) throw ConfigError("estimate_bound_probability: need at least 1000 samples");
  long successes = 0;
  for (long i = 0; i < samples; ++i) {
    const VecX x = rng::uniform_in_box(seed, static_cast<std::uint64_t>(i), domain);
    const VecX err = truth(x) - model.posterior_mean(x);
    if (inf_norm(err) <= threshold) ++successes;
  }
  return clopper_pearson(successes, samples, confidence);
}

// Joint version across all subsystems of a strict-feedback system: one full
// state is drawn per realization and the bound event must hold for every
// subsystem at its own prefix (matching the intersection in the bound
// statement).
inline ProbabilityInterval estimate_joint_bound_probability(
    const std::vector<GpModel>& models, const StrictFeedbackSystem& sys, double threshold,
    long samples, double confidence, std::uint64_t seed) {
  if (samples < 1000)
    throw ConfigError("estimate_joint_bound_probability: need at least 1000 samples");
  if (static_cast<int>(models.size()) != sys.num_subsystems)
    throw ConfigError("estimate_joint_bound_probability: one model per subsystem required");
  long successes = 0;
  for (long i = 0; i < samples; ++i) {
    const VecX x = rng::uniform_in_box(seed, static_cast<std::uint64_t>(i), sys.domain);
    bool ok = true;
    for (int s = 0; s < sys.num_subsystems && ok; ++s) {
      const VecX nu = sys.prefix(x, s + 1);
      const VecX err = sys.drift[s](nu) - models[s].posterior_mean(nu);
      ok = inf_norm(err) <= threshold;
    }
    if (ok) ++successes;
  }
  return clopper_pearson(successes, samples, confidence);
}

// Empirical p-quantile of ||f(x) - mu(x)|| over uniform domain draws; used to
// calibrate a probabilistic threshold the way the case studies do.
inline double calibrate_error_threshold(const GpModel& model, const DriftFn& truth,
                                        const Box& domain, double quantile, long samples,
                                        std::uint64_t seed) {
  if (!(quantile > 0.0) || !(quantile < 1.0))
    throw ConfigError("calibrate_error_threshold: quantile must be in (0,1)");
  std::vector<double> errs(static_cast<std::size_t>(samples));
  for (long i = 0; i < samples; ++i) {
    const VecX x = rng::uniform_in_box(seed, static_cast<std::uint64_t>(i), domain);
    errs[static_cast<std::size_t>(i)] = inf_norm(VecX(truth(x) - model.posterior_mean(x)));
  }
  std::sort(errs.begin(), errs.end());
  const auto idx = static_cast<std::size_t>(quantile * (errs.size() - 1));
  return errs[idx];
}

}  // namespace gpstep
