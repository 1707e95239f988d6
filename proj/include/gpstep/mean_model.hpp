#pragma once

#include "gpstep/gp.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace gpstep {

// What the controller needs from a learned subsystem model: the regressed
// drift estimate and its first two derivatives. Implemented by the GP
// posterior and, for tests and exact-model studies, by closed-form models.
class SubsystemModel {
 public:
  virtual ~SubsystemModel() = default;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual VecX mean(const VecX& q) const = 0;
  virtual MatX mean_jacobian(const VecX& q) const = 0;            // n x q
  virtual std::vector<MatX> mean_hessian(const VecX& q) const = 0;  // n of q x q
};

class GpSubsystemModel final : public SubsystemModel {
 public:
  explicit GpSubsystemModel(GpModel gp) : gp_(std::move(gp)) {}

  int input_dim() const override { return gp_.size() > 0 ? gp_.input_dim() : gp_.kernels[0].input_dim(); }
  int output_dim() const override { return gp_.output_dim(); }
  VecX mean(const VecX& q) const override { return gp_.posterior_mean(q); }
  MatX mean_jacobian(const VecX& q) const override { return gp_.mean_gradient(q); }
  std::vector<MatX> mean_hessian(const VecX& q) const override { return gp_.mean_hessian(q); }

  const GpModel& gp() const { return gp_; }

 private:
  GpModel gp_;
};

// Identically zero estimate (the GP prior with no data).
class ZeroModel final : public SubsystemModel {
 public:
  ZeroModel(int input_dim, int output_dim) : q_(input_dim), n_(output_dim) {}
  int input_dim() const override { return q_; }
  int output_dim() const override { return n_; }
  VecX mean(const VecX&) const override { return VecX::Zero(n_); }
  MatX mean_jacobian(const VecX&) const override { return MatX::Zero(n_, q_); }
  std::vector<MatX> mean_hessian(const VecX&) const override {
    return std::vector<MatX>(n_, MatX::Zero(q_, q_));
  }

 private:
  int q_, n_;
};

// Closed-form estimate with analytic derivatives; used when the true drift
// is known exactly (synthetic studies) and as a test fixture.
class CallableModel final : public SubsystemModel {
 public:
  using Fn = std::function<VecX(const VecX&)>;
  using JacFn = std::function<MatX(const VecX&)>;
  using HessFn = std::function<std::vector<MatX>(const VecX&)>;

  CallableModel(int input_dim, int output_dim, Fn fn, JacFn jac, HessFn hess)
      : q_(input_dim), n_(output_dim), fn_(std::move(fn)), jac_(std::move(jac)), hess_(std::move(hess)) {}

  int input_dim() const override { return q_; }
  int output_dim() const override { return n_; }
  VecX mean(const VecX& q) const override { return fn_(q); }
  MatX mean_jacobian(const VecX& q) const override { return jac_(q); }
  std::vector<MatX> mean_hessian(const VecX& q) const override { return hess_(q); }

 private:
  int q_, n_;
  Fn fn_;
  JacFn jac_;
  HessFn hess_;
};

using ModelPtr = std::shared_ptr<const SubsystemModel>;

}  // namespace gpstep
