#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gpstep {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Thrown when user-facing configuration or arguments are invalid (CLI exit 1).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a computation fails numerically: factorization breakdown,
// negative radicand, gain selection failure, simulation blow-up (CLI exit 2).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// max{|x_1|, ..., |x_n|}
inline double inf_norm(const VecX& x) {
  return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
}

// Induced infinity norm of a matrix (max absolute row sum).
inline double induced_inf_norm(const MatX& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

// Compact axis-aligned box, lower_i < upper_i per coordinate.
struct Box {
  VecX lower;
  VecX upper;

  int dim() const { return static_cast<int>(lower.size()); }

  void validate() const {
    if (lower.size() != upper.size())
      throw ConfigError("Box: lower/upper dimension mismatch");
    for (int i = 0; i < lower.size(); ++i)
      if (!(lower[i] < upper[i]))
        throw ConfigError("Box: lower must be strictly below upper at coordinate " +
                          std::to_string(i + 1));
  }

  bool contains(const VecX& x) const {
    if (x.size() != lower.size()) return false;
    for (int i = 0; i < x.size(); ++i)
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
  }

  VecX clamp(const VecX& x) const {
    return x.cwiseMax(lower).cwiseMin(upper);
  }

  VecX width() const { return upper - lower; }

  // Sub-box of the first d coordinates.
  Box head(int d) const { return Box{lower.head(d), upper.head(d)}; }
};

namespace detail {

// Visits a uniform inclusive grid over `box`; the per-dimension count is
// reduced so the total stays below max_total in high dimensions.
template <typename Fn>
void for_each_grid_point(const Box& box, int points_per_dim, long max_total, Fn&& fn) {
  const int d = box.dim();
  int per_dim = points_per_dim < 2 ? 2 : points_per_dim;
  while (per_dim > 2) {
    double total = 1.0;
    for (int i = 0; i < d; ++i) total *= per_dim;
    if (total <= static_cast<double>(max_total)) break;
    --per_dim;
  }
  long total = 1;
  for (int i = 0; i < d; ++i) total *= per_dim;
  VecX x(d);
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    for (int i = 0; i < d; ++i) {
      const int cell = static_cast<int>(rem % per_dim);
      rem /= per_dim;
      x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * cell / (per_dim - 1);
    }
    fn(x);
  }
}

}  // namespace detail

}  // namespace gpstep
