#pragma once

#include "gpstep/common.hpp"

#include <vector>

namespace gpstep {

// One simulated trajectory on a fixed time grid. `inputs` holds the applied
// physical input v(t); `u_hats` the exogenous reference u_hat(t).
struct Trajectory {
  std::vector<double> times;
  std::vector<VecX> states;
  std::vector<VecX> inputs;
  std::vector<VecX> u_hats;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (states.size() != times.size() || inputs.size() != times.size() ||
        u_hats.size() != times.size())
      throw ConfigError("Trajectory: column lengths differ");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw ConfigError("Trajectory: times must increase strictly");
  }
};

// Two trajectories of the same closed loop on a shared grid.
struct TrajectoryPair {
  Trajectory first;
  Trajectory second;

  std::size_t size() const { return first.size(); }
  const std::vector<double>& times() const { return first.times; }

  void validate() const {
    first.validate();
    second.validate();
    if (first.times != second.times)
      throw ConfigError("TrajectoryPair: trajectories must share one time grid");
  }
};

}  // namespace gpstep
