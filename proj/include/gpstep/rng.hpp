#pragma once

#include "gpstep/common.hpp"

#include <cmath>
#include <cstdint>

namespace gpstep {

// Counter-based random streams built on the splitmix64 finalizer. Every draw
// is a pure function of (seed, counter), so results are identical no matter
// how the draws are scheduled across threads, and runs are reproducible
// byte-for-byte across replays. std::random distributions are avoided on
// purpose: their output is implementation-defined.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent sub-stream of a master seed (tag = purpose id).
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag ^ 0xA24BAED4963EE407ULL));
}

inline std::uint64_t bits(std::uint64_t seed, std::uint64_t counter) {
  return splitmix64(seed + counter * 0x9E3779B97F4A7C15ULL);
}

// Uniform in [0, 1).
inline double uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(bits(seed, counter) >> 11) * 0x1.0p-53;
}

inline double uniform(std::uint64_t seed, std::uint64_t counter, double lo, double hi) {
  return lo + (hi - lo) * uniform(seed, counter);
}

// Standard normal via Box-Muller; consumes two sub-draws of one counter.
inline double gaussian(std::uint64_t seed, std::uint64_t counter) {
  const std::uint64_t s = bits(seed, counter);
  // u1 in (0, 1] so the log is finite.
  const double u1 = (static_cast<double>(splitmix64(s ^ 0x1ULL) >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(splitmix64(s ^ 0x2ULL) >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Uniform point in a box; consumes dim sub-draws of one counter.
inline VecX uniform_in_box(std::uint64_t seed, std::uint64_t counter, const Box& box) {
  VecX x(box.dim());
  const std::uint64_t s = bits(seed, counter);
  for (int i = 0; i < box.dim(); ++i)
    x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) *
                              (static_cast<double>(splitmix64(s ^ (0x100ULL + i)) >> 11) * 0x1.0p-53);
  return x;
}

inline VecX gaussian_vec(std::uint64_t seed, std::uint64_t counter, int dim) {
  VecX x(dim);
  const std::uint64_t s = bits(seed, counter);
  for (int i = 0; i < dim; ++i) {
    const double u1 =
        (static_cast<double>(splitmix64(s ^ (0x200ULL + 2 * i)) >> 11) + 1.0) * 0x1.0p-53;
    const double u2 =
        static_cast<double>(splitmix64(s ^ (0x201ULL + 2 * i)) >> 11) * 0x1.0p-53;
    x[i] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  return x;
}

}  // namespace rng
}  // namespace gpstep
