#ifndef BRIDGESIM_RNG_HPP
#define BRIDGESIM_RNG_HPP

#include <cmath>
#include <cstdint>

#include "bridgesim/core.hpp"

/**
 * \file
 * \brief Counter-based Gaussian noise, keyed by (seed, path index, step,
 *        component). Draws are a pure function of the key, so batches of paths
 *        can run on any number of workers in any order and still reproduce
 *        bit-identically.
 */

namespace bridgesim {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  // splitmix64 finalizer
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform in (0, 1].
inline double to_unit(std::uint64_t z) {
  return (static_cast<double>(z >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace detail

/// Deterministic per-path stream of standard normals.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t path_index)
      : seed_(seed),
        path_index_(path_index),
        base_(detail::mix64(seed ^ detail::mix64(path_index ^ 0xA3C59AC2ULL))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t path_index() const { return path_index_; }

  /// Independent stream for sub-tasks (e.g. per observation segment).
  NoiseStream child(std::uint64_t tag) const {
    return NoiseStream(detail::mix64(seed_ ^ detail::mix64(tag + 0x51ED2705ULL)),
                       path_index_);
  }

  /// Standard normal draw for (step, component): a pure function of
  /// (seed, path_index, step, component). Consecutive steps share one
  /// Box-Muller pair, and the sibling draw is cached for sequential access.
  double gaussian(std::uint64_t step, std::uint64_t component = 0) const {
    const std::uint64_t k = base_ + (step >> 1) * 0xD1B54A32D192ED03ULL +
                            component * 0x8CB92BA72F3D8DD7ULL;
    const bool second = (step & 1) != 0;
    if (second && cache_valid_ && cache_key_ == k) return cache_second_;
    const double u1 = detail::to_unit(detail::mix64(k));
    const double u2 = detail::to_unit(detail::mix64(k ^ 0x94D049BB133111EBULL));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925287 * u2;
    const double first = r * std::cos(a);
    cache_key_ = k;
    cache_second_ = r * std::sin(a);
    cache_valid_ = true;
    return second ? cache_second_ : first;
  }

  /// Fill `out` with normals for components 0..out.size()-1 of one step.
  void gaussians(std::uint64_t step, Eigen::Ref<Vec> out) const {
    for (Eigen::Index j = 0; j < out.size(); ++j)
      out[j] = gaussian(step, static_cast<std::uint64_t>(j));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t path_index_;
  std::uint64_t base_;
  mutable std::uint64_t cache_key_ = 0;  ///< single-entry sibling cache
  mutable double cache_second_ = 0.0;
  mutable bool cache_valid_ = false;
};

}  // namespace bridgesim

#endif  // BRIDGESIM_RNG_HPP
