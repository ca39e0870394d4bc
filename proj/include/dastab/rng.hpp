#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace dastab {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the independent stream identified by (master, query, index). The
/// same triple always yields the same stream, whichever thread consumes it.
constexpr std::uint64_t substream_seed(std::uint64_t master,
                                       std::uint64_t query,
                                       std::uint64_t index) {
  return mix64(mix64(mix64(master) ^ query) ^ (index * 0xd1342543de82ef95ULL));
}

using Rng = std::mt19937_64;

/// Uniform sample from the sphere of the given radius in R^dim.
Eigen::VectorXd sample_sphere(Eigen::Index dim, double radius, Rng& rng);

}  // namespace dastab
