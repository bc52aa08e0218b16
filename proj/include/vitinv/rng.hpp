#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace vitinv {

/// All randomness in the library flows through std::mt19937_64 seeded
/// explicitly, so identical seeds reproduce bit-identical runs.
using Rng = std::mt19937_64;

/// Derives an independent stream from a base seed and a stream index.
/// SplitMix64 finalizer; avoids correlated neighboring mt19937 states.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> random_normal(
    Eigen::Index rows, Eigen::Index cols, Rng& rng, Scalar stddev = Scalar(1)) {
  // Sampling in double keeps float and double runs on the same trajectory.
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<Scalar>(dist(rng)) * stddev;
  return m;
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> random_uniform(
    Eigen::Index rows, Eigen::Index cols, Rng& rng, Scalar lo, Scalar hi) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

}  // namespace vitinv
