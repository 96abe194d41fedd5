#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace fedbatch {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Flat parameter vector `w`; layout is fixed by ModelSpec (see nncore.hpp).
using ParamVector = Vector<double>;
/// Same length and layout as the ParamVector it was computed for.
using GradientVector = Vector<double>;

/// splitmix64 finalizer. Derives independent, reproducible sub-seeds so that
/// every client, trial and stream draws from its own generator.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fedbatch
