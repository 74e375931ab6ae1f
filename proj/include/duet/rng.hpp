#pragma once

#include <random>

#include <Eigen/Core>

namespace duet {

using Mat = Eigen::MatrixXd;

/// All stochastic code takes an explicit engine so runs are reproducible
/// from a single seed.
using Rng = std::mt19937_64;

inline Eigen::MatrixXd random_normal(Rng& rng, long rows, long cols,
                                     double stddev = 1.0) {
  std::normal_distribution<double> g(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = g(rng);
  return m;
}

inline Eigen::MatrixXd random_uniform(Rng& rng, long rows, long cols,
                                      double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

}  // namespace duet
