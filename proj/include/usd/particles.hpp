#pragma once

#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

namespace usd {

// Weighted particle cloud. Weights are nonnegative masses and are not
// required to sum to one.
struct WeightedParticles {
  Eigen::MatrixXd points;   // n x d, one row per particle
  Eigen::VectorXd weights;  // n

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  double total_mass() const { return weights.sum(); }

  static WeightedParticles uniform(Eigen::MatrixXd pts) {
    WeightedParticles p;
    const auto n = pts.rows();
    p.points = std::move(pts);
    p.weights = Eigen::VectorXd::Constant(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
    return p;
  }

  void validate() const {
    if (points.rows() < 1) throw std::invalid_argument("WeightedParticles: empty point set");
    if (weights.size() != points.rows())
      throw std::invalid_argument("WeightedParticles: weight count does not match point count");
    if (!points.allFinite()) throw std::invalid_argument("WeightedParticles: non-finite point");
    if (!weights.allFinite()) throw std::invalid_argument("WeightedParticles: non-finite weight");
    if ((weights.array() < 0.0).any())
      throw std::invalid_argument("WeightedParticles: negative weight");
    if (weights.maxCoeff() <= 0.0)
      throw std::invalid_argument("WeightedParticles: all weights are zero");
  }
};

}  // namespace usd
