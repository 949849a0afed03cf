#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace usd {

enum class FeatureKind { Rff, Identity, Polynomial };

// Finite-dimensional feature map phi: R^d -> R^m with an analytic Jacobian.
//
// rff:        phi_j(x) = sqrt(2/m) cos(<w_j, x> + b_j) with w_j ~ N(0, I/sigma^2)
//             and b_j ~ U[0, 2pi). <phi(x), phi(y)> approximates the Gaussian
//             kernel exp(-|x - y|^2 / (2 sigma^2)).
// identity:   phi(x) = x. Debug map with a constant Jacobian.
// polynomial: phi(x) = (1, x_1..x_d, x_1^2/2..x_d^2/2). Debug map with a
//             constant feature and a position-dependent Jacobian.
class FeatureMap {
 public:
  static FeatureMap rff(int dim_in, int dim_out, double bandwidth, std::uint64_t seed);
  static FeatureMap identity(int dim);
  static FeatureMap polynomial(int dim_in);

  FeatureKind kind() const { return kind_; }
  int dim_in() const { return dim_in_; }
  int dim_out() const { return dim_out_; }
  double bandwidth() const { return bandwidth_; }
  std::uint64_t seed() const { return seed_; }
  double scale() const { return scale_; }                       // sqrt(2/m) for rff
  const Eigen::MatrixXd& frequencies() const { return freq_; }  // m x d
  const Eigen::VectorXd& phases() const { return phase_; }      // m

  Eigen::VectorXd featurize(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  // Jacobian of phi at x, laid out d x m: column j holds grad phi_j(x).
  Eigen::MatrixXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  // Features of points held row-wise (n x d), one row per point, result n x m.
  Eigen::MatrixXd featurize_rows(const Eigen::Ref<const Eigen::MatrixXd>& pts) const;

  // rff only: angle matrix pts * freq^T + phases, used by fused kernels that
  // need both cos and sin of the same angles.
  Eigen::MatrixXd rff_angles(const Eigen::Ref<const Eigen::MatrixXd>& pts) const;

  void check_point_dim(int d) const;

 private:
  FeatureMap() = default;

  FeatureKind kind_ = FeatureKind::Identity;
  int dim_in_ = 0;
  int dim_out_ = 0;
  double bandwidth_ = 0.0;
  std::uint64_t seed_ = 0;
  double scale_ = 1.0;
  Eigen::MatrixXd freq_;
  Eigen::VectorXd phase_;
};

}  // namespace usd
