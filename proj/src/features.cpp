#include "usd/features.hpp"

#include <cmath>
#include <stdexcept>

#include "usd/rng.hpp"

namespace usd {

FeatureMap FeatureMap::rff(int dim_in, int dim_out, double bandwidth, std::uint64_t seed) {
  if (dim_in < 1) throw std::invalid_argument("FeatureMap::rff: dim_in must be >= 1");
  if (dim_out < 1) throw std::invalid_argument("FeatureMap::rff: dim_out must be >= 1");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw std::invalid_argument("FeatureMap::rff: bandwidth must be positive and finite");

  FeatureMap fm;
  fm.kind_ = FeatureKind::Rff;
  fm.dim_in_ = dim_in;
  fm.dim_out_ = dim_out;
  fm.bandwidth_ = bandwidth;
  fm.seed_ = seed;
  fm.scale_ = std::sqrt(2.0 / dim_out);
  fm.freq_.resize(dim_out, dim_in);
  fm.phase_.resize(dim_out);

  Rng rng(seed);
  for (int j = 0; j < dim_out; ++j)
    for (int a = 0; a < dim_in; ++a) fm.freq_(j, a) = rng.normal() / bandwidth;
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int j = 0; j < dim_out; ++j) fm.phase_(j) = two_pi * rng.uniform();
  return fm;
}

FeatureMap FeatureMap::identity(int dim) {
  if (dim < 1) throw std::invalid_argument("FeatureMap::identity: dim must be >= 1");
  FeatureMap fm;
  fm.kind_ = FeatureKind::Identity;
  fm.dim_in_ = dim;
  fm.dim_out_ = dim;
  return fm;
}

FeatureMap FeatureMap::polynomial(int dim_in) {
  if (dim_in < 1) throw std::invalid_argument("FeatureMap::polynomial: dim_in must be >= 1");
  FeatureMap fm;
  fm.kind_ = FeatureKind::Polynomial;
  fm.dim_in_ = dim_in;
  fm.dim_out_ = 2 * dim_in + 1;
  return fm;
}

void FeatureMap::check_point_dim(int d) const {
  if (d != dim_in_)
    throw std::invalid_argument("FeatureMap: point dimension " + std::to_string(d) +
                                " does not match map dimension " + std::to_string(dim_in_));
}

Eigen::VectorXd FeatureMap::featurize(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  check_point_dim(static_cast<int>(x.size()));
  switch (kind_) {
    case FeatureKind::Identity:
      return x;
    case FeatureKind::Polynomial: {
      Eigen::VectorXd out(dim_out_);
      out(0) = 1.0;
      out.segment(1, dim_in_) = x;
      out.segment(1 + dim_in_, dim_in_) = 0.5 * x.array().square();
      return out;
    }
    case FeatureKind::Rff: {
      Eigen::VectorXd t = freq_ * x + phase_;
      return scale_ * t.array().cos();
    }
  }
  throw std::logic_error("FeatureMap::featurize: unknown kind");
}

Eigen::MatrixXd FeatureMap::jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  check_point_dim(static_cast<int>(x.size()));
  switch (kind_) {
    case FeatureKind::Identity:
      return Eigen::MatrixXd::Identity(dim_in_, dim_in_);
    case FeatureKind::Polynomial: {
      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(dim_in_, dim_out_);
      jac.block(0, 1, dim_in_, dim_in_).setIdentity();
      jac.block(0, 1 + dim_in_, dim_in_, dim_in_) = x.asDiagonal();
      return jac;
    }
    case FeatureKind::Rff: {
      Eigen::VectorXd t = freq_ * x + phase_;
      Eigen::VectorXd s = -scale_ * t.array().sin();
      return freq_.transpose() * s.asDiagonal();
    }
  }
  throw std::logic_error("FeatureMap::jacobian: unknown kind");
}

Eigen::MatrixXd FeatureMap::featurize_rows(const Eigen::Ref<const Eigen::MatrixXd>& pts) const {
  check_point_dim(static_cast<int>(pts.cols()));
  switch (kind_) {
    case FeatureKind::Identity:
      return pts;
    case FeatureKind::Polynomial: {
      const auto n = pts.rows();
      Eigen::MatrixXd out(n, dim_out_);
      out.col(0).setOnes();
      out.middleCols(1, dim_in_) = pts;
      out.middleCols(1 + dim_in_, dim_in_) = 0.5 * pts.array().square();
      return out;
    }
    case FeatureKind::Rff: {
      Eigen::MatrixXd t = rff_angles(pts);
      return scale_ * t.array().cos();
    }
  }
  throw std::logic_error("FeatureMap::featurize_rows: unknown kind");
}

Eigen::MatrixXd FeatureMap::rff_angles(const Eigen::Ref<const Eigen::MatrixXd>& pts) const {
  if (kind_ != FeatureKind::Rff)
    throw std::logic_error("FeatureMap::rff_angles: map is not an rff map");
  check_point_dim(static_cast<int>(pts.cols()));
  return (pts * freq_.transpose()).rowwise() + phase_.transpose();
}

}  // namespace usd
