#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "usd/particles.hpp"
#include "usd/rng.hpp"

namespace usd {

struct GaussianShape {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // per-axis variances
};

struct MogShape {
  std::vector<GaussianShape> components;
  std::vector<double> mix;  // relative component masses
};

// Concentric or offset annuli in the plane; points land uniformly in angle
// with radius jittered inside the thickness band.
struct RingsShape {
  std::vector<Eigen::Vector2d> centers;
  std::vector<double> radii;
  double thickness = 0.1;
};

struct PointCloudShape {
  std::string path;  // csv, see point_cloud_io.hpp
};

// Uniform samples over the bright pixels of an image. Pixel luminance above
// half scale counts as inside; the image maps to [0,1]^2 with y pointing up.
struct ImageMaskShape {
  std::string path;  // png
};

// Linear weight ramp along one coordinate axis, rescaled over the sampled
// points from lo at the smallest coordinate to hi at the largest.
struct WeightGradient {
  int axis = 0;
  double lo = 1.0;
  double hi = 1.0;
};

struct ShapeSpec {
  std::variant<GaussianShape, MogShape, RingsShape, PointCloudShape, ImageMaskShape> shape;
  int n = 0;  // ignored for point_cloud, which takes every row in the file
  std::optional<WeightGradient> weight_gradient;
  bool normalize = true;  // rescale weights to total mass 1
};

WeightedParticles sample_shape(const ShapeSpec& spec, Rng& rng);

}  // namespace usd
