#include "usd/shapes.hpp"

#include <cmath>
#include <stdexcept>

#include "usd/image_io.hpp"
#include "usd/point_cloud_io.hpp"

namespace usd {

namespace {

Eigen::MatrixXd sample_gaussian(const GaussianShape& g, int n, Rng& rng) {
  const int d = static_cast<int>(g.mean.size());
  if (d < 1) throw std::invalid_argument("sample_shape: gaussian needs a mean");
  if (g.var.size() != d)
    throw std::invalid_argument("sample_shape: gaussian variance size mismatch");
  if ((g.var.array() < 0.0).any())
    throw std::invalid_argument("sample_shape: negative variance");
  const Eigen::VectorXd sd = g.var.cwiseSqrt();
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) pts(i, a) = g.mean(a) + sd(a) * rng.normal();
  return pts;
}

Eigen::MatrixXd sample_mog(const MogShape& mog, int n, Rng& rng) {
  if (mog.components.empty()) throw std::invalid_argument("sample_shape: empty mixture");
  if (mog.mix.size() != mog.components.size())
    throw std::invalid_argument("sample_shape: mixture weight count mismatch");
  double total = 0.0;
  for (double m : mog.mix) {
    if (!(m >= 0.0)) throw std::invalid_argument("sample_shape: negative mixture weight");
    total += m;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_shape: mixture weights sum to zero");

  const int d = static_cast<int>(mog.components[0].mean.size());
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    std::size_t pick = 0;
    while (pick + 1 < mog.mix.size() && u >= mog.mix[pick]) {
      u -= mog.mix[pick];
      ++pick;
    }
    const GaussianShape& g = mog.components[pick];
    if (g.mean.size() != d || g.var.size() != d)
      throw std::invalid_argument("sample_shape: mixture component dimension mismatch");
    for (int a = 0; a < d; ++a) pts(i, a) = g.mean(a) + std::sqrt(g.var(a)) * rng.normal();
  }
  return pts;
}

Eigen::MatrixXd sample_rings(const RingsShape& rings, int n, Rng& rng) {
  if (rings.centers.empty() || rings.centers.size() != rings.radii.size())
    throw std::invalid_argument("sample_shape: rings need matching centers and radii");
  if (rings.thickness < 0.0) throw std::invalid_argument("sample_shape: negative thickness");
  const double two_pi = 2.0 * std::acos(-1.0);
  Eigen::MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const int k = rng.uniform_int(static_cast<int>(rings.centers.size()));
    const double angle = two_pi * rng.uniform();
    const double r = rings.radii[k] + rings.thickness * (rng.uniform() - 0.5);
    pts(i, 0) = rings.centers[k](0) + r * std::cos(angle);
    pts(i, 1) = rings.centers[k](1) + r * std::sin(angle);
  }
  return pts;
}

Eigen::MatrixXd sample_mask(const ImageMaskShape& mask, int n, Rng& rng) {
  const ImageRgb8 img = read_png_rgb8(mask.path);
  std::vector<char> inside(static_cast<std::size_t>(img.width) * img.height, 0);
  bool any = false;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const int lum = (static_cast<int>(img.at(r, c, 0)) + img.at(r, c, 1) + img.at(r, c, 2)) / 3;
      if (lum >= 128) {
        inside[static_cast<std::size_t>(r) * img.width + c] = 1;
        any = true;
      }
    }
  if (!any) throw std::runtime_error("sample_shape: image mask has no bright pixels");

  Eigen::MatrixXd pts(n, 2);
  long guard = 0;
  for (int i = 0; i < n;) {
    if (++guard > 100000000L)
      throw std::runtime_error("sample_shape: image mask rejection sampling stalled");
    const double x = rng.uniform();
    const double y = rng.uniform();
    const int col = std::min(img.width - 1, static_cast<int>(x * img.width));
    const int row = std::min(img.height - 1, static_cast<int>((1.0 - y) * img.height));
    if (inside[static_cast<std::size_t>(row) * img.width + col]) {
      pts(i, 0) = x;
      pts(i, 1) = y;
      ++i;
    }
  }
  return pts;
}

}  // namespace

WeightedParticles sample_shape(const ShapeSpec& spec, Rng& rng) {
  WeightedParticles out;
  if (std::holds_alternative<PointCloudShape>(spec.shape)) {
    out = load_point_cloud(std::get<PointCloudShape>(spec.shape).path);
  } else {
    if (spec.n < 1) throw std::invalid_argument("sample_shape: n must be >= 1");
    Eigen::MatrixXd pts;
    if (const auto* g = std::get_if<GaussianShape>(&spec.shape))
      pts = sample_gaussian(*g, spec.n, rng);
    else if (const auto* mog = std::get_if<MogShape>(&spec.shape))
      pts = sample_mog(*mog, spec.n, rng);
    else if (const auto* rings = std::get_if<RingsShape>(&spec.shape))
      pts = sample_rings(*rings, spec.n, rng);
    else
      pts = sample_mask(std::get<ImageMaskShape>(spec.shape), spec.n, rng);
    out = WeightedParticles::uniform(std::move(pts));
  }

  if (spec.weight_gradient.has_value()) {
    const WeightGradient& wg = *spec.weight_gradient;
    if (wg.axis < 0 || wg.axis >= out.dim())
      throw std::invalid_argument("sample_shape: weight gradient axis out of range");
    if (!(wg.lo >= 0.0) || !(wg.hi >= 0.0) || (wg.lo == 0.0 && wg.hi == 0.0))
      throw std::invalid_argument("sample_shape: weight gradient endpoints must be >= 0");
    const Eigen::VectorXd coord = out.points.col(wg.axis);
    const double lo = coord.minCoeff();
    const double hi = coord.maxCoeff();
    for (int i = 0; i < out.size(); ++i) {
      const double t = hi > lo ? (coord(i) - lo) / (hi - lo) : 0.5;
      out.weights(i) = wg.lo + t * (wg.hi - wg.lo);
    }
  }
  if (spec.normalize) out.weights /= out.total_mass();
  out.validate();
  return out;
}

}  // namespace usd
