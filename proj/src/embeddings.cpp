#include "usd/embeddings.hpp"

#include <stdexcept>
#include <vector>

#include "usd/parallel.hpp"

namespace usd {

namespace {

void check_inputs(const WeightedParticles& p, const FeatureMap& fm, int gamma) {
  p.validate();
  fm.check_point_dim(p.dim());
  if (gamma != 0 && gamma != 1)
    throw std::invalid_argument("embeddings: gamma must be 0 or 1");
}

// Per-chunk partial sums for one fused pass over the particles.
struct ChunkStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd phi_outer;  // sum w phi phi^T
  Eigen::MatrixXd gramian;    // sum w J^T J
};

enum StatMask { kMean = 1, kOuter = 2, kGramian = 4 };

// Chunk-local accumulation. Within a chunk the per-particle order is the
// index order; rff chunks go through matrix products on the chunk block.
ChunkStats chunk_stats(const WeightedParticles& p, const FeatureMap& fm, int c, int mask) {
  const int b = chunk_begin(c);
  const int len = chunk_size(c, p.size());
  const int m = fm.dim_out();
  const auto pts = p.points.middleRows(b, len);
  const auto w = p.weights.segment(b, len);

  ChunkStats out;
  if (fm.kind() == FeatureKind::Rff) {
    const Eigen::MatrixXd angles = fm.rff_angles(pts);
    const Eigen::MatrixXd phi = fm.scale() * angles.array().cos();
    if (mask & kMean) out.mean = phi.transpose() * w;
    if (mask & kOuter) out.phi_outer = phi.transpose() * w.asDiagonal() * phi;
    if (mask & kGramian) {
      // J(x)^T J(x) = s^2 diag(sin t) F F^T diag(sin t), so the particle sum
      // only needs the weighted outer product of the sin rows; the constant
      // factor s^2 F F^T is applied once by the caller.
      const Eigen::MatrixXd psi = angles.array().sin();
      out.gramian = psi.transpose() * w.asDiagonal() * psi;
    }
  } else {
    if (mask & kMean) out.mean = Eigen::VectorXd::Zero(m);
    if (mask & kOuter) out.phi_outer = Eigen::MatrixXd::Zero(m, m);
    if (mask & kGramian) out.gramian = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < len; ++i) {
      const Eigen::VectorXd phi = fm.featurize(pts.row(i).transpose());
      if (mask & kMean) out.mean += w(i) * phi;
      if (mask & kOuter) out.phi_outer += w(i) * phi * phi.transpose();
      if (mask & kGramian) {
        const Eigen::MatrixXd jac = fm.jacobian(pts.row(i).transpose());
        out.gramian += w(i) * jac.transpose() * jac;
      }
    }
  }
  return out;
}

ChunkStats reduce_stats(const WeightedParticles& p, const FeatureMap& fm, int mask) {
  const int nc = num_chunks(p.size());
  std::vector<ChunkStats> parts(nc);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < nc; ++c) parts[c] = chunk_stats(p, fm, c, mask);

  ChunkStats total = std::move(parts[0]);
  for (int c = 1; c < nc; ++c) {
    if (mask & kMean) total.mean += parts[c].mean;
    if (mask & kOuter) total.phi_outer += parts[c].phi_outer;
    if (mask & kGramian) total.gramian += parts[c].gramian;
  }
  if ((mask & kGramian) && fm.kind() == FeatureKind::Rff) {
    const Eigen::MatrixXd gram = fm.frequencies() * fm.frequencies().transpose();
    total.gramian = (fm.scale() * fm.scale()) * total.gramian.cwiseProduct(gram);
  }
  return total;
}

}  // namespace

Eigen::VectorXd mean_embedding(const WeightedParticles& p, const FeatureMap& fm) {
  check_inputs(p, fm, 0);
  return reduce_stats(p, fm, kMean).mean;
}

Eigen::MatrixXd covariance(const WeightedParticles& p, const FeatureMap& fm, int gamma) {
  check_inputs(p, fm, gamma);
  ChunkStats s = reduce_stats(p, fm, kMean | kOuter);
  if (gamma == 1) s.phi_outer -= s.mean * s.mean.transpose();
  return s.phi_outer;
}

Eigen::MatrixXd jacobian_gramian(const WeightedParticles& p, const FeatureMap& fm) {
  check_inputs(p, fm, 0);
  return reduce_stats(p, fm, kGramian).gramian;
}

EmbeddingSet embedding_set(const WeightedParticles& p, const FeatureMap& fm, int gamma) {
  check_inputs(p, fm, gamma);
  ChunkStats s = reduce_stats(p, fm, kMean | kOuter | kGramian);
  EmbeddingSet out;
  out.gamma = gamma;
  out.mean = std::move(s.mean);
  out.covariance = std::move(s.phi_outer);
  if (gamma == 1) out.covariance -= out.mean * out.mean.transpose();
  out.jac_gramian = std::move(s.gramian);
  return out;
}

Eigen::VectorXd embedding_delta(const WeightedParticles& target, const WeightedParticles& source,
                                const FeatureMap& fm) {
  if (target.dim() != source.dim())
    throw std::invalid_argument("embedding_delta: dimension mismatch between target and source");
  return mean_embedding(target, fm) - mean_embedding(source, fm);
}

namespace serial {

Eigen::VectorXd mean_embedding(const WeightedParticles& p, const FeatureMap& fm) {
  check_inputs(p, fm, 0);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(fm.dim_out());
  for (int j = 0; j < p.size(); ++j)
    mu += p.weights(j) * fm.featurize(p.points.row(j).transpose());
  return mu;
}

Eigen::MatrixXd covariance(const WeightedParticles& p, const FeatureMap& fm, int gamma) {
  check_inputs(p, fm, gamma);
  const int m = fm.dim_out();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < p.size(); ++j) {
    const Eigen::VectorXd phi = fm.featurize(p.points.row(j).transpose());
    cov += p.weights(j) * phi * phi.transpose();
    mu += p.weights(j) * phi;
  }
  if (gamma == 1) cov -= mu * mu.transpose();
  return cov;
}

Eigen::MatrixXd jacobian_gramian(const WeightedParticles& p, const FeatureMap& fm) {
  check_inputs(p, fm, 0);
  const int m = fm.dim_out();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < p.size(); ++j) {
    const Eigen::MatrixXd jac = fm.jacobian(p.points.row(j).transpose());
    gram += p.weights(j) * jac.transpose() * jac;
  }
  return gram;
}

EmbeddingSet embedding_set(const WeightedParticles& p, const FeatureMap& fm, int gamma) {
  EmbeddingSet out;
  out.gamma = gamma;
  out.mean = serial::mean_embedding(p, fm);
  out.covariance = serial::covariance(p, fm, gamma);
  out.jac_gramian = serial::jacobian_gramian(p, fm);
  return out;
}

}  // namespace serial

}  // namespace usd
