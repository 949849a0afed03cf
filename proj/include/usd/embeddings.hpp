#pragma once

#include "usd/features.hpp"
#include "usd/particles.hpp"

namespace usd {

// Weighted feature statistics of a particle cloud. All sums use the raw
// weights; nothing is normalized, so total mass enters the embeddings.
struct EmbeddingSet {
  Eigen::VectorXd mean;         // sum_j w_j phi(x_j)
  Eigen::MatrixXd covariance;   // sum_j w_j phi phi^T - gamma mu mu^T
  Eigen::MatrixXd jac_gramian;  // sum_j w_j J(x_j)^T J(x_j)
  int gamma = 1;
};

Eigen::VectorXd mean_embedding(const WeightedParticles& p, const FeatureMap& fm);
Eigen::MatrixXd covariance(const WeightedParticles& p, const FeatureMap& fm, int gamma);
Eigen::MatrixXd jacobian_gramian(const WeightedParticles& p, const FeatureMap& fm);
EmbeddingSet embedding_set(const WeightedParticles& p, const FeatureMap& fm, int gamma);

// mean(target) - mean(source)
Eigen::VectorXd embedding_delta(const WeightedParticles& target, const WeightedParticles& source,
                                const FeatureMap& fm);

namespace serial {

// One particle at a time in index order. Kept as the reference the chunked
// parallel kernels are tested and benchmarked against.
Eigen::VectorXd mean_embedding(const WeightedParticles& p, const FeatureMap& fm);
Eigen::MatrixXd covariance(const WeightedParticles& p, const FeatureMap& fm, int gamma);
Eigen::MatrixXd jacobian_gramian(const WeightedParticles& p, const FeatureMap& fm);
EmbeddingSet embedding_set(const WeightedParticles& p, const FeatureMap& fm, int gamma);

}  // namespace serial

}  // namespace usd
