#pragma once

#include "usd/embeddings.hpp"

namespace usd {

// Critic of the kernel Sobolev-Fisher discrepancy between a target p and a
// weighted source q, in feature coordinates:
//
//   (D(q) + alpha C_gamma(q) + lambda I) u = mu(p) - mu(q)
//
// The critic function is u(x) = <coeffs, phi(x)> and its spatial gradient is
// J_phi(x) coeffs.
struct KernelCritic {
  Eigen::VectorXd coeffs;
  const FeatureMap* map = nullptr;  // not owned, must outlive the critic
  double alpha = 0.0;
  double lambda = 0.0;
  int gamma = 1;
  bool cholesky_fallback = false;  // LLT failed, LDLT was used instead

  double value(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd grad(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

KernelCritic solve_critic(const WeightedParticles& target, const WeightedParticles& source,
                          const FeatureMap& fm, double alpha, double lambda, int gamma);

// Same solve, reusing source embeddings and the embedding delta when the
// caller already has them.
KernelCritic solve_critic(const EmbeddingSet& source_emb, const Eigen::VectorXd& delta,
                          const FeatureMap& fm, double alpha, double lambda);

// SF^2 = <u, delta>, clamped at zero before reporting.
double sf_discrepancy(const KernelCritic& critic, const Eigen::VectorXd& delta);
double sf_discrepancy(const WeightedParticles& target, const WeightedParticles& source,
                      const FeatureMap& fm, double alpha, double lambda, int gamma);

// Critic values / spatial gradients over rows of pts, parallel over rows.
Eigen::VectorXd critic_values(const KernelCritic& critic,
                              const Eigen::Ref<const Eigen::MatrixXd>& pts);
Eigen::MatrixXd critic_grads(const KernelCritic& critic,
                             const Eigen::Ref<const Eigen::MatrixXd>& pts);

// Eigendecomposition of the whitened smoothing operator
//   Dt = W D W,  W = (C_gamma + (lambda/alpha) I)^{-1/2}
// with eigenvalues floored at 1e-12 inside the inverse square root. The
// critic can be reassembled as W (Dt + alpha I)^{-1} W delta.
struct WhitenedSpectrum {
  Eigen::VectorXd eigvals;  // descending
  Eigen::MatrixXd eigvecs;  // columns, matching eigvals
  Eigen::MatrixXd whitener;
  Eigen::VectorXd whitened_delta;
};

WhitenedSpectrum whitened_spectrum(const WeightedParticles& target,
                                   const WeightedParticles& source, const FeatureMap& fm,
                                   double alpha, double lambda, int gamma);

Eigen::VectorXd critic_from_spectrum(const WhitenedSpectrum& spec, double alpha);

namespace serial {
Eigen::VectorXd critic_values(const KernelCritic& critic,
                              const Eigen::Ref<const Eigen::MatrixXd>& pts);
Eigen::MatrixXd critic_grads(const KernelCritic& critic,
                             const Eigen::Ref<const Eigen::MatrixXd>& pts);
}  // namespace serial

}  // namespace usd
