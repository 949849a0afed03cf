#include "usd/sobolev_fisher.hpp"

#include <cmath>
#include <stdexcept>

#include "usd/parallel.hpp"

namespace usd {

namespace {

void check_params(const FeatureMap& fm, double alpha, double lambda) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("solve_critic: alpha must be >= 0");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("solve_critic: lambda must be > 0");
  (void)fm;
}

}  // namespace

double KernelCritic::value(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return coeffs.dot(map->featurize(x));
}

Eigen::VectorXd KernelCritic::grad(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return map->jacobian(x) * coeffs;
}

KernelCritic solve_critic(const EmbeddingSet& source_emb, const Eigen::VectorXd& delta,
                          const FeatureMap& fm, double alpha, double lambda) {
  check_params(fm, alpha, lambda);
  const int m = fm.dim_out();
  if (source_emb.mean.size() != m || delta.size() != m)
    throw std::invalid_argument("solve_critic: embedding size does not match feature map");

  Eigen::MatrixXd a = source_emb.jac_gramian + alpha * source_emb.covariance;
  a.diagonal().array() += lambda;

  KernelCritic critic;
  critic.map = &fm;
  critic.alpha = alpha;
  critic.lambda = lambda;
  critic.gamma = source_emb.gamma;

  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    critic.coeffs = llt.solve(delta);
    // one step of iterative refinement keeps the residual near round-off
    critic.coeffs += llt.solve(delta - a * critic.coeffs);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("solve_critic: factorization failed");
    critic.cholesky_fallback = true;
    critic.coeffs = ldlt.solve(delta);
    critic.coeffs += ldlt.solve(delta - a * critic.coeffs);
  }
  if (!critic.coeffs.allFinite())
    throw std::runtime_error("solve_critic: non-finite critic coefficients");
  return critic;
}

KernelCritic solve_critic(const WeightedParticles& target, const WeightedParticles& source,
                          const FeatureMap& fm, double alpha, double lambda, int gamma) {
  check_params(fm, alpha, lambda);
  const EmbeddingSet src = embedding_set(source, fm, gamma);
  const Eigen::VectorXd delta = mean_embedding(target, fm) - src.mean;
  return solve_critic(src, delta, fm, alpha, lambda);
}

double sf_discrepancy(const KernelCritic& critic, const Eigen::VectorXd& delta) {
  const double sf2 = critic.coeffs.dot(delta);
  return sf2 > 0.0 ? sf2 : 0.0;
}

double sf_discrepancy(const WeightedParticles& target, const WeightedParticles& source,
                      const FeatureMap& fm, double alpha, double lambda, int gamma) {
  const EmbeddingSet src = embedding_set(source, fm, gamma);
  const Eigen::VectorXd delta = mean_embedding(target, fm) - src.mean;
  return sf_discrepancy(solve_critic(src, delta, fm, alpha, lambda), delta);
}

Eigen::VectorXd critic_values(const KernelCritic& critic,
                              const Eigen::Ref<const Eigen::MatrixXd>& pts) {
  const FeatureMap& fm = *critic.map;
  fm.check_point_dim(static_cast<int>(pts.cols()));
  const int n = static_cast<int>(pts.rows());
  Eigen::VectorXd out(n);
  const int nc = num_chunks(n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < nc; ++c) {
    const int b = chunk_begin(c);
    const int len = chunk_size(c, n);
    out.segment(b, len) = fm.featurize_rows(pts.middleRows(b, len)) * critic.coeffs;
  }
  return out;
}

Eigen::MatrixXd critic_grads(const KernelCritic& critic,
                             const Eigen::Ref<const Eigen::MatrixXd>& pts) {
  const FeatureMap& fm = *critic.map;
  fm.check_point_dim(static_cast<int>(pts.cols()));
  const int n = static_cast<int>(pts.rows());
  Eigen::MatrixXd out(n, fm.dim_in());
  const int nc = num_chunks(n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < nc; ++c) {
    const int b = chunk_begin(c);
    const int len = chunk_size(c, n);
    if (fm.kind() == FeatureKind::Rff) {
      // row i of the gradient block is -s sum_j u_j sin(t_ij) w_j
      const Eigen::MatrixXd angles = fm.rff_angles(pts.middleRows(b, len));
      const Eigen::MatrixXd psi = angles.array().sin();
      out.middleRows(b, len) =
          -fm.scale() * (psi * critic.coeffs.asDiagonal() * fm.frequencies());
    } else {
      for (int i = 0; i < len; ++i)
        out.row(b + i) =
            (fm.jacobian(pts.row(b + i).transpose()) * critic.coeffs).transpose();
    }
  }
  return out;
}

WhitenedSpectrum whitened_spectrum(const WeightedParticles& target,
                                   const WeightedParticles& source, const FeatureMap& fm,
                                   double alpha, double lambda, int gamma) {
  if (!(alpha > 0.0)) throw std::invalid_argument("whitened_spectrum: alpha must be > 0");
  if (!(lambda > 0.0)) throw std::invalid_argument("whitened_spectrum: lambda must be > 0");
  const EmbeddingSet src = embedding_set(source, fm, gamma);
  const Eigen::VectorXd delta = mean_embedding(target, fm) - src.mean;

  Eigen::MatrixXd base = src.covariance;
  base.diagonal().array() += lambda / alpha;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_base(base);
  if (eig_base.info() != Eigen::Success)
    throw std::runtime_error("whitened_spectrum: eigendecomposition failed");
  const double top = eig_base.eigenvalues().maxCoeff();
  if (eig_base.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, top))
    throw std::runtime_error("whitened_spectrum: covariance block is indefinite");

  constexpr double kFloor = 1e-12;
  const Eigen::VectorXd inv_sqrt =
      eig_base.eigenvalues().cwiseMax(kFloor).cwiseSqrt().cwiseInverse();

  WhitenedSpectrum out;
  out.whitener =
      eig_base.eigenvectors() * inv_sqrt.asDiagonal() * eig_base.eigenvectors().transpose();

  Eigen::MatrixXd whitened = out.whitener * src.jac_gramian * out.whitener;
  whitened = 0.5 * (whitened + whitened.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_w(whitened);
  if (eig_w.info() != Eigen::Success)
    throw std::runtime_error("whitened_spectrum: eigendecomposition failed");

  out.eigvals = eig_w.eigenvalues().reverse();
  out.eigvecs = eig_w.eigenvectors().rowwise().reverse();
  out.whitened_delta = out.whitener * delta;
  return out;
}

Eigen::VectorXd critic_from_spectrum(const WhitenedSpectrum& spec, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("critic_from_spectrum: alpha must be > 0");
  const Eigen::VectorXd proj = spec.eigvecs.transpose() * spec.whitened_delta;
  const Eigen::VectorXd scaled =
      proj.array() / (spec.eigvals.array() + alpha);
  return spec.whitener * (spec.eigvecs * scaled);
}

namespace serial {

Eigen::VectorXd critic_values(const KernelCritic& critic,
                              const Eigen::Ref<const Eigen::MatrixXd>& pts) {
  const int n = static_cast<int>(pts.rows());
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out(i) = critic.value(pts.row(i).transpose());
  return out;
}

Eigen::MatrixXd critic_grads(const KernelCritic& critic,
                             const Eigen::Ref<const Eigen::MatrixXd>& pts) {
  const int n = static_cast<int>(pts.rows());
  Eigen::MatrixXd out(n, static_cast<int>(pts.cols()));
  for (int i = 0; i < n; ++i) out.row(i) = critic.grad(pts.row(i).transpose()).transpose();
  return out;
}

}  // namespace serial

}  // namespace usd
