#include <cmath>

#include <doctest.h>

#include "usd/embeddings.hpp"
#include "usd/mmd.hpp"
#include "usd/sobolev_fisher.hpp"
#include "test_util.hpp"

using namespace usd;

namespace {

Eigen::MatrixXd system_matrix(const WeightedParticles& source, const FeatureMap& fm,
                              double alpha, double lambda, int gamma) {
  const auto es = embedding_set(source, fm, gamma);
  return es.jac_gramian + alpha * es.covariance +
         lambda * Eigen::MatrixXd::Identity(fm.dim_out(), fm.dim_out());
}

}  // namespace

TEST_CASE("critic coefficients match a dense inverse oracle") {
  usd::Rng rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    const auto fm = FeatureMap::rff(2, 32, 1.0, rng.next_u64());
    const auto target = testutil::random_cloud(50, 2, rng, true);
    const auto source = testutil::random_cloud(40, 2, rng, true);
    const double alpha = trial % 2 == 0 ? 0.5 : 0.0;
    const double lambda = trial % 3 == 0 ? 1e-1 : 1e-3;
    const int gamma = trial % 2;

    const auto critic = solve_critic(target, source, fm, alpha, lambda, gamma);
    const Eigen::MatrixXd a = system_matrix(source, fm, alpha, lambda, gamma);
    const Eigen::VectorXd delta = embedding_delta(target, source, fm);
    const Eigen::VectorXd oracle = a.fullPivLu().solve(delta);

    CHECK((critic.coeffs - oracle).norm() / oracle.norm() < 1e-10);
    CHECK((a * critic.coeffs - delta).norm() / delta.norm() < 1e-8);
    CHECK_FALSE(critic.cholesky_fallback);
  }
}

TEST_CASE("critic value and gradient agree with finite differences") {
  usd::Rng rng(6);
  const auto fm = FeatureMap::rff(2, 40, 1.1, 77);
  const auto target = testutil::random_cloud(30, 2, rng);
  const auto source = testutil::random_cloud(30, 2, rng);
  const auto critic = solve_critic(target, source, fm, 0.5, 1e-3, 1);
  const double h = 1e-5;
  for (int rep = 0; rep < 6; ++rep) {
    Eigen::VectorXd x(2);
    x << rng.normal(), rng.normal();
    const Eigen::VectorXd g = critic.grad(x);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const double fd = (critic.value(xp) - critic.value(xm)) / (2.0 * h);
      CHECK(std::abs(fd - g(k)) < 1e-6);
    }
  }
}

TEST_CASE("batch critic evaluation matches serial reference and singles") {
  usd::Rng rng(10);
  const auto fm = FeatureMap::rff(3, 24, 1.0, 13);
  const auto target = testutil::random_cloud(40, 3, rng);
  const auto source = testutil::random_cloud(35, 3, rng);
  const auto critic = solve_critic(target, source, fm, 0.5, 1e-3, 1);
  const auto probe = testutil::random_cloud(1500, 3, rng);

  const Eigen::VectorXd vals = critic_values(critic, probe.points);
  const Eigen::VectorXd vals_ref = serial::critic_values(critic, probe.points);
  CHECK((vals - vals_ref).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::MatrixXd grads = critic_grads(critic, probe.points);
  const Eigen::MatrixXd grads_ref = serial::critic_grads(critic, probe.points);
  CHECK((grads - grads_ref).cwiseAbs().maxCoeff() < 1e-12);

  for (int i : {0, 7, 1499}) {
    CHECK(std::abs(vals(i) - critic.value(probe.points.row(i).transpose())) < 1e-12);
    CHECK((grads.row(i).transpose() - critic.grad(probe.points.row(i).transpose())).norm() <
          1e-12);
  }
}

TEST_CASE("large ridge collapses the critic toward delta over lambda") {
  usd::Rng rng(14);
  const auto fm = FeatureMap::rff(2, 24, 1.0, 15);
  const auto target = testutil::random_cloud(30, 2, rng, true);
  const auto source = testutil::random_cloud(30, 2, rng, true);
  const double lambda = 1e8;
  const auto critic = solve_critic(target, source, fm, 0.5, lambda, 1);
  const Eigen::VectorXd delta = embedding_delta(target, source, fm);
  CHECK((lambda * critic.coeffs - delta).norm() / delta.norm() < 1e-6);
}

TEST_CASE("identical clouds produce a zero critic") {
  usd::Rng rng(18);
  const auto p = testutil::random_cloud(25, 2, rng, true);
  const auto critic = solve_critic(p, p, FeatureMap::rff(2, 16, 1.0, 3), 0.5, 1e-3, 1);
  CHECK(critic.coeffs.norm() < 1e-14);
  CHECK(sf_discrepancy(critic, Eigen::VectorXd::Zero(16)) == 0.0);
}

TEST_CASE("discrepancy decreases when alpha or lambda grow") {
  usd::Rng rng(22);
  const auto fm = FeatureMap::rff(2, 48, 1.0, 19);
  auto target = testutil::random_cloud(60, 2, rng, true);
  const auto source = testutil::random_cloud(60, 2, rng, true);
  target.points.array() += 0.7;

  const double sf_a0 = sf_discrepancy(target, source, fm, 0.0, 1e-3, 1);
  const double sf_a5 = sf_discrepancy(target, source, fm, 0.5, 1e-3, 1);
  const double sf_a9 = sf_discrepancy(target, source, fm, 2.0, 1e-3, 1);
  CHECK(sf_a5 <= sf_a0 + 1e-12);
  CHECK(sf_a9 <= sf_a5 + 1e-12);

  const double sf_l1 = sf_discrepancy(target, source, fm, 0.5, 1e-2, 1);
  const double sf_l2 = sf_discrepancy(target, source, fm, 0.5, 1e-1, 1);
  CHECK(sf_l1 <= sf_a5 + 1e-12);
  CHECK(sf_l2 <= sf_l1 + 1e-12);

  // strict drop when the critic has variance under the source
  const auto es = embedding_set(source, fm, 1);
  const Eigen::VectorXd delta = embedding_delta(target, source, fm);
  if (delta.dot(es.covariance * delta) > 1e-6) CHECK(sf_a0 - sf_a5 > 1e-12);
}

TEST_CASE("scaled discrepancy stays below the squared mmd") {
  usd::Rng rng(26);
  for (int trial = 0; trial < 10; ++trial) {
    const auto fm = FeatureMap::rff(2, 32, 1.0, rng.next_u64());
    auto target = testutil::random_cloud(40, 2, rng, true);
    const auto source = testutil::random_cloud(40, 2, rng, true);
    target.points.array() += rng.uniform();
    const double lambda = 1e-3;
    const double sf2 = sf_discrepancy(target, source, fm, 0.7, lambda, 1);
    const double m2 = mmd2(target, source, fm);
    CHECK(lambda * sf2 <= m2 + 1e-10 * std::max(1.0, m2));
  }
}

TEST_CASE("whitened spectrum reconstructs the critic") {
  usd::Rng rng(30);
  for (int trial = 0; trial < 5; ++trial) {
    const auto fm = FeatureMap::rff(2, 28, 1.0, rng.next_u64());
    auto target = testutil::random_cloud(45, 2, rng, true);
    const auto source = testutil::random_cloud(45, 2, rng, true);
    target.points.array() += 0.4;
    const double alpha = 0.5;
    const double lambda = 1e-3;
    const int gamma = trial % 2;

    const auto critic = solve_critic(target, source, fm, alpha, lambda, gamma);
    const auto spec = whitened_spectrum(target, source, fm, alpha, lambda, gamma);
    const Eigen::VectorXd recon = critic_from_spectrum(spec, alpha);
    CHECK((recon - critic.coeffs).norm() / critic.coeffs.norm() < 1e-6);

    CHECK((spec.whitener - spec.whitener.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    for (int j = 1; j < spec.eigvals.size(); ++j)
      CHECK(spec.eigvals(j) <= spec.eigvals(j - 1) + 1e-12);
    CHECK(spec.eigvals.minCoeff() > -1e-8 * std::max(1.0, spec.eigvals.maxCoeff()));
  }
}

TEST_CASE("whitened spectrum requires positive regularizers") {
  usd::Rng rng(34);
  const auto fm = FeatureMap::rff(2, 16, 1.0, 1);
  const auto target = testutil::random_cloud(20, 2, rng);
  const auto source = testutil::random_cloud(20, 2, rng);
  CHECK_THROWS(whitened_spectrum(target, source, fm, 0.0, 1e-3, 1));
  CHECK_THROWS(whitened_spectrum(target, source, fm, 0.5, 0.0, 1));
}

TEST_CASE("solver rejects invalid inputs") {
  usd::Rng rng(38);
  const auto fm = FeatureMap::rff(2, 16, 1.0, 1);
  const auto p2 = testutil::random_cloud(10, 2, rng);
  const auto p3 = testutil::random_cloud(10, 3, rng);
  CHECK_THROWS(solve_critic(p3, p2, fm, 0.5, 1e-3, 1));
  CHECK_THROWS(solve_critic(p2, p2, fm, -0.1, 1e-3, 1));
  CHECK_THROWS(solve_critic(p2, p2, fm, 0.5, 0.0, 1));
  CHECK_THROWS(solve_critic(p2, p2, fm, 0.5, 1e-3, 2));
}
