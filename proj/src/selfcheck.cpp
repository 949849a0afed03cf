#include "usd/selfcheck.hpp"

#include <algorithm>
#include <cmath>

#include "usd/embeddings.hpp"
#include "usd/features.hpp"
#include "usd/mmd.hpp"
#include "usd/neural.hpp"
#include "usd/particles.hpp"
#include "usd/rng.hpp"
#include "usd/sobolev_fisher.hpp"

namespace usd {

namespace {

WeightedParticles random_cloud(int n, int d, Rng& rng, bool random_weights) {
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) pts(i, k) = rng.normal();
  WeightedParticles p = WeightedParticles::uniform(std::move(pts));
  if (random_weights) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      p.weights(i) = 0.1 + rng.uniform();
      total += p.weights(i);
    }
    p.weights /= total;
  }
  return p;
}

bool report(std::ostream& out, const char* name, bool ok, double worst) {
  out << (ok ? "[PASS] " : "[FAIL] ") << name << " (worst " << worst << ")\n";
  return ok;
}

bool check_residuals(std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + static_cast<int>(rng.uniform_int(3));
    const int m = 16 + static_cast<int>(rng.uniform_int(48));
    const auto fm = FeatureMap::rff(d, m, 1.0, rng.next_u64());
    const auto target = random_cloud(60, d, rng, true);
    const auto source = random_cloud(50, d, rng, true);
    const double alpha = 0.1 + rng.uniform();
    const double lambda = 1e-4 + 1e-3 * rng.uniform();
    const int gamma = (trial % 2 == 0) ? 1 : 0;
    const auto critic = solve_critic(target, source, fm, alpha, lambda, gamma);

    const auto es = embedding_set(source, fm, gamma);
    const Eigen::VectorXd delta = embedding_delta(target, source, fm);
    const Eigen::MatrixXd a = es.jac_gramian + alpha * es.covariance +
                              lambda * Eigen::MatrixXd::Identity(fm.dim_out(), fm.dim_out());
    const double rel = (a * critic.coeffs - delta).norm() / std::max(1e-30, delta.norm());
    worst = std::max(worst, rel);
  }
  return report(out, "critic solve residual <= 1e-8", worst <= 1e-8, worst);
}

bool check_kernel_gradients(std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  double worst = 0.0;
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 2;
    const auto fm = FeatureMap::rff(d, 48, 1.0, rng.next_u64());
    const auto target = random_cloud(40, d, rng, false);
    const auto source = random_cloud(40, d, rng, false);
    const auto critic = solve_critic(target, source, fm, 0.5, 1e-3, 1.0);
    for (int pt = 0; pt < 4; ++pt) {
      Eigen::VectorXd x(d);
      for (int k = 0; k < d; ++k) x(k) = rng.normal();
      const Eigen::VectorXd g = critic.grad(x);
      for (int k = 0; k < d; ++k) {
        Eigen::VectorXd xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        const double fd = (critic.value(xp) - critic.value(xm)) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g(k)));
      }
    }
  }
  return report(out, "critic gradient matches finite differences", worst <= 1e-6, worst);
}

bool check_neural_gradients(std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  double worst = 0.0;
  const double h = 1e-4;
  for (int trial = 0; trial < 3; ++trial) {
    const int d = 2;
    NeuralCritic critic(d, {5, 4}, Activation::Tanh, rng.next_u64());
    const auto target = random_cloud(12, d, rng, true);
    const auto source = random_cloud(10, d, rng, true);
    const double alpha = 0.5;
    const int gamma = 1;
    const double lambda_aug = 0.3;
    const double rho = 0.05;

    const auto ag = alm_param_grad(critic, target, source, lambda_aug, rho, alpha, gamma);
    const Eigen::VectorXd grad = ag.grads.flatten();
    Eigen::VectorXd theta = critic.parameters();
    for (int rep = 0; rep < 12; ++rep) {
      const int j = static_cast<int>(rng.uniform_int(theta.size()));
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      critic.set_parameters(tp);
      const double op = alm_objective(critic, target, source, lambda_aug, rho, alpha, gamma)
                            .objective;
      critic.set_parameters(tm);
      const double om = alm_objective(critic, target, source, lambda_aug, rho, alpha, gamma)
                            .objective;
      const double fd = (op - om) / (2.0 * h);
      const double rel = std::abs(fd - grad(j)) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
    }
    critic.set_parameters(theta);
  }
  return report(out, "augmented Lagrangian gradient matches finite differences",
                worst <= 1e-4, worst);
}

bool check_inequalities(std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  double worst_gap = 0.0;
  bool order_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2;
    const auto fm = FeatureMap::rff(d, 64, 1.0, rng.next_u64());
    auto target = random_cloud(50, d, rng, true);
    auto source = random_cloud(50, d, rng, true);
    target.points.array() += 0.5;
    const double lambda = 1e-3;

    const double m2 = mmd2(target, source, fm);
    const double sf2_hi = sf_discrepancy(target, source, fm, 1.0, lambda, 1);
    const double sf2_lo = sf_discrepancy(target, source, fm, 0.1, lambda, 1);
    const double sf2_0 = sf_discrepancy(target, source, fm, 0.0, lambda, 1);

    const double slack = 1e-10 * std::max(1.0, m2);
    worst_gap = std::max(worst_gap, lambda * sf2_hi - m2);
    if (lambda * sf2_hi > m2 + slack) order_ok = false;
    if (sf2_hi > sf2_lo + 1e-12 || sf2_lo > sf2_0 + 1e-12) order_ok = false;
  }
  return report(out, "lambda*SF^2 <= MMD^2 and SF decreasing in alpha", order_ok, worst_gap);
}

}  // namespace

bool self_check(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  ok &= check_residuals(derive_seed(seed, 101), out);
  ok &= check_kernel_gradients(derive_seed(seed, 102), out);
  ok &= check_neural_gradients(derive_seed(seed, 103), out);
  ok &= check_inequalities(derive_seed(seed, 104), out);
  out << (ok ? "all checks passed\n" : "checks FAILED\n");
  return ok;
}

}  // namespace usd
