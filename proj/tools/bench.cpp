// Times the OpenMP kernels against their serial reference counterparts.
#include <chrono>
#include <cstdio>
#include <functional>

#include "usd/embeddings.hpp"
#include "usd/features.hpp"
#include "usd/neural.hpp"
#include "usd/parallel.hpp"
#include "usd/particles.hpp"
#include "usd/rng.hpp"
#include "usd/sobolev_fisher.hpp"

using namespace usd;

namespace {

WeightedParticles random_cloud(int n, int d, Rng& rng) {
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) pts(i, k) = rng.normal();
  return WeightedParticles::uniform(std::move(pts));
}

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    if (dt.count() < best) best = dt.count();
  }
  return best;
}

void row(const char* name, double serial_s, double parallel_s) {
  std::printf("%-22s %10.4f ms %10.4f ms %8.2fx\n", name, serial_s * 1e3, parallel_s * 1e3,
              serial_s / parallel_s);
}

}  // namespace

int main() {
  init_threads_from_env();
  std::printf("threads: %d\n", max_threads());
  std::printf("%-22s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  Rng rng(7);
  const int n = 20000;
  const int d = 3;
  const int m = 256;
  const auto cloud = random_cloud(n, d, rng);
  const auto fm = FeatureMap::rff(d, m, 1.0, 11);
  const int reps = 3;

  row("embedding_set",
      time_best_of(reps, [&] { volatile double s = serial::embedding_set(cloud, fm, 1).mean.sum(); (void)s; }),
      time_best_of(reps, [&] { volatile double s = embedding_set(cloud, fm, 1).mean.sum(); (void)s; }));

  const auto target = random_cloud(2000, d, rng);
  const auto critic = solve_critic(target, cloud, fm, 0.5, 1e-3, 1);
  row("critic_values",
      time_best_of(reps, [&] { volatile double s = serial::critic_values(critic, cloud.points).sum(); (void)s; }),
      time_best_of(reps, [&] { volatile double s = critic_values(critic, cloud.points).sum(); (void)s; }));
  row("critic_grads",
      time_best_of(reps, [&] { volatile double s = serial::critic_grads(critic, cloud.points).sum(); (void)s; }),
      time_best_of(reps, [&] { volatile double s = critic_grads(critic, cloud.points).sum(); (void)s; }));

  const NeuralCritic net(d, {64, 128, 64}, Activation::Tanh, 5);
  row("neural forward",
      time_best_of(reps, [&] { volatile double s = serial::forward_rows(net, cloud.points).sum(); (void)s; }),
      time_best_of(reps, [&] { volatile double s = net.forward_rows(cloud.points).sum(); (void)s; }));
  row("neural input_grad",
      time_best_of(reps, [&] { volatile double s = serial::input_grad_rows(net, cloud.points).sum(); (void)s; }),
      time_best_of(reps, [&] { volatile double s = net.input_grad_rows(cloud.points).sum(); (void)s; }));
  return 0;
}
