#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "usd/descent.hpp"
#include "usd/embeddings.hpp"
#include "usd/parallel.hpp"
#include "test_util.hpp"

using namespace usd;

namespace {

DescentState uniform_state(const Eigen::MatrixXd& pts) {
  return DescentState::from(WeightedParticles::uniform(pts));
}

DescentConfig base_config() {
  DescentConfig cfg;
  cfg.alpha = 0.5;
  cfg.lambda = 1e-3;
  cfg.gamma = 1;
  cfg.step_size = 0.05;
  cfg.reaction_rate = 1e-3;
  cfg.n_steps = 150;
  cfg.reaction_mode = ReactionMode::Weighted;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("balanced reweighing reproduces the softmax hand value") {
  Eigen::MatrixXd pts(2, 1);
  pts << 0.0, 1.0;
  DescentState state = uniform_state(pts);
  Eigen::VectorXd values(2);
  values << 1.0, 0.0;
  reweight_from_values(state, values, 2.0, 1);

  const auto p = state.particles();
  const double expect_hi = std::exp(2.0) / (std::exp(2.0) + 1.0);
  CHECK(p.weights(0) == doctest::Approx(expect_hi).epsilon(1e-14));
  CHECK(p.weights(1) == doctest::Approx(1.0 - expect_hi).epsilon(1e-14));
  CHECK(std::abs(p.total_mass() - 1.0) < 1e-12);
}

TEST_CASE("unbalanced reweighing books mass multiplicatively") {
  usd::Rng rng(3);
  Eigen::MatrixXd pts(5, 2);
  for (int i = 0; i < 5; ++i) pts.row(i) << rng.normal(), rng.normal();
  DescentState state = uniform_state(pts);
  Eigen::VectorXd values(5);
  values << 0.4, -0.3, 1.2, 0.0, -2.0;
  const double tau = 0.7;

  const auto before = state.particles();
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) expected += before.weights(i) * std::exp(tau * values(i));

  reweight_from_values(state, values, tau, 0);
  CHECK(std::abs(state.particles().total_mass() - expected) < 1e-12);
  CHECK_FALSE(state.weight_clamp_hit);
}

TEST_CASE("unbalanced reweighing clamps runaway log weights and flags it") {
  Eigen::MatrixXd pts(2, 1);
  pts << 0.0, 1.0;
  DescentState state = uniform_state(pts);
  Eigen::VectorXd values(2);
  values << 1e6, -1e6;
  reweight_from_values(state, values, 1.0, 0);
  CHECK(state.weight_clamp_hit);
  CHECK(state.log_weights(0) == 50.0);
  CHECK(state.log_weights(1) == -50.0);
}

TEST_CASE("advection follows the critic gradient exactly for a linear critic") {
  const auto fm = FeatureMap::identity(2);
  KernelCritic critic;
  critic.map = &fm;
  critic.coeffs = Eigen::VectorXd(2);
  critic.coeffs << 1.5, -2.0;

  usd::Rng rng(5);
  Eigen::MatrixXd pts(4, 2);
  for (int i = 0; i < 4; ++i) pts.row(i) << rng.normal(), rng.normal();
  DescentState state = uniform_state(pts);
  advect(state, critic, 0.1);

  for (int i = 0; i < 4; ++i) {
    CHECK(state.points(i, 0) == doctest::Approx(pts(i, 0) + 0.1 * 1.5).epsilon(1e-15));
    CHECK(state.points(i, 1) == doctest::Approx(pts(i, 1) - 0.1 * 2.0).epsilon(1e-15));
  }
}

TEST_CASE("birth death duplication frequency sits inside the binomial band") {
  const int n = 10000;
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(n, 1);
  usd::Rng rng_pts(7);
  for (int i = 0; i < n; ++i) pts(i, 0) = rng_pts.normal();
  DescentState state = uniform_state(pts);

  const double alpha = 0.5;
  const double tau = 0.8;
  const double beta = 1.3;
  Eigen::VectorXd values = Eigen::VectorXd::Constant(n, beta);

  usd::Rng rng(11);
  BirthDeathStats stats;
  const DescentState next =
      birth_death_from_values(state, values, nullptr, alpha, tau, 0, rng, &stats);

  const double p_dup = 1.0 - std::exp(-alpha * tau * beta);
  const double mean = n * p_dup;
  const double sigma = std::sqrt(n * p_dup * (1.0 - p_dup));
  CHECK(std::abs(stats.n_duplicated - mean) <= 3.0 * sigma);
  CHECK(stats.n_killed == 0);
  CHECK(next.points.rows() == n);
  CHECK(std::abs(next.particles().total_mass() - 1.0) < 1e-12);
}

TEST_CASE("birth death kill frequency sits inside the binomial band") {
  const int n = 10000;
  usd::Rng rng_pts(9);
  Eigen::MatrixXd pts(n, 1);
  for (int i = 0; i < n; ++i) pts(i, 0) = rng_pts.normal();
  DescentState state = uniform_state(pts);

  const double alpha = 0.5;
  const double tau = 0.8;
  const double beta = -0.9;
  Eigen::VectorXd values = Eigen::VectorXd::Constant(n, beta);

  usd::Rng rng(13);
  BirthDeathStats stats;
  const DescentState next =
      birth_death_from_values(state, values, nullptr, alpha, tau, 0, rng, &stats);

  const double p_kill = 1.0 - std::exp(-alpha * tau * std::abs(beta));
  const double mean = n * p_kill;
  const double sigma = std::sqrt(n * p_kill * (1.0 - p_kill));
  CHECK(std::abs(stats.n_killed - mean) <= 3.0 * sigma);
  CHECK(stats.n_duplicated == 0);
  CHECK(next.points.rows() == n);
}

TEST_CASE("birth death is deterministic under the reaction seed") {
  usd::Rng rng_pts(15);
  Eigen::MatrixXd pts(200, 2);
  for (int i = 0; i < 200; ++i) pts.row(i) << rng_pts.normal(), rng_pts.normal();
  DescentState state = uniform_state(pts);
  Eigen::VectorXd values(200);
  for (int i = 0; i < 200; ++i) values(i) = std::sin(0.1 * i);

  usd::Rng rng_a(21), rng_b(21);
  const auto a = birth_death_from_values(state, values, nullptr, 0.5, 2.0, 1, rng_a);
  const auto b = birth_death_from_values(state, values, nullptr, 0.5, 2.0, 1, rng_b);
  CHECK(a.points == b.points);
  CHECK(a.log_weights == b.log_weights);
}

TEST_CASE("sequential mean variant also restores the population") {
  usd::Rng rng_pts(17);
  Eigen::MatrixXd pts(150, 2);
  for (int i = 0; i < 150; ++i) pts.row(i) << rng_pts.normal(), rng_pts.normal();
  DescentState state = uniform_state(pts);
  Eigen::VectorXd fresh(150), stale(150);
  for (int i = 0; i < 150; ++i) {
    fresh(i) = std::cos(0.2 * i);
    stale(i) = std::cos(0.2 * i + 0.05);
  }
  usd::Rng rng(23);
  const auto next = birth_death_from_values(state, fresh, &stale, 0.5, 2.0, 1, rng);
  CHECK(next.points.rows() == 150);
  CHECK(std::abs(next.particles().total_mass() - 1.0) < 1e-12);
}

TEST_CASE("birth death rejects non uniform weights and total extinction") {
  Eigen::MatrixXd pts(3, 1);
  pts << 0.0, 1.0, 2.0;
  DescentState lopsided = uniform_state(pts);
  lopsided.log_weights(0) += 0.5;
  Eigen::VectorXd values = Eigen::VectorXd::Zero(3);
  usd::Rng rng(25);
  CHECK_THROWS(birth_death_from_values(lopsided, values, nullptr, 0.5, 1.0, 0, rng));

  DescentState state = uniform_state(pts);
  Eigen::VectorXd doom = Eigen::VectorXd::Constant(3, -1e9);
  CHECK_THROWS_AS(birth_death_from_values(state, doom, nullptr, 0.5, 1.0, 0, rng),
                  std::runtime_error);
}

TEST_CASE("kernel descent contracts a shifted gaussian and keeps mass") {
  usd::Rng rng(31);
  const auto source = testutil::gaussian_cloud(200, 2, 0.0, rng);
  const auto target = testutil::gaussian_cloud(200, 2, 2.0, rng);
  const auto fm = FeatureMap::rff(2, 64, std::sqrt(2.0), 41);
  const auto eval_fm = evaluation_map(2, 43);

  DescentConfig cfg = base_config();
  cfg.snapshot_every = 50;
  const auto run = run_kernel_usd(target, source, fm, eval_fm, cfg);

  REQUIRE_FALSE(run.error.has_value());
  REQUIRE(static_cast<int>(run.trace.records.size()) == cfg.n_steps + 1);

  const auto& recs = run.trace.records;
  CHECK(recs.back().mmd2_descent < 0.3 * recs.front().mmd2_descent);
  CHECK(recs.back().mmd2 < recs.front().mmd2);

  int non_increasing = 0;
  for (std::size_t i = 1; i < recs.size(); ++i)
    if (recs[i].mmd2_descent <= recs[i - 1].mmd2_descent + 1e-15) ++non_increasing;
  CHECK(non_increasing >= static_cast<int>(0.95 * (recs.size() - 1)));

  for (const auto& r : recs) CHECK(std::abs(r.total_mass - 1.0) < 1e-12);

  REQUIRE(run.trace.snapshots.size() == 4);
  CHECK(run.trace.snapshot_steps == std::vector<int>{0, 50, 100, 150});
}

TEST_CASE("descent without reaction leaves the weights alone") {
  usd::Rng rng(35);
  const auto source = testutil::gaussian_cloud(80, 2, 0.0, rng);
  const auto target = testutil::gaussian_cloud(80, 2, 1.0, rng);
  const auto fm = FeatureMap::rff(2, 32, 1.0, 3);
  DescentConfig cfg = base_config();
  cfg.reaction_mode = ReactionMode::None;
  cfg.n_steps = 20;
  const auto run = run_kernel_usd(target, source, fm, evaluation_map(2, 5), cfg);
  REQUIRE_FALSE(run.error.has_value());
  for (const auto& r : run.trace.records) CHECK(r.total_mass == run.trace.records[0].total_mass);
  CHECK((run.final_state.particles().weights.array() - 1.0 / 80.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("birth death descent keeps the population size pinned") {
  usd::Rng rng(39);
  const auto source = testutil::gaussian_cloud(120, 2, 0.0, rng);
  const auto target = testutil::gaussian_cloud(120, 2, 1.5, rng);
  const auto fm = FeatureMap::rff(2, 48, std::sqrt(2.0), 7);
  DescentConfig cfg = base_config();
  cfg.reaction_mode = ReactionMode::BirthDeath;
  cfg.reaction_rate = 0.05;
  cfg.n_steps = 30;
  const auto run = run_kernel_usd(target, source, fm, evaluation_map(2, 9), cfg);
  REQUIRE_FALSE(run.error.has_value());
  for (const auto& r : run.trace.records) {
    CHECK(r.n_particles == 120);
    CHECK(std::abs(r.total_mass - 1.0) < 1e-12);
  }
}

TEST_CASE("descent reruns are bit identical and thread count independent") {
  usd::Rng rng(43);
  const auto source = testutil::gaussian_cloud(100, 2, 0.0, rng);
  const auto target = testutil::gaussian_cloud(100, 2, 1.0, rng);
  const auto fm = FeatureMap::rff(2, 32, 1.0, 11);
  const auto eval_fm = evaluation_map(2, 13);
  DescentConfig cfg = base_config();
  cfg.reaction_mode = ReactionMode::BirthDeath;
  cfg.reaction_rate = 0.05;
  cfg.n_steps = 15;

  const int before = max_threads();
  set_threads(1);
  const auto a = run_kernel_usd(target, source, fm, eval_fm, cfg);
  set_threads(3);
  const auto b = run_kernel_usd(target, source, fm, eval_fm, cfg);
  set_threads(before);
  const auto c = run_kernel_usd(target, source, fm, eval_fm, cfg);

  REQUIRE_FALSE(a.error.has_value());
  CHECK(a.final_state.points == b.final_state.points);
  CHECK(a.final_state.points == c.final_state.points);
  CHECK(a.final_state.log_weights == b.final_state.log_weights);
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    CHECK(a.trace.records[i].mmd2 == b.trace.records[i].mmd2);
    CHECK(a.trace.records[i].sf2 == b.trace.records[i].sf2);
  }
}

TEST_CASE("matching clouds stay put") {
  usd::Rng rng(47);
  const auto cloud = testutil::gaussian_cloud(100, 2, 0.0, rng);
  const auto fm = FeatureMap::rff(2, 32, 1.0, 15);
  DescentConfig cfg = base_config();
  cfg.n_steps = 10;
  const auto run = run_kernel_usd(cloud, cloud, fm, evaluation_map(2, 17), cfg);
  REQUIRE_FALSE(run.error.has_value());
  CHECK(std::abs(run.trace.records.back().mmd2 - run.trace.records.front().mmd2) < 1e-8);
}

TEST_CASE("zero step run records only the initial state") {
  usd::Rng rng(51);
  const auto source = testutil::gaussian_cloud(30, 2, 0.0, rng);
  const auto target = testutil::gaussian_cloud(30, 2, 1.0, rng);
  DescentConfig cfg = base_config();
  cfg.n_steps = 0;
  const auto run =
      run_kernel_usd(target, source, FeatureMap::rff(2, 16, 1.0, 19), evaluation_map(2, 21), cfg);
  REQUIRE_FALSE(run.error.has_value());
  CHECK(run.trace.records.size() == 1);
  CHECK(run.trace.records[0].step == 0);
}

TEST_CASE("a collapsing birth death run reports the error instead of throwing") {
  usd::Rng rng(55);
  // all-positive cloud and a dominant ridge keep the critic negative
  // everywhere once the target carries almost no mass
  const auto source = testutil::gaussian_cloud(50, 2, 5.0, rng);
  WeightedParticles target = source;
  target.weights *= 1e-6;
  const auto fm = FeatureMap::polynomial(2);
  DescentConfig cfg = base_config();
  cfg.reaction_mode = ReactionMode::BirthDeath;
  cfg.gamma = 0;
  cfg.lambda = 10.0;
  cfg.reaction_rate = 1e5;
  cfg.n_steps = 5;
  const auto run = run_kernel_usd(target, source, fm, evaluation_map(2, 23), cfg);
  REQUIRE(run.error.has_value());
  CHECK(run.trace.records.size() >= 1);
}

TEST_CASE("trace csv uses the pinned header and full precision") {
  DescentTrace trace;
  TraceRecord r;
  r.step = 3;
  r.mmd2 = 0.5;
  r.sf2 = 1.0 / 3.0;
  r.total_mass = 1.0;
  r.n_particles = 7;
  trace.records.push_back(r);

  const std::string path = "trace_golden_test.csv";
  trace.write_csv(path);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str() ==
        "step,mmd2,sf2,total_mass,n_particles\n"
        "3,0.5,0.33333333333333331,1,7\n");
  std::remove(path.c_str());
}

TEST_CASE("midpoint search picks the equidistant snapshot") {
  usd::Rng rng(59);
  const auto source = testutil::gaussian_cloud(150, 2, -2.0, rng);
  const auto target = testutil::gaussian_cloud(150, 2, 2.0, rng);
  const auto middle = testutil::gaussian_cloud(150, 2, 0.0, rng);

  DescentTrace trace;
  trace.snapshot_steps = {0, 10, 20};
  usd::Rng rng2(61);
  trace.snapshots = {testutil::gaussian_cloud(150, 2, -1.8, rng2), middle,
                     testutil::gaussian_cloud(150, 2, 1.8, rng2)};

  const auto eval_fm = evaluation_map(2, 25);
  const auto mid = find_midpoint(trace, source, target, eval_fm);
  CHECK(mid.snapshot_index == 1);
  CHECK(mid.step == 10);
  CHECK(std::abs(mid.mmd_to_source - mid.mmd_to_target) <
        0.1 * std::sqrt(mmd2(source, target, eval_fm)));
}

TEST_CASE("midpoint ties resolve to the earlier step and empty traces throw") {
  usd::Rng rng(63);
  const auto source = testutil::gaussian_cloud(40, 2, -1.0, rng);
  const auto target = testutil::gaussian_cloud(40, 2, 1.0, rng);
  const auto snap = testutil::gaussian_cloud(40, 2, 0.3, rng);

  DescentTrace trace;
  trace.snapshot_steps = {5, 15};
  trace.snapshots = {snap, snap};
  const auto mid = find_midpoint(trace, source, target, evaluation_map(2, 27));
  CHECK(mid.step == 5);

  DescentTrace empty;
  CHECK_THROWS(find_midpoint(empty, source, target, evaluation_map(2, 29)));
}

TEST_CASE("descent config validation rejects bad values") {
  DescentConfig cfg = base_config();
  cfg.step_size = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = base_config();
  cfg.reaction_rate = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = base_config();
  cfg.gamma = 2;
  CHECK_THROWS(cfg.validate());
  cfg = base_config();
  cfg.reaction_mode = ReactionMode::BirthDeath;
  cfg.alpha = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = base_config();
  cfg.n_steps = -1;
  CHECK_THROWS(cfg.validate());
}
