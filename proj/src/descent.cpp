#include "usd/descent.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace usd {

namespace {
constexpr double kLogClamp = 50.0;
}

void DescentConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("DescentConfig: alpha must be >= 0");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("DescentConfig: lambda must be > 0");
  if (gamma != 0 && gamma != 1) throw std::invalid_argument("DescentConfig: gamma must be 0 or 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("DescentConfig: step_size must be > 0");
  if (reaction_mode != ReactionMode::None &&
      (!(reaction_rate > 0.0) || !std::isfinite(reaction_rate)))
    throw std::invalid_argument("DescentConfig: reaction_rate must be > 0");
  if (n_steps < 0) throw std::invalid_argument("DescentConfig: n_steps must be >= 0");
  if (snapshot_every < 0)
    throw std::invalid_argument("DescentConfig: snapshot_every must be >= 0");
  if (reaction_mode == ReactionMode::BirthDeath && !(alpha > 0.0))
    throw std::invalid_argument("DescentConfig: birth-death needs alpha > 0");
}

WeightedParticles DescentState::particles() const {
  WeightedParticles q;
  q.points = points;
  q.weights = log_weights.array().exp();
  return q;
}

DescentState DescentState::from(const WeightedParticles& q) {
  q.validate();
  DescentState s;
  s.points = q.points;
  s.log_weights = q.weights.array().log();
  return s;
}

void DescentTrace::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("DescentTrace: cannot open " + path);
  out << "step,mmd2,sf2,total_mass,n_particles\n";
  char buf[160];
  for (const TraceRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%d\n", r.step, r.mmd2, r.sf2,
                  r.total_mass, r.n_particles);
    out << buf;
  }
  if (!out) throw std::runtime_error("DescentTrace: write failed for " + path);
}

void advect(DescentState& state, const KernelCritic& critic, double step_size) {
  if (!(step_size > 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("advect: step_size must be > 0");
  const Eigen::MatrixXd grads = critic_grads(critic, state.points);
  if (!grads.allFinite()) throw std::runtime_error("advect: non-finite critic gradient");
  state.points += step_size * grads;
}

void reweight_from_values(DescentState& state, const Eigen::VectorXd& values, double tau,
                          int gamma) {
  if (values.size() != state.log_weights.size())
    throw std::invalid_argument("react_weights: value count does not match particle count");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("react_weights: tau must be > 0");
  if (gamma != 0 && gamma != 1) throw std::invalid_argument("react_weights: gamma must be 0 or 1");
  if (!values.allFinite()) throw std::runtime_error("react_weights: non-finite critic value");

  double mean = 0.0;
  if (gamma == 1) {
    const Eigen::VectorXd w = state.log_weights.array().exp();
    mean = w.dot(values);
  }
  state.log_weights += tau * (values.array() - gamma * mean).matrix();

  if (gamma == 1) {
    // max-shifted softmax keeps the weights an exact probability vector
    const double top = state.log_weights.maxCoeff();
    const double lse = top + std::log((state.log_weights.array() - top).exp().sum());
    state.log_weights.array() -= lse;
  } else {
    if ((state.log_weights.array() > kLogClamp).any() ||
        (state.log_weights.array() < -kLogClamp).any()) {
      if (!state.weight_clamp_hit)
        std::cerr << "react_weights: log weight clamped to [-50, 50]\n";
      state.weight_clamp_hit = true;
      state.log_weights = state.log_weights.cwiseMax(-kLogClamp).cwiseMin(kLogClamp);
    }
  }
}

void react_weights(DescentState& state, const KernelCritic& critic, double tau, int gamma) {
  reweight_from_values(state, critic_values(critic, state.points), tau, gamma);
}

DescentState birth_death_from_values(const DescentState& state, const Eigen::VectorXd& values,
                                     const Eigen::VectorXd* stale_values, double alpha,
                                     double tau, int gamma, Rng& rng, BirthDeathStats* stats) {
  const int n = static_cast<int>(state.points.rows());
  if (values.size() != n)
    throw std::invalid_argument("react_birth_death: value count does not match particle count");
  if (stale_values != nullptr && stale_values->size() != n)
    throw std::invalid_argument("react_birth_death: stale value count mismatch");
  if (!(alpha > 0.0) || !(tau > 0.0))
    throw std::invalid_argument("react_birth_death: alpha and tau must be > 0");
  if (gamma != 0 && gamma != 1)
    throw std::invalid_argument("react_birth_death: gamma must be 0 or 1");
  if (!values.allFinite()) throw std::runtime_error("react_birth_death: non-finite critic value");
  const double log_unif = -std::log(static_cast<double>(n));
  if (((state.log_weights.array() - log_unif).abs() > 1e-9).any())
    throw std::invalid_argument("react_birth_death: weights must be uniform 1/n");

  // gamma = 1 centers the rates at the population mean; the sequential
  // variant re-mixes advected and stale values the way a per-particle sweep
  // would see them.
  double mean_new = values.mean();
  double stale_suffix = stale_values != nullptr ? stale_values->sum() : 0.0;
  double new_prefix = 0.0;

  std::vector<int> survivors;
  survivors.reserve(2 * n);
  BirthDeathStats local;
  for (int j = 0; j < n; ++j) {
    double mean = mean_new;
    if (stale_values != nullptr) {
      new_prefix += values(j);
      stale_suffix -= (*stale_values)(j);
      mean = (new_prefix + stale_suffix) / n;
    }
    const double beta = values(j) - gamma * mean;
    const double draw = rng.uniform();
    int copies = 1;
    if (beta > 0.0 && draw < 1.0 - std::exp(-alpha * tau * beta)) {
      copies = 2;
      ++local.n_duplicated;
    } else if (beta < 0.0 && draw < 1.0 - std::exp(-alpha * tau * (-beta))) {
      copies = 0;
      ++local.n_killed;
    }
    for (int k = 0; k < copies; ++k) survivors.push_back(j);
  }
  local.n_before_restore = static_cast<int>(survivors.size());
  if (survivors.empty()) throw std::runtime_error("react_birth_death: all particles died");

  while (static_cast<int>(survivors.size()) > n)
    survivors.erase(survivors.begin() + rng.uniform_int(static_cast<int>(survivors.size())));
  while (static_cast<int>(survivors.size()) < n)
    survivors.push_back(survivors[rng.uniform_int(static_cast<int>(survivors.size()))]);

  DescentState out;
  out.points.resize(n, state.points.cols());
  for (int i = 0; i < n; ++i) out.points.row(i) = state.points.row(survivors[i]);
  out.log_weights = Eigen::VectorXd::Constant(n, log_unif);
  out.step = state.step;
  out.weight_clamp_hit = state.weight_clamp_hit;
  if (stats != nullptr) *stats = local;
  return out;
}

DescentState react_birth_death(const DescentState& state, const KernelCritic& critic,
                               double alpha, double tau, int gamma, Rng& rng,
                               BirthDeathStats* stats) {
  return birth_death_from_values(state, critic_values(critic, state.points), nullptr, alpha,
                                 tau, gamma, rng, stats);
}

DescentRun run_kernel_usd(const WeightedParticles& target, const WeightedParticles& source,
                          const FeatureMap& fm, const FeatureMap& eval_fm,
                          const DescentConfig& cfg) {
  cfg.validate();
  target.validate();
  source.validate();
  if (target.dim() != source.dim())
    throw std::invalid_argument("run_kernel_usd: dimension mismatch");
  fm.check_point_dim(source.dim());
  eval_fm.check_point_dim(source.dim());

  // birth-death starts from uniform mass over the source points
  DescentState state = cfg.reaction_mode == ReactionMode::BirthDeath
                           ? DescentState::from(WeightedParticles::uniform(source.points))
                           : DescentState::from(source);
  Rng rng(cfg.seed);

  const Eigen::VectorXd mu_p = mean_embedding(target, fm);
  const Eigen::VectorXd mu_p_eval = mean_embedding(target, eval_fm);

  DescentRun run;
  const bool sequential = cfg.sequential_bd_mean;
  for (int step = 0;; ++step) {
    const WeightedParticles q = state.particles();

    KernelCritic critic;
    TraceRecord rec;
    try {
      const EmbeddingSet src = embedding_set(q, fm, cfg.gamma);
      const Eigen::VectorXd delta = mu_p - src.mean;
      critic = solve_critic(src, delta, fm, cfg.alpha, cfg.lambda);
      rec.sf2 = sf_discrepancy(critic, delta);
      rec.mmd2_descent = delta.squaredNorm();
    } catch (const std::exception& e) {
      run.error = e.what();
      break;
    }
    rec.step = step;
    rec.mmd2 = (mu_p_eval - mean_embedding(q, eval_fm)).squaredNorm();
    rec.total_mass = q.total_mass();
    rec.n_particles = q.size();
    run.trace.records.push_back(rec);

    if (cfg.snapshot_every > 0 && (step % cfg.snapshot_every == 0 || step == cfg.n_steps)) {
      run.trace.snapshot_steps.push_back(step);
      run.trace.snapshots.push_back(q);
    }
    if (step == cfg.n_steps) break;

    try {
      switch (cfg.reaction_mode) {
        case ReactionMode::Weighted: {
          const Eigen::VectorXd values = critic_values(critic, state.points);
          reweight_from_values(state, values, cfg.reaction_rate, cfg.gamma);
          advect(state, critic, cfg.step_size);
          break;
        }
        case ReactionMode::BirthDeath: {
          Eigen::MatrixXd prev;
          if (sequential) prev = state.points;
          advect(state, critic, cfg.step_size);
          const Eigen::VectorXd values = critic_values(critic, state.points);
          Eigen::VectorXd stale;
          if (sequential) stale = critic_values(critic, prev);
          state = birth_death_from_values(state, values, sequential ? &stale : nullptr,
                                          cfg.alpha, cfg.reaction_rate, cfg.gamma, rng);
          break;
        }
        case ReactionMode::None:
          advect(state, critic, cfg.step_size);
          break;
      }
    } catch (const std::exception& e) {
      run.error = e.what();
      break;
    }
    state.step = step + 1;
  }

  run.final_state = std::move(state);
  return run;
}

MidpointChoice find_midpoint(const DescentTrace& trace, const WeightedParticles& source,
                             const WeightedParticles& target, const FeatureMap& eval_fm) {
  if (trace.snapshots.empty())
    throw std::invalid_argument("find_midpoint: trace has no snapshots");
  MidpointChoice best;
  double best_gap = 0.0;
  for (int i = 0; i < static_cast<int>(trace.snapshots.size()); ++i) {
    const double to_src = std::sqrt(mmd2(trace.snapshots[i], source, eval_fm));
    const double to_tgt = std::sqrt(mmd2(trace.snapshots[i], target, eval_fm));
    const double gap = std::abs(to_src - to_tgt);
    if (i == 0 || gap < best_gap) {
      best_gap = gap;
      best.snapshot_index = i;
      best.step = trace.snapshot_steps[i];
      best.mmd_to_source = to_src;
      best.mmd_to_target = to_tgt;
    }
  }
  return best;
}

}  // namespace usd
