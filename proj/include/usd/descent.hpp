#pragma once

#include <optional>
#include <string>
#include <vector>

#include "usd/mmd.hpp"
#include "usd/rng.hpp"
#include "usd/sobolev_fisher.hpp"

namespace usd {

enum class ReactionMode { Weighted, BirthDeath, None };

struct DescentConfig {
  double alpha = 0.5;           // Fisher damping; 0 recovers pure transport
  double lambda = 1e-3;         // critic ridge
  int gamma = 1;                // 1 keeps source mass normalized
  double step_size = 0.05;      // advection step
  double reaction_rate = 1e-3;  // tau
  int n_steps = 400;
  ReactionMode reaction_mode = ReactionMode::Weighted;
  std::uint64_t seed = 0;       // drives birth-death sampling
  int snapshot_every = 0;       // 0 disables snapshots
  // Recompute the birth-death mean after each particle's advection instead
  // of once per step from the fully advected cloud.
  bool sequential_bd_mean = false;

  void validate() const;
};

// Particle state with weights kept in log space; linear weights are
// materialized only when embeddings or traces need them.
struct DescentState {
  Eigen::MatrixXd points;
  Eigen::VectorXd log_weights;
  int step = 0;
  bool weight_clamp_hit = false;  // a log weight ran into the [-50, 50] clamp

  WeightedParticles particles() const;
  static DescentState from(const WeightedParticles& q);
};

struct TraceRecord {
  int step = 0;
  double mmd2 = 0;  // under the evaluation map
  double sf2 = 0;
  double total_mass = 0;
  int n_particles = 0;
  // |delta|^2 under the map driving the descent; only kernel runs fill it
  double mmd2_descent = 0;
};

struct DescentTrace {
  std::vector<TraceRecord> records;
  std::vector<int> snapshot_steps;
  std::vector<WeightedParticles> snapshots;

  void write_csv(const std::string& path) const;
};

struct BirthDeathStats {
  int n_duplicated = 0;
  int n_killed = 0;
  int n_before_restore = 0;
};

// Moves every particle along the critic gradient at its current position.
// Weights are untouched.
void advect(DescentState& state, const KernelCritic& critic, double step_size);

// Multiplicative reweighing at the state's current positions:
//   a_j <- a_j + tau (u_j - gamma m),  m = sum_j w_j u_j.
// gamma = 1 renormalizes through a max-shifted softmax; gamma = 0 clamps the
// log weights to [-50, 50] and flags the state when the clamp fires.
void react_weights(DescentState& state, const KernelCritic& critic, double tau, int gamma);

// Same reweighing from already evaluated critic values.
void reweight_from_values(DescentState& state, const Eigen::VectorXd& values, double tau,
                          int gamma);

// Birth-death reaction on uniformly weighted particles: particle j is
// duplicated with probability 1 - exp(-alpha tau beta_j) when
// beta_j = u_j - gamma m is positive and killed with probability
// 1 - exp(-alpha tau |beta_j|) when negative, then the population is
// restored to exactly n by uniformly chosen kills or duplications.
// stale_values, when given, holds critic values at the pre-advection
// positions and switches the mean to the sequential per-particle mix.
DescentState react_birth_death(const DescentState& state, const KernelCritic& critic,
                               double alpha, double tau, int gamma, Rng& rng,
                               BirthDeathStats* stats = nullptr);
DescentState birth_death_from_values(const DescentState& state, const Eigen::VectorXd& values,
                                     const Eigen::VectorXd* stale_values, double alpha,
                                     double tau, int gamma, Rng& rng,
                                     BirthDeathStats* stats = nullptr);

struct DescentRun {
  DescentTrace trace;
  DescentState final_state;
  std::optional<std::string> error;  // set when the run stopped early
};

// Alternates critic solve, advection and reaction for n_steps steps. The
// trace holds one record per visited state (n_steps + 1 on a clean run).
// Weighted reactions use critic values at pre-advection positions,
// birth-death uses post-advection positions.
DescentRun run_kernel_usd(const WeightedParticles& target, const WeightedParticles& source,
                          const FeatureMap& fm, const FeatureMap& eval_fm,
                          const DescentConfig& cfg);

struct MidpointChoice {
  int snapshot_index = 0;  // position in trace.snapshots
  int step = 0;
  double mmd_to_source = 0;
  double mmd_to_target = 0;
};

// Snapshot closest to being MMD-equidistant from source and target under
// eval_fm. Ties resolve to the smaller step.
MidpointChoice find_midpoint(const DescentTrace& trace, const WeightedParticles& source,
                             const WeightedParticles& target, const FeatureMap& eval_fm);

}  // namespace usd
