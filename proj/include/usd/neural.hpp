#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "usd/descent.hpp"
#include "usd/particles.hpp"
#include "usd/rng.hpp"

namespace usd {

enum class Activation { Tanh, Relu, Softplus };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation act);

// Scalar-output MLP with hand-written derivatives. Hidden layers carry a
// bias and the activation; the output layer is linear with no bias. An
// empty hidden list gives the plain linear critic f(x) = <w, x>.
class NeuralCritic {
 public:
  NeuralCritic() = default;
  NeuralCritic(int dim_in, const std::vector<int>& hidden, Activation act, std::uint64_t seed);

  int dim_in() const { return dim_in_; }
  bool empty() const { return W.empty(); }
  std::vector<int> hidden_widths() const;

  double forward(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd input_grad(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  Eigen::VectorXd forward_rows(const Eigen::Ref<const Eigen::MatrixXd>& pts) const;
  Eigen::MatrixXd input_grad_rows(const Eigen::Ref<const Eigen::MatrixXd>& pts) const;

  int parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::Ref<const Eigen::VectorXd>& theta);

  // W[k] maps layer k to layer k+1 (rows = fan-out); the last entry is the
  // 1 x h output row. b has one entry per hidden layer.
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;
  Activation act = Activation::Tanh;

  // Constant added to the output. Not a trainable parameter; lets tests
  // probe shift invariance of the centered moments.
  double output_offset = 0.0;

 private:
  int dim_in_ = 0;
};

struct ParamGrads {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;

  static ParamGrads zeros_like(const NeuralCritic& c);
  Eigen::VectorXd flatten() const;
};

struct AlmParts {
  double objective = 0;
  double constraint = 0;   // Omega_hat - 1
  double witness_gap = 0;  // E_p f - E_q f
  double s_part = 0;       // E_q |grad_x f|^2
  double f_part = 0;       // E_q f^2 - gamma (E_q f)^2
};

// Augmented-Lagrangian critic objective, maximized in the critic update:
//   objective = witness_gap - lambda_aug (Omega - 1) - rho/2 (Omega - 1)^2
//   Omega = s_part + alpha f_part
// Weighted sums use the raw particle weights.
AlmParts alm_objective(const NeuralCritic& c, const WeightedParticles& target,
                       const WeightedParticles& source, double lambda_aug, double rho,
                       double alpha, int gamma);

struct AlmGrad {
  ParamGrads grads;
  AlmParts parts;
  double lambda_grad = 0;  // d objective / d lambda_aug = 1 - Omega_hat
};

AlmGrad alm_param_grad(const NeuralCritic& c, const WeightedParticles& target,
                       const WeightedParticles& source, double lambda_aug, double rho,
                       double alpha, int gamma);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled, applied after the moment step
  bool amsgrad = true;
};

struct AlmState {
  double lambda_aug = 1e-5;
  double rho = 1e-6;
  AdamConfig adam;
  ParamGrads m, v, vmax;
  long t = 0;
  double last_constraint = 0;

  void init_like(const NeuralCritic& c);
};

struct CriticUpdateDiag {
  std::vector<double> objectives;
  std::vector<double> constraints;
};

// n_steps ascent steps on the critic parameters (adaptive moments with the
// max-corrected second moment) with the multiplier rule
// lambda_aug <- lambda_aug - rho (1 - Omega_hat) after every step.
// Mini-batches are drawn without replacement and rescaled so batch sums
// estimate the full weighted sums. dropout > 0 masks one hidden layer's
// activations during these steps only.
CriticUpdateDiag critic_update(NeuralCritic& c, AlmState& alm, const WeightedParticles& target,
                               const WeightedParticles& source, int n_steps, double lr,
                               double alpha, int gamma, int batch_size, Rng& rng,
                               double dropout = 0.0);

struct NeuralUsdConfig {
  DescentConfig descent;  // lambda is unused by the neural engine
  std::vector<int> hidden = {64, 1024, 64};
  Activation activation = Activation::Tanh;
  int n_c = 20;
  int n_c_startup = 200;
  int batch_size = 512;
  double lr_critic = 1e-4;
  double weight_decay = 1e-5;
  double lambda_aug_init = 1e-5;
  double rho = 1e-6;
  double dropout = 0.0;
};

// Neural-critic descent: each step trains the critic on the current cloud,
// then advances particles along its input gradient with the configured
// reaction. The sf2 trace column records the full-data witness gap.
// critic_io, when non-null, warm starts the run if it already holds a
// matching network and receives the final critic afterwards.
DescentRun run_neural_usd(const WeightedParticles& target, const WeightedParticles& source,
                          const NeuralUsdConfig& cfg, const FeatureMap& eval_fm,
                          NeuralCritic* critic_io = nullptr);

void save_critic(const NeuralCritic& c, const std::string& path);
NeuralCritic load_critic(const std::string& path);

namespace serial {
// Per-sample reference path for the batched implementations.
Eigen::VectorXd forward_rows(const NeuralCritic& c, const Eigen::Ref<const Eigen::MatrixXd>& pts);
Eigen::MatrixXd input_grad_rows(const NeuralCritic& c,
                                const Eigen::Ref<const Eigen::MatrixXd>& pts);
AlmGrad alm_param_grad(const NeuralCritic& c, const WeightedParticles& target,
                       const WeightedParticles& source, double lambda_aug, double rho,
                       double alpha, int gamma);
}  // namespace serial

}  // namespace usd
