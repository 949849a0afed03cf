#include "usd/neural.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "usd/parallel.hpp"

namespace usd {

namespace {

double act_value(Activation act, double z) {
  switch (act) {
    case Activation::Tanh:
      return std::tanh(z);
    case Activation::Relu:
      return z > 0.0 ? z : 0.0;
    case Activation::Softplus:
      return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  }
  return 0.0;
}

double act_d1(Activation act, double z) {
  switch (act) {
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Relu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus:
      return 1.0 / (1.0 + std::exp(-z));
  }
  return 0.0;
}

double act_d2(Activation act, double z) {
  switch (act) {
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::Relu:
      return 0.0;
    case Activation::Softplus: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

// Activations and their first two derivatives over a batch block. Hidden
// layer `mask_layer` (when >= 0) is scaled by the dropout mask, which also
// scales both derivative arrays.
struct BatchCache {
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = inputs, acts[k] = hidden k output
  std::vector<Eigen::MatrixXd> dh;
  std::vector<Eigen::MatrixXd> ddh;
  Eigen::VectorXd f;
};

int dropout_layer(int n_hidden) { return n_hidden >= 2 ? 1 : n_hidden - 1; }

BatchCache make_cache(const NeuralCritic& c, const Eigen::Ref<const Eigen::MatrixXd>& pts,
                      bool need_second, const Eigen::MatrixXd* mask, int mask_layer) {
  const int n_hidden = static_cast<int>(c.b.size());
  const auto n = pts.rows();
  BatchCache cache;
  cache.acts.resize(n_hidden + 1);
  cache.dh.resize(n_hidden);
  if (need_second) cache.ddh.resize(n_hidden);
  cache.acts[0] = pts;

  for (int k = 0; k < n_hidden; ++k) {
    Eigen::MatrixXd z = cache.acts[k] * c.W[k].transpose();
    z.rowwise() += c.b[k].transpose();
    Eigen::MatrixXd h(n, z.cols()), dh(n, z.cols());
    Eigen::MatrixXd ddh;
    if (need_second) ddh.resize(n, z.cols());
    const Activation act = c.act;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      h(i) = act_value(act, z(i));
      dh(i) = act_d1(act, z(i));
      if (need_second) ddh(i) = act_d2(act, z(i));
    }
    if (mask != nullptr && k == mask_layer) {
      h = h.cwiseProduct(*mask);
      dh = dh.cwiseProduct(*mask);
      if (need_second) ddh = ddh.cwiseProduct(*mask);
    }
    cache.acts[k + 1] = std::move(h);
    cache.dh[k] = std::move(dh);
    if (need_second) cache.ddh[k] = std::move(ddh);
  }
  cache.f = cache.acts[n_hidden] * c.W.back().row(0).transpose();
  cache.f.array() += c.output_offset;
  return cache;
}

Eigen::MatrixXd input_grads_from_cache(const NeuralCritic& c, const BatchCache& cache) {
  const int n_hidden = static_cast<int>(c.b.size());
  const auto n = cache.acts[0].rows();
  if (n_hidden == 0) return c.W[0].row(0).replicate(n, 1);
  Eigen::MatrixXd t =
      cache.dh[n_hidden - 1].array().rowwise() * c.W[n_hidden].row(0).array();
  for (int k = n_hidden - 1; k >= 1; --k)
    t = (t * c.W[k]).cwiseProduct(cache.dh[k - 1]);
  return t * c.W[0];
}

// Adds the parameter gradient of sum_i beta_i f(x_i) for one cached batch.
void accumulate_weighted(const NeuralCritic& c, const BatchCache& cache,
                         const Eigen::VectorXd& beta, ParamGrads& g) {
  const int n_hidden = static_cast<int>(c.b.size());
  g.W[n_hidden].row(0) += beta.transpose() * cache.acts[n_hidden];
  if (n_hidden == 0) return;
  Eigen::MatrixXd u =
      cache.dh[n_hidden - 1].array().rowwise() * c.W[n_hidden].row(0).array();
  u = beta.asDiagonal() * u;
  for (int k = n_hidden; k >= 1; --k) {
    g.W[k - 1] += u.transpose() * cache.acts[k - 1];
    g.b[k - 1] += u.colwise().sum().transpose();
    if (k > 1) u = (u * c.W[k - 1]).cwiseProduct(cache.dh[k - 2]);
  }
}

// Adds the parameter gradient of sum_i <cot_i, grad_x f(x_i)> with the
// cotangent rows held fixed. This is the double-backward pass: a forward
// tangent sweep along each cotangent followed by reverse accumulation
// through both the primal and tangent variables.
void accumulate_doubleback(const NeuralCritic& c, const BatchCache& cache,
                           const Eigen::MatrixXd& cot, ParamGrads& g) {
  const int n_hidden = static_cast<int>(c.b.size());
  if (n_hidden == 0) {
    g.W[0].row(0) += cot.colwise().sum();
    return;
  }
  std::vector<Eigen::MatrixXd> zdot(n_hidden), hdot(n_hidden);
  zdot[0] = cot * c.W[0].transpose();
  hdot[0] = cache.dh[0].cwiseProduct(zdot[0]);
  for (int k = 1; k < n_hidden; ++k) {
    zdot[k] = hdot[k - 1] * c.W[k].transpose();
    hdot[k] = cache.dh[k].cwiseProduct(zdot[k]);
  }
  g.W[n_hidden].row(0) += hdot[n_hidden - 1].colwise().sum();

  const auto vrow = c.W[n_hidden].row(0).array();
  Eigen::MatrixXd adj = cache.dh[n_hidden - 1].array().rowwise() * vrow;
  Eigen::MatrixXd badj =
      cache.ddh[n_hidden - 1].cwiseProduct(zdot[n_hidden - 1]).array().rowwise() * vrow;
  for (int k = n_hidden; k >= 1; --k) {
    const Eigen::MatrixXd& h_prev = cache.acts[k - 1];
    const Eigen::MatrixXd& hdot_prev = k >= 2 ? hdot[k - 2] : cot;
    g.W[k - 1] += adj.transpose() * hdot_prev + badj.transpose() * h_prev;
    g.b[k - 1] += badj.colwise().sum().transpose();
    if (k > 1) {
      const Eigen::MatrixXd p = adj * c.W[k - 1];
      const Eigen::MatrixXd q = badj * c.W[k - 1];
      adj = cache.dh[k - 2].cwiseProduct(p);
      badj = cache.ddh[k - 2].cwiseProduct(zdot[k - 2]).cwiseProduct(p) +
             cache.dh[k - 2].cwiseProduct(q);
    }
  }
}

struct AlmInputs {
  const Eigen::MatrixXd& xp;
  const Eigen::VectorXd& ap;
  const Eigen::MatrixXd& xq;
  const Eigen::VectorXd& wq;
};

AlmGrad alm_grad_impl(const NeuralCritic& c, const AlmInputs& in, double lambda_aug, double rho,
                      double alpha, int gamma, bool need_grads,
                      const Eigen::MatrixXd* mask_p, const Eigen::MatrixXd* mask_q) {
  const int ml = dropout_layer(static_cast<int>(c.b.size()));
  const BatchCache cp = make_cache(c, in.xp, false, mask_p, ml);
  const BatchCache cq = make_cache(c, in.xq, need_grads, mask_q, ml);
  const Eigen::MatrixXd gq = input_grads_from_cache(c, cq);

  AlmGrad out;
  const double ep = in.ap.dot(cp.f);
  const double mq = in.wq.dot(cq.f);
  const double f_part = in.wq.dot(cq.f.array().square().matrix()) - gamma * mq * mq;
  const double s_part = in.wq.dot(gq.rowwise().squaredNorm());
  const double omega = s_part + alpha * f_part;
  const double constraint = omega - 1.0;

  out.parts.witness_gap = ep - mq;
  out.parts.f_part = f_part;
  out.parts.s_part = s_part;
  out.parts.constraint = constraint;
  out.parts.objective =
      out.parts.witness_gap - lambda_aug * constraint - 0.5 * rho * constraint * constraint;
  out.lambda_grad = 1.0 - omega;

  if (need_grads) {
    const double lam = lambda_aug + rho * constraint;
    out.grads = ParamGrads::zeros_like(c);
    accumulate_weighted(c, cp, in.ap, out.grads);
    const Eigen::VectorXd beta_q =
        (-in.wq.array() * (1.0 + 2.0 * lam * alpha * (cq.f.array() - gamma * mq))).matrix();
    accumulate_weighted(c, cq, beta_q, out.grads);
    const Eigen::MatrixXd cot = -2.0 * lam * (in.wq.asDiagonal() * gq);
    accumulate_doubleback(c, cq, cot, out.grads);
  }
  return out;
}

void check_alm_args(const NeuralCritic& c, const WeightedParticles& target,
                    const WeightedParticles& source, double rho, double alpha, int gamma) {
  if (c.empty()) throw std::invalid_argument("alm: critic has no parameters");
  target.validate();
  source.validate();
  if (target.dim() != c.dim_in() || source.dim() != c.dim_in())
    throw std::invalid_argument("alm: particle dimension does not match critic input");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alm: alpha must be >= 0");
  if (!(rho >= 0.0)) throw std::invalid_argument("alm: rho must be >= 0");
  if (gamma != 0 && gamma != 1) throw std::invalid_argument("alm: gamma must be 0 or 1");
}

}  // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "softplus") return Activation::Softplus;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
    case Activation::Softplus:
      return "softplus";
  }
  return "tanh";
}

NeuralCritic::NeuralCritic(int dim_in, const std::vector<int>& hidden, Activation activation,
                           std::uint64_t seed)
    : act(activation), dim_in_(dim_in) {
  if (dim_in < 1) throw std::invalid_argument("NeuralCritic: dim_in must be >= 1");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("NeuralCritic: hidden widths must be >= 1");

  Rng rng(seed);
  int prev = dim_in;
  for (std::size_t k = 0; k <= hidden.size(); ++k) {
    const int rows = k < hidden.size() ? hidden[k] : 1;
    const double bound = 1.0 / std::sqrt(static_cast<double>(prev));
    Eigen::MatrixXd w(rows, prev);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < prev; ++j) w(i, j) = rng.uniform(-bound, bound);
    W.push_back(std::move(w));
    if (k < hidden.size()) {
      Eigen::VectorXd bias(rows);
      for (int i = 0; i < rows; ++i) bias(i) = rng.uniform(-bound, bound);
      b.push_back(std::move(bias));
    }
    prev = rows;
  }
}

std::vector<int> NeuralCritic::hidden_widths() const {
  std::vector<int> out;
  for (std::size_t k = 0; k + 1 < W.size(); ++k) out.push_back(static_cast<int>(W[k].rows()));
  return out;
}

double NeuralCritic::forward(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (empty()) throw std::invalid_argument("NeuralCritic::forward: empty network");
  if (x.size() != dim_in_) throw std::invalid_argument("NeuralCritic::forward: bad input size");
  Eigen::VectorXd h = x;
  for (std::size_t k = 0; k < b.size(); ++k) {
    Eigen::VectorXd z = W[k] * h + b[k];
    h.resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) h(i) = act_value(act, z(i));
  }
  return W.back().row(0).dot(h) + output_offset;
}

Eigen::VectorXd NeuralCritic::input_grad(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (empty()) throw std::invalid_argument("NeuralCritic::input_grad: empty network");
  if (x.size() != dim_in_)
    throw std::invalid_argument("NeuralCritic::input_grad: bad input size");
  const int n_hidden = static_cast<int>(b.size());
  if (n_hidden == 0) return W[0].row(0).transpose();
  std::vector<Eigen::VectorXd> dh(n_hidden);
  Eigen::VectorXd h = x;
  for (int k = 0; k < n_hidden; ++k) {
    const Eigen::VectorXd z = W[k] * h + b[k];
    h.resize(z.size());
    dh[k].resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      h(i) = act_value(act, z(i));
      dh[k](i) = act_d1(act, z(i));
    }
  }
  Eigen::VectorXd t = W.back().row(0).transpose().cwiseProduct(dh[n_hidden - 1]);
  for (int k = n_hidden - 1; k >= 1; --k)
    t = (W[k].transpose() * t).cwiseProduct(dh[k - 1]);
  return W[0].transpose() * t;
}

Eigen::VectorXd NeuralCritic::forward_rows(const Eigen::Ref<const Eigen::MatrixXd>& pts) const {
  if (empty()) throw std::invalid_argument("NeuralCritic::forward_rows: empty network");
  if (pts.cols() != dim_in_)
    throw std::invalid_argument("NeuralCritic::forward_rows: bad input size");
  const int n = static_cast<int>(pts.rows());
  Eigen::VectorXd out(n);
  const int nc = num_chunks(n);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < nc; ++ch) {
    const int bgn = chunk_begin(ch);
    const int len = chunk_size(ch, n);
    out.segment(bgn, len) = make_cache(*this, pts.middleRows(bgn, len), false, nullptr, -1).f;
  }
  return out;
}

Eigen::MatrixXd NeuralCritic::input_grad_rows(
    const Eigen::Ref<const Eigen::MatrixXd>& pts) const {
  if (empty()) throw std::invalid_argument("NeuralCritic::input_grad_rows: empty network");
  if (pts.cols() != dim_in_)
    throw std::invalid_argument("NeuralCritic::input_grad_rows: bad input size");
  const int n = static_cast<int>(pts.rows());
  Eigen::MatrixXd out(n, dim_in_);
  const int nc = num_chunks(n);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < nc; ++ch) {
    const int bgn = chunk_begin(ch);
    const int len = chunk_size(ch, n);
    const BatchCache cache = make_cache(*this, pts.middleRows(bgn, len), false, nullptr, -1);
    out.middleRows(bgn, len) = input_grads_from_cache(*this, cache);
  }
  return out;
}

int NeuralCritic::parameter_count() const {
  int count = 0;
  for (const auto& w : W) count += static_cast<int>(w.size());
  for (const auto& bias : b) count += static_cast<int>(bias.size());
  return count;
}

Eigen::VectorXd NeuralCritic::parameters() const {
  Eigen::VectorXd theta(parameter_count());
  int at = 0;
  for (std::size_t k = 0; k < W.size(); ++k) {
    for (Eigen::Index i = 0; i < W[k].rows(); ++i)
      for (Eigen::Index j = 0; j < W[k].cols(); ++j) theta(at++) = W[k](i, j);
    if (k < b.size())
      for (Eigen::Index i = 0; i < b[k].size(); ++i) theta(at++) = b[k](i);
  }
  return theta;
}

void NeuralCritic::set_parameters(const Eigen::Ref<const Eigen::VectorXd>& theta) {
  if (theta.size() != parameter_count())
    throw std::invalid_argument("NeuralCritic::set_parameters: bad parameter count");
  int at = 0;
  for (std::size_t k = 0; k < W.size(); ++k) {
    for (Eigen::Index i = 0; i < W[k].rows(); ++i)
      for (Eigen::Index j = 0; j < W[k].cols(); ++j) W[k](i, j) = theta(at++);
    if (k < b.size())
      for (Eigen::Index i = 0; i < b[k].size(); ++i) b[k](i) = theta(at++);
  }
}

ParamGrads ParamGrads::zeros_like(const NeuralCritic& c) {
  ParamGrads g;
  for (const auto& w : c.W) g.W.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& bias : c.b) g.b.push_back(Eigen::VectorXd::Zero(bias.size()));
  return g;
}

Eigen::VectorXd ParamGrads::flatten() const {
  int count = 0;
  for (const auto& w : W) count += static_cast<int>(w.size());
  for (const auto& bias : b) count += static_cast<int>(bias.size());
  Eigen::VectorXd out(count);
  int at = 0;
  for (std::size_t k = 0; k < W.size(); ++k) {
    for (Eigen::Index i = 0; i < W[k].rows(); ++i)
      for (Eigen::Index j = 0; j < W[k].cols(); ++j) out(at++) = W[k](i, j);
    if (k < b.size())
      for (Eigen::Index i = 0; i < b[k].size(); ++i) out(at++) = b[k](i);
  }
  return out;
}

AlmParts alm_objective(const NeuralCritic& c, const WeightedParticles& target,
                       const WeightedParticles& source, double lambda_aug, double rho,
                       double alpha, int gamma) {
  check_alm_args(c, target, source, rho, alpha, gamma);
  const AlmInputs in{target.points, target.weights, source.points, source.weights};
  return alm_grad_impl(c, in, lambda_aug, rho, alpha, gamma, false, nullptr, nullptr).parts;
}

AlmGrad alm_param_grad(const NeuralCritic& c, const WeightedParticles& target,
                       const WeightedParticles& source, double lambda_aug, double rho,
                       double alpha, int gamma) {
  check_alm_args(c, target, source, rho, alpha, gamma);
  const AlmInputs in{target.points, target.weights, source.points, source.weights};
  return alm_grad_impl(c, in, lambda_aug, rho, alpha, gamma, true, nullptr, nullptr);
}

void AlmState::init_like(const NeuralCritic& c) {
  m = ParamGrads::zeros_like(c);
  v = ParamGrads::zeros_like(c);
  vmax = ParamGrads::zeros_like(c);
  t = 0;
}

namespace {

// Uniform sample of `count` distinct indices from [0, n), or all of them
// when count >= n. Partial Fisher-Yates keeps the draw order fixed.
std::vector<int> sample_indices(int n, int count, Rng& rng) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  if (count >= n) return idx;
  for (int i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
  idx.resize(count);
  return idx;
}

void gather(const WeightedParticles& p, const std::vector<int>& idx, Eigen::MatrixXd& pts,
            Eigen::VectorXd& w) {
  const int count = static_cast<int>(idx.size());
  pts.resize(count, p.dim());
  w.resize(count);
  const double scale = static_cast<double>(p.size()) / count;
  for (int i = 0; i < count; ++i) {
    pts.row(i) = p.points.row(idx[i]);
    w(i) = p.weights(idx[i]) * scale;
  }
}

Eigen::MatrixXd draw_mask(int rows, int cols, double p, Rng& rng) {
  Eigen::MatrixXd mask(rows, cols);
  const double keep = 1.0 - p;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

void adam_step(NeuralCritic& c, AlmState& alm, const ParamGrads& g, double lr) {
  const AdamConfig& ad = alm.adam;
  ++alm.t;
  const double bc1 = 1.0 - std::pow(ad.beta1, static_cast<double>(alm.t));
  const double bc2 = 1.0 - std::pow(ad.beta2, static_cast<double>(alm.t));
  auto update = [&](auto& theta, auto& m, auto& v, auto& vmax, const auto& grad) {
    m = ad.beta1 * m + (1.0 - ad.beta1) * grad;
    v = ad.beta2 * v + (1.0 - ad.beta2) * grad.cwiseProduct(grad);
    auto vhat = (v / bc2).eval();
    if (ad.amsgrad) {
      vmax = vmax.cwiseMax(vhat);
      vhat = vmax;
    }
    theta += lr * (m / bc1).cwiseQuotient((vhat.cwiseSqrt().array() + ad.eps).matrix());
    theta *= 1.0 - lr * ad.weight_decay;
  };
  for (std::size_t k = 0; k < c.W.size(); ++k)
    update(c.W[k], alm.m.W[k], alm.v.W[k], alm.vmax.W[k], g.W[k]);
  for (std::size_t k = 0; k < c.b.size(); ++k)
    update(c.b[k], alm.m.b[k], alm.v.b[k], alm.vmax.b[k], g.b[k]);
}

}  // namespace

CriticUpdateDiag critic_update(NeuralCritic& c, AlmState& alm, const WeightedParticles& target,
                               const WeightedParticles& source, int n_steps, double lr,
                               double alpha, int gamma, int batch_size, Rng& rng,
                               double dropout) {
  check_alm_args(c, target, source, alm.rho, alpha, gamma);
  if (n_steps < 0) throw std::invalid_argument("critic_update: n_steps must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("critic_update: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("critic_update: batch_size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("critic_update: dropout must be in [0, 1)");
  if (alm.m.W.empty()) alm.init_like(c);

  const int ml = dropout_layer(static_cast<int>(c.b.size()));
  CriticUpdateDiag diag;
  Eigen::MatrixXd xp, xq;
  Eigen::VectorXd ap, wq;
  for (int step = 0; step < n_steps; ++step) {
    gather(target, sample_indices(target.size(), batch_size, rng), xp, ap);
    gather(source, sample_indices(source.size(), batch_size, rng), xq, wq);

    Eigen::MatrixXd mask_p, mask_q;
    const bool use_mask = dropout > 0.0 && ml >= 0;
    if (use_mask) {
      const int width = static_cast<int>(c.W[ml].rows());
      mask_p = draw_mask(static_cast<int>(xp.rows()), width, dropout, rng);
      mask_q = draw_mask(static_cast<int>(xq.rows()), width, dropout, rng);
    }

    const AlmInputs in{xp, ap, xq, wq};
    const AlmGrad g = alm_grad_impl(c, in, alm.lambda_aug, alm.rho, alpha, gamma, true,
                                    use_mask ? &mask_p : nullptr,
                                    use_mask ? &mask_q : nullptr);
    if (!std::isfinite(g.parts.objective) || std::abs(g.parts.objective) > 1e8)
      throw std::runtime_error("critic_update: objective diverged");

    adam_step(c, alm, g.grads, lr);
    alm.lambda_aug -= alm.rho * g.lambda_grad;
    alm.last_constraint = g.parts.constraint;
    diag.objectives.push_back(g.parts.objective);
    diag.constraints.push_back(g.parts.constraint);
  }
  return diag;
}

DescentRun run_neural_usd(const WeightedParticles& target, const WeightedParticles& source,
                          const NeuralUsdConfig& cfg, const FeatureMap& eval_fm,
                          NeuralCritic* critic_io) {
  cfg.descent.validate();
  target.validate();
  source.validate();
  if (target.dim() != source.dim())
    throw std::invalid_argument("run_neural_usd: dimension mismatch");
  eval_fm.check_point_dim(source.dim());
  if (cfg.n_c < 0 || cfg.n_c_startup < 0)
    throw std::invalid_argument("run_neural_usd: critic step counts must be >= 0");

  const std::uint64_t seed = cfg.descent.seed;
  NeuralCritic critic;
  if (critic_io != nullptr && !critic_io->empty()) {
    if (critic_io->dim_in() != source.dim())
      throw std::invalid_argument("run_neural_usd: warm-start critic has wrong input size");
    critic = *critic_io;
  } else {
    critic = NeuralCritic(source.dim(), cfg.hidden, cfg.activation, derive_seed(seed, 11));
  }
  AlmState alm;
  alm.lambda_aug = cfg.lambda_aug_init;
  alm.rho = cfg.rho;
  alm.adam.weight_decay = cfg.weight_decay;
  alm.init_like(critic);

  Rng batch_rng(derive_seed(seed, 12));
  Rng bd_rng(derive_seed(seed, 13));

  DescentState state = cfg.descent.reaction_mode == ReactionMode::BirthDeath
                           ? DescentState::from(WeightedParticles::uniform(source.points))
                           : DescentState::from(source);
  const Eigen::VectorXd mu_p_eval = mean_embedding(target, eval_fm);
  const bool sequential = cfg.descent.sequential_bd_mean;

  DescentRun run;
  for (int step = 0;; ++step) {
    const WeightedParticles q = state.particles();

    Eigen::VectorXd values;
    try {
      const int inner = step == 0 ? cfg.n_c_startup : cfg.n_c;
      critic_update(critic, alm, target, q, inner, cfg.lr_critic, cfg.descent.alpha,
                    cfg.descent.gamma, cfg.batch_size, batch_rng, cfg.dropout);
      values = critic.forward_rows(q.points);
    } catch (const std::exception& e) {
      run.error = e.what();
      break;
    }

    TraceRecord rec;
    rec.step = step;
    rec.mmd2 = (mu_p_eval - mean_embedding(q, eval_fm)).squaredNorm();
    rec.sf2 = target.weights.dot(critic.forward_rows(target.points)) - q.weights.dot(values);
    rec.total_mass = q.total_mass();
    rec.n_particles = q.size();
    run.trace.records.push_back(rec);

    if (cfg.descent.snapshot_every > 0 &&
        (step % cfg.descent.snapshot_every == 0 || step == cfg.descent.n_steps)) {
      run.trace.snapshot_steps.push_back(step);
      run.trace.snapshots.push_back(q);
    }
    if (step == cfg.descent.n_steps) break;

    try {
      const Eigen::MatrixXd grads = critic.input_grad_rows(state.points);
      if (!grads.allFinite()) throw std::runtime_error("advect: non-finite critic gradient");
      switch (cfg.descent.reaction_mode) {
        case ReactionMode::Weighted:
          reweight_from_values(state, values, cfg.descent.reaction_rate, cfg.descent.gamma);
          state.points += cfg.descent.step_size * grads;
          break;
        case ReactionMode::BirthDeath: {
          Eigen::MatrixXd prev;
          if (sequential) prev = state.points;
          state.points += cfg.descent.step_size * grads;
          const Eigen::VectorXd fresh = critic.forward_rows(state.points);
          Eigen::VectorXd stale;
          if (sequential) stale = critic.forward_rows(prev);
          state = birth_death_from_values(state, fresh, sequential ? &stale : nullptr,
                                          cfg.descent.alpha, cfg.descent.reaction_rate,
                                          cfg.descent.gamma, bd_rng);
          break;
        }
        case ReactionMode::None:
          state.points += cfg.descent.step_size * grads;
          break;
      }
    } catch (const std::exception& e) {
      run.error = e.what();
      break;
    }
    state.step = step + 1;
  }

  if (critic_io != nullptr) *critic_io = critic;
  run.final_state = std::move(state);
  return run;
}

void save_critic(const NeuralCritic& c, const std::string& path) {
  if (c.empty()) throw std::invalid_argument("save_critic: empty network");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_critic: cannot open " + path);
  out << "usd-critic v1\n" << activation_name(c.act) << "\n";
  const std::vector<int> widths = c.hidden_widths();
  out << c.dim_in() << " " << widths.size();
  for (int h : widths) out << " " << h;
  out << "\n" << c.parameter_count() << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", c.output_offset);
  out << buf << "\n";
  const Eigen::VectorXd theta = c.parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", theta(i));
    out << buf << (i % 4 == 3 ? "\n" : " ");
  }
  out << "\n";
  if (!out) throw std::runtime_error("save_critic: write failed for " + path);
}

NeuralCritic load_critic(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_critic: cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (header != "usd-critic v1")
    throw std::runtime_error("load_critic: bad header in " + path);
  std::string act_name;
  in >> act_name;
  int dim_in = 0;
  std::size_t n_hidden = 0;
  in >> dim_in >> n_hidden;
  std::vector<int> hidden(n_hidden);
  for (auto& h : hidden) in >> h;
  int count = 0;
  in >> count;
  double offset = 0.0;
  in >> offset;
  if (!in) throw std::runtime_error("load_critic: truncated file " + path);

  NeuralCritic c(dim_in, hidden, activation_from_name(act_name), 0);
  if (count != c.parameter_count())
    throw std::runtime_error("load_critic: parameter count mismatch in " + path);
  Eigen::VectorXd theta(count);
  for (int i = 0; i < count; ++i) {
    in >> theta(i);
    if (!in) throw std::runtime_error("load_critic: truncated file " + path);
  }
  c.set_parameters(theta);
  c.output_offset = offset;
  return c;
}

namespace serial {

namespace {

struct SampleCache {
  std::vector<Eigen::VectorXd> h;   // h[0] = x
  std::vector<Eigen::VectorXd> dh;  // per hidden layer
  std::vector<Eigen::VectorXd> ddh;
  double f = 0;
};

SampleCache sample_cache(const NeuralCritic& c, const Eigen::VectorXd& x, bool need_second) {
  const int n_hidden = static_cast<int>(c.b.size());
  SampleCache sc;
  sc.h.resize(n_hidden + 1);
  sc.dh.resize(n_hidden);
  if (need_second) sc.ddh.resize(n_hidden);
  sc.h[0] = x;
  for (int k = 0; k < n_hidden; ++k) {
    const Eigen::VectorXd z = c.W[k] * sc.h[k] + c.b[k];
    sc.h[k + 1].resize(z.size());
    sc.dh[k].resize(z.size());
    if (need_second) sc.ddh[k].resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      sc.h[k + 1](i) = act_value(c.act, z(i));
      sc.dh[k](i) = act_d1(c.act, z(i));
      if (need_second) sc.ddh[k](i) = act_d2(c.act, z(i));
    }
  }
  sc.f = c.W.back().row(0).dot(sc.h[n_hidden]) + c.output_offset;
  return sc;
}

Eigen::VectorXd sample_grad(const NeuralCritic& c, const SampleCache& sc) {
  const int n_hidden = static_cast<int>(c.b.size());
  if (n_hidden == 0) return c.W[0].row(0).transpose();
  Eigen::VectorXd t = c.W[n_hidden].row(0).transpose().cwiseProduct(sc.dh[n_hidden - 1]);
  for (int k = n_hidden - 1; k >= 1; --k)
    t = (c.W[k].transpose() * t).cwiseProduct(sc.dh[k - 1]);
  return c.W[0].transpose() * t;
}

void sample_backprop(const NeuralCritic& c, const SampleCache& sc, double coeff,
                     ParamGrads& g) {
  const int n_hidden = static_cast<int>(c.b.size());
  g.W[n_hidden].row(0) += coeff * sc.h[n_hidden].transpose();
  if (n_hidden == 0) return;
  Eigen::VectorXd u =
      coeff * c.W[n_hidden].row(0).transpose().cwiseProduct(sc.dh[n_hidden - 1]);
  for (int k = n_hidden; k >= 1; --k) {
    g.W[k - 1] += u * sc.h[k - 1].transpose();
    g.b[k - 1] += u;
    if (k > 1) u = (c.W[k - 1].transpose() * u).cwiseProduct(sc.dh[k - 2]);
  }
}

void sample_doubleback(const NeuralCritic& c, const SampleCache& sc, const Eigen::VectorXd& cot,
                       ParamGrads& g) {
  const int n_hidden = static_cast<int>(c.b.size());
  if (n_hidden == 0) {
    g.W[0].row(0) += cot.transpose();
    return;
  }
  std::vector<Eigen::VectorXd> zdot(n_hidden), hdot(n_hidden);
  zdot[0] = c.W[0] * cot;
  hdot[0] = sc.dh[0].cwiseProduct(zdot[0]);
  for (int k = 1; k < n_hidden; ++k) {
    zdot[k] = c.W[k] * hdot[k - 1];
    hdot[k] = sc.dh[k].cwiseProduct(zdot[k]);
  }
  g.W[n_hidden].row(0) += hdot[n_hidden - 1].transpose();

  const Eigen::VectorXd v = c.W[n_hidden].row(0).transpose();
  Eigen::VectorXd adj = v.cwiseProduct(sc.dh[n_hidden - 1]);
  Eigen::VectorXd badj = v.cwiseProduct(sc.ddh[n_hidden - 1]).cwiseProduct(zdot[n_hidden - 1]);
  for (int k = n_hidden; k >= 1; --k) {
    const Eigen::VectorXd& h_prev = sc.h[k - 1];
    const Eigen::VectorXd& hdot_prev = k >= 2 ? hdot[k - 2] : cot;
    g.W[k - 1] += adj * hdot_prev.transpose() + badj * h_prev.transpose();
    g.b[k - 1] += badj;
    if (k > 1) {
      const Eigen::VectorXd p = c.W[k - 1].transpose() * adj;
      const Eigen::VectorXd q = c.W[k - 1].transpose() * badj;
      adj = sc.dh[k - 2].cwiseProduct(p);
      badj = sc.ddh[k - 2].cwiseProduct(zdot[k - 2]).cwiseProduct(p) +
             sc.dh[k - 2].cwiseProduct(q);
    }
  }
}

}  // namespace

Eigen::VectorXd forward_rows(const NeuralCritic& c,
                             const Eigen::Ref<const Eigen::MatrixXd>& pts) {
  Eigen::VectorXd out(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) out(i) = c.forward(pts.row(i).transpose());
  return out;
}

Eigen::MatrixXd input_grad_rows(const NeuralCritic& c,
                                const Eigen::Ref<const Eigen::MatrixXd>& pts) {
  Eigen::MatrixXd out(pts.rows(), pts.cols());
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    out.row(i) = c.input_grad(pts.row(i).transpose()).transpose();
  return out;
}

AlmGrad alm_param_grad(const NeuralCritic& c, const WeightedParticles& target,
                       const WeightedParticles& source, double lambda_aug, double rho,
                       double alpha, int gamma) {
  check_alm_args(c, target, source, rho, alpha, gamma);
  const int np = target.size();
  const int nq = source.size();

  std::vector<SampleCache> cp(np), cq(nq);
  for (int i = 0; i < np; ++i)
    cp[i] = sample_cache(c, target.points.row(i).transpose(), false);
  for (int j = 0; j < nq; ++j)
    cq[j] = sample_cache(c, source.points.row(j).transpose(), true);

  double ep = 0.0, mq = 0.0, fsq = 0.0, s_part = 0.0;
  std::vector<Eigen::VectorXd> grads(nq);
  for (int i = 0; i < np; ++i) ep += target.weights(i) * cp[i].f;
  for (int j = 0; j < nq; ++j) {
    mq += source.weights(j) * cq[j].f;
    fsq += source.weights(j) * cq[j].f * cq[j].f;
    grads[j] = sample_grad(c, cq[j]);
    s_part += source.weights(j) * grads[j].squaredNorm();
  }
  const double f_part = fsq - gamma * mq * mq;
  const double omega = s_part + alpha * f_part;
  const double constraint = omega - 1.0;

  AlmGrad out;
  out.parts.witness_gap = ep - mq;
  out.parts.f_part = f_part;
  out.parts.s_part = s_part;
  out.parts.constraint = constraint;
  out.parts.objective =
      out.parts.witness_gap - lambda_aug * constraint - 0.5 * rho * constraint * constraint;
  out.lambda_grad = 1.0 - omega;

  const double lam = lambda_aug + rho * constraint;
  out.grads = ParamGrads::zeros_like(c);
  for (int i = 0; i < np; ++i) sample_backprop(c, cp[i], target.weights(i), out.grads);
  for (int j = 0; j < nq; ++j) {
    const double w = source.weights(j);
    const double coeff = -w * (1.0 + 2.0 * lam * alpha * (cq[j].f - gamma * mq));
    sample_backprop(c, cq[j], coeff, out.grads);
    sample_doubleback(c, cq[j], (-2.0 * lam * w) * grads[j], out.grads);
  }
  return out;
}

}  // namespace serial

}  // namespace usd
