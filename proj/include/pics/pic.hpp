#pragma once

// Feynman-Kac Monte Carlo estimation of the desirability Psi, value and
// control extraction through the log transform, the martingale diagnostic,
// and a receding-horizon deployment of the sampled controller.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "pics/sampler.hpp"

namespace pics {

struct PicOptions {
  int threads = 1;
  double psi_floor = 1e-300;   // below this the weights are declared degenerate
  double h_fd_scale = 1e-3;    // finite-difference step h = (|mu| + 1) * scale
  Tolerances tol;
};

struct ValueEstimate {
  double psi_hat = 0.0;
  double stderr_ = 0.0;
  double log_psi = 0.0;  // log of psi_hat, safe against underflow
  double value = 0.0;    // -lambda * log_psi
  int N = 0;
  double t = 0.0;
  Vector mu;
  Matrix Sigma;
};

namespace detail {

// exp(-(cost - shift)/lambda) for every path; the shift keeps the largest
// weight at 1 so nothing underflows before the mean is taken.
struct ShiftedWeights {
  Vector w;       // shifted weights
  double shift;   // min cost
  double mean;    // mean of shifted weights
};

inline ShiftedWeights shifted_weights(const Vector& cost, double lambda) {
  ShiftedWeights sw;
  sw.shift = cost.minCoeff();
  sw.w = ((sw.shift - cost.array()) / lambda).exp();
  sw.mean = sw.w.mean();
  return sw;
}

inline ValueEstimate estimate_from_batch(const RolloutBatch& batch, const ModelSpec& model,
                                         double t, const Belief& belief) {
  const Vector cost = batch.running_cost + batch.terminal_cost;
  const auto sw = shifted_weights(cost, model.lambda);
  ValueEstimate est;
  est.N = batch.N;
  est.t = t;
  est.mu = belief.mu;
  est.Sigma = belief.Sigma;
  est.log_psi = -sw.shift / model.lambda + std::log(sw.mean);
  est.psi_hat = std::exp(est.log_psi);
  est.value = -model.lambda * est.log_psi;
  if (batch.N > 1) {
    const double sd = std::sqrt((sw.w.array() - sw.mean).square().sum() / (batch.N - 1));
    est.stderr_ = est.psi_hat * (sd / sw.mean) / std::sqrt(double(batch.N));
  }
  return est;
}

}  // namespace detail

// Psi(t, mu, Sigma) as the sample mean of exp(-(running + terminal cost)/lambda)
// over selector-mode rollouts.
inline ValueEstimate estimate_psi(double t, const Belief& belief, const ModelSpec& model,
                                  int N, uint64_t rng_seed, const PicOptions& opts = {}) {
  require(N >= 1, "N must be positive");
  RolloutOptions ro;
  ro.threads = opts.threads;
  ro.tol = opts.tol;
  const RolloutBatch batch = rollout_augmented(t, belief, model, N, rng_seed, ro);
  return detail::estimate_from_batch(batch, model, t, belief);
}

enum class GradientMethod { likelihood_ratio, finite_difference };

struct ControlEstimate {
  Vector u;        // u* = -R_a^-1 B' grad V
  Vector stderr_;  // per-component standard error (influence-function estimate)
  double psi_hat = 0.0;
  GradientMethod method = GradientMethod::likelihood_ratio;
};

// Optimal actuation u* = -R_a^-1 B' grad_mu V with grad_mu V = -lambda
// grad Psi / Psi. The gradient is estimated from the first Euler step by the
// likelihood-ratio identity grad Psi ~ E[w D*^+ (L* dbeta)] / dt, or by
// central finite differences with common random numbers.
inline ControlEstimate estimate_control(double t, const Belief& belief,
                                        const ModelSpec& model, int N, uint64_t rng_seed,
                                        GradientMethod method = GradientMethod::likelihood_ratio,
                                        const PicOptions& opts = {}) {
  require(N >= 2, "N must be at least 2");
  require(t < model.T, "control estimation requires t < T");
  RolloutOptions ro;
  ro.threads = opts.threads;
  ro.tol = opts.tol;
  const int n = model.n;
  const Matrix Ra_inv_Bt = model.R_a.llt().solve(model.B.transpose());

  const RolloutBatch batch = rollout_augmented(t, belief, model, N, rng_seed, ro);
  const Vector cost = batch.running_cost + batch.terminal_cost;
  const auto sw = detail::shifted_weights(cost, model.lambda);
  const double log_psi = -sw.shift / model.lambda + std::log(sw.mean);
  const double psi_hat = std::exp(log_psi);
  if (!(psi_hat >= opts.psi_floor)) {
    throw DegenerateWeights("psi estimate underflowed; increase lambda or N");
  }

  ControlEstimate ce;
  ce.method = method;
  ce.psi_hat = psi_hat;

  if (method == GradientMethod::likelihood_ratio) {
    // g_i = D*^+ first_noise_i / dt; grad V = -lambda E[w g]/E[w].
    const Matrix Dpinv = pinv_psd(matching_target(model));
    const Matrix g = (batch.first_noise * Dpinv.transpose()) / model.dt;  // N x n
    const Vector ratio = (g.transpose() * sw.w) / (double(N) * sw.mean);  // E[w g]/E[w]
    ce.u = model.lambda * (Ra_inv_Bt * ratio);
    // influence of path i: lambda R_a^-1 B' w_i (g_i - ratio) / mean(w)
    Matrix infl = g;
    infl.rowwise() -= ratio.transpose();
    infl.array().colwise() *= sw.w.array() / sw.mean;
    const Matrix zu = infl * (model.lambda * Ra_inv_Bt).transpose();  // N x ell_a
    ce.stderr_ = Vector::Zero(model.ell_a);
    for (int j = 0; j < model.ell_a; ++j) {
      const double mj = zu.col(j).mean();
      ce.stderr_[j] = std::sqrt((zu.col(j).array() - mj).square().sum() / (N - 1)) /
                      std::sqrt(double(N));
    }
    return ce;
  }

  // Finite differences with common random numbers: same seed reproduces the
  // same noise, so the per-path weight differences are smooth in h.
  const double h = (belief.mu.norm() + 1.0) * opts.h_fd_scale;
  Matrix d(N, n);  // per-path (w+ - w-)/(2h), with the center-run shift
  for (int j = 0; j < n; ++j) {
    Belief bp = belief, bm = belief;
    bp.mu[j] += h;
    bm.mu[j] -= h;
    const RolloutBatch plus = rollout_augmented(t, bp, model, N, rng_seed, ro);
    const RolloutBatch minus = rollout_augmented(t, bm, model, N, rng_seed, ro);
    const Vector cp = plus.running_cost + plus.terminal_cost;
    const Vector cm = minus.running_cost + minus.terminal_cost;
    const Vector wp = ((sw.shift - cp.array()) / model.lambda).exp();
    const Vector wm = ((sw.shift - cm.array()) / model.lambda).exp();
    d.col(j) = (wp - wm) / (2.0 * h);
  }
  const Vector grad_ratio = d.colwise().mean().transpose() / sw.mean;  // grad Psi / Psi
  ce.u = model.lambda * (Ra_inv_Bt * grad_ratio);
  // influence: lambda R_a^-1 B' [ (d_i - mean d)/mean w - ratio (w_i - mean w)/mean w ]
  Matrix infl = d;
  infl.rowwise() -= d.colwise().mean();
  infl /= sw.mean;
  Matrix corr = (sw.w.array() - sw.mean).matrix() * grad_ratio.transpose() / sw.mean;
  infl -= corr;
  const Matrix zu = infl * (model.lambda * Ra_inv_Bt).transpose();
  ce.stderr_ = Vector::Zero(model.ell_a);
  for (int j = 0; j < model.ell_a; ++j) {
    const double mj = zu.col(j).mean();
    ce.stderr_[j] = std::sqrt((zu.col(j).array() - mj).square().sum() / (N - 1)) /
                    std::sqrt(double(N));
  }
  return ce;
}

struct MartingaleTable {
  std::vector<double> checkpoints;  // snapped to grid nodes
  Vector m_hat;
  Vector stderr_;
};

using PsiEvaluator = std::function<double(double, const Vector&, const Matrix&)>;

// Estimates E[M_s] with M_s = exp(-(1/lambda) int_t^s (q + rho_kappa) dr)
// Psi(s, mu_s, Sigma_s) at the requested checkpoints. Flat-in-s up to noise
// certifies the Feynman-Kac construction. psi_eval defaults to nested Monte
// Carlo with N_inner = sqrt(N) fresh paths per evaluation.
inline MartingaleTable martingale_check(double t, const Belief& belief,
                                        const ModelSpec& model, int N,
                                        const std::vector<double>& checkpoints,
                                        uint64_t rng_seed,
                                        const PsiEvaluator& psi_eval = nullptr,
                                        const PicOptions& opts = {}) {
  require(N >= 2, "N must be at least 2");
  require(!checkpoints.empty(), "need at least one checkpoint");
  RolloutOptions ro;
  ro.threads = opts.threads;
  ro.tol = opts.tol;
  std::vector<int> idx;
  const int K = int(std::lround((model.T - t) / model.dt));
  for (double s : checkpoints) {
    require(s >= t - 1e-12 && s <= model.T + 1e-12, "checkpoint outside [t, T]");
    idx.push_back(std::clamp(int(std::lround((s - t) / model.dt)), 0, K));
  }
  ro.snapshots = idx;
  const RolloutBatch batch = rollout_augmented(t, belief, model, N, rng_seed, ro);

  const int n_inner = std::max(4, int(std::lround(std::sqrt(double(N)))));
  uint64_t eval_counter = 0;
  auto eval = [&](double s, const Vector& mu, const Matrix& Sigma) {
    if (psi_eval) return psi_eval(s, mu, Sigma);
    if (std::abs(s - model.T) <= 1e-12)
      return std::exp(-model.terminal_cost(mu, Sigma) / model.lambda);
    PicOptions inner = opts;
    inner.threads = 1;
    return estimate_psi(s, Belief{mu, Sigma}, model, n_inner,
                        mix_seed(rng_seed, 0x4d415254ull + (++eval_counter)), inner)
        .psi_hat;
  };

  MartingaleTable table;
  table.m_hat = Vector::Zero(Eigen::Index(checkpoints.size()));
  table.stderr_ = Vector::Zero(Eigen::Index(checkpoints.size()));
  for (size_t qi = 0; qi < checkpoints.size(); ++qi) {
    // locate the snapshot slot holding this grid index
    const auto it = std::find(batch.snapshot_steps.begin(), batch.snapshot_steps.end(),
                              idx[qi]);
    const auto slot = size_t(it - batch.snapshot_steps.begin());
    const double s = batch.times[size_t(idx[qi])];
    table.checkpoints.push_back(s);
    const Matrix& Sigma_s = batch.Sigma_path[size_t(idx[qi])];
    Vector M(N);
    for (int i = 0; i < N; ++i) {
      const Vector mu_i = batch.mu_snapshots[slot].row(i).transpose();
      M[i] = std::exp(-batch.partial_cost[slot][i] / model.lambda) *
             eval(s, mu_i, Sigma_s);
    }
    const double mean = M.mean();
    table.m_hat[Eigen::Index(qi)] = mean;
    table.stderr_[Eigen::Index(qi)] =
        std::sqrt((M.array() - mean).square().sum() / (N - 1)) / std::sqrt(double(N));
  }
  return table;
}

// Receding-horizon deployment: re-estimates the control every `replan_every`
// grid steps at the current belief and holds it in between.
inline ClosedLoopRecord receding_horizon_control(const ModelSpec& model, const Vector& x0,
                                                 const Belief& belief0, int replan_every,
                                                 int N, uint64_t rng_seed,
                                                 const SensingMode& sensing = SelectorMode{},
                                                 GradientMethod method = GradientMethod::likelihood_ratio,
                                                 const PicOptions& opts = {}) {
  require(replan_every >= 1, "replan_every must be positive");
  Vector u_hold = Vector::Zero(model.ell_a);
  bool have_u = false;
  Controller controller = [&](double t, const Belief& b) -> Vector {
    const int k = int(std::lround(t / model.dt));
    if (!have_u || k % replan_every == 0) {
      const auto ce =
          estimate_control(t, b, model, N, mix_seed(rng_seed, uint64_t(k)), method, opts);
      u_hold = ce.u;
      have_u = true;
    }
    return u_hold;
  };
  return simulate_closed_loop(model, x0, belief0, controller,
                              mix_seed(rng_seed, 0xC105EDull), sensing, opts.tol);
}

}  // namespace pics
