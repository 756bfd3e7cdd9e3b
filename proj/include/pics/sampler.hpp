#pragma once

// Monte Carlo integration of the augmented belief dynamics (mean SDE +
// deterministic covariance schedule) and full closed-loop simulation with a
// Kalman-Bucy filter in the loop.

#include <cmath>
#include <functional>
#include <vector>

#include "pics/covariance.hpp"
#include "pics/rng.hpp"

namespace pics {

// Symmetric factor L with L L' = M, by eigendecomposition with negative
// eigenvalues clamped to zero (M may be rank deficient).
inline Matrix sqrt_psd(const Matrix& M) {
  require(nearly_symmetric(M), "sqrt_psd requires a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(M));
  require(es.info() == Eigen::Success, "eigendecomposition failed");
  Vector d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = d[i] > 0.0 ? std::sqrt(d[i]) : 0.0;
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// Moore-Penrose inverse of a symmetric PSD matrix.
inline Matrix pinv_psd(const Matrix& M, double rel_cutoff = 1e-12) {
  require(nearly_symmetric(M), "pinv_psd requires a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(M));
  Vector d = es.eigenvalues();
  const double cutoff = rel_cutoff * std::max(1e-300, d.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = d[i] > cutoff ? 1.0 / d[i] : 0.0;
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

struct RolloutOptions {
  // Grid indices (relative to t0) at which per-path means and partial cost
  // integrals are retained; empty means {0, K}.
  std::vector<int> snapshots;
  int threads = 1;
  Tolerances tol;
};

struct RolloutBatch {
  int N = 0;
  double t0 = 0.0, horizon = 0.0;
  std::vector<double> times;     // K+1 grid nodes
  std::vector<Matrix> Sigma_path;  // shared schedule, deterministic under kappa
  std::vector<Vector> u_s;         // selector output per step
  std::vector<int> snapshot_steps;
  std::vector<Matrix> mu_snapshots;  // one N x n block per snapshot step
  std::vector<Vector> partial_cost;  // integral of (q + rho_kappa) up to each snapshot
  Vector running_cost;   // trapezoid integral of (q + rho_kappa) over [t0, T]
  Vector terminal_cost;  // phi(mu_T, Sigma_T)
  Matrix first_noise;    // N x n, the first-step increment L* dbeta
};

// Samples N paths of the augmented dynamics from (t0, belief0): Euler-Maruyama
// on the mean with uncontrolled drift A_t mu and constant diffusion
// L* = sqrt(D*), RK4 (shared with propagate_cov) on the covariance under the
// selector. Throws MatchingInfeasible when the selector fails on [t0, T].
inline RolloutBatch rollout_augmented(double t0, const Belief& belief0,
                                      const ModelSpec& model, int N, uint64_t rng_seed,
                                      const RolloutOptions& opts = {}) {
  require(N >= 1, "need at least one path");
  belief0.validate();
  require(belief0.mu.size() == model.n, "belief dimension must match model");

  CovariancePath cov = propagate_cov(belief0.Sigma, model, SelectorMode{}, opts.tol, t0);
  if (!cov.feasible) {
    throw MatchingInfeasible(cov.feasible_until, cov.Sigmas.back(), cov.failure_residual);
  }
  const int K = int(cov.times.size()) - 1;
  const int n = model.n;

  RolloutBatch batch;
  batch.N = N;
  batch.t0 = t0;
  batch.horizon = model.T;
  batch.times = cov.times;
  batch.Sigma_path = cov.Sigmas;
  batch.u_s = cov.u_s;

  batch.snapshot_steps = opts.snapshots.empty() ? std::vector<int>{0, K} : opts.snapshots;
  std::sort(batch.snapshot_steps.begin(), batch.snapshot_steps.end());
  batch.snapshot_steps.erase(
      std::unique(batch.snapshot_steps.begin(), batch.snapshot_steps.end()),
      batch.snapshot_steps.end());
  for (int idx : batch.snapshot_steps)
    require(idx >= 0 && idx <= K, "snapshot index outside the grid");

  // Node values of rho_kappa and of the Sigma-dependent cost terms are shared
  // across paths.
  std::vector<double> rho_node(size_t(K) + 1, 0.0);
  for (int k = 0; k < K; ++k) rho_node[size_t(k)] = model.rho(batch.u_s[size_t(k)]);
  if (K > 0)
    rho_node[size_t(K)] =
        model.rho(selector(model.T, batch.Sigma_path.back(), model, opts.tol));
  std::vector<double> sigma_term(size_t(K) + 1, 0.0);
  const bool custom_q = bool(model.q_custom);
  if (!custom_q) {
    for (int k = 0; k <= K; ++k)
      sigma_term[size_t(k)] =
          model.q.c + 0.5 * (model.q.S * batch.Sigma_path[size_t(k)]).trace();
  }

  const Matrix Lstar = sqrt_psd(matching_target(model));
  const double sq_dt = std::sqrt(model.dt);

  batch.running_cost = Vector::Zero(N);
  batch.terminal_cost = Vector::Zero(N);
  batch.first_noise = Matrix::Zero(N, n);
  batch.mu_snapshots.assign(batch.snapshot_steps.size(), Matrix::Zero(N, n));
  batch.partial_cost.assign(batch.snapshot_steps.size(), Vector::Zero(N));

  std::vector<const Matrix*> A_step(size_t(std::max(K, 0)));
  for (int k = 0; k < K; ++k) A_step[size_t(k)] = &model.A_at(t0 + (k + 0.5) * model.dt);

  parallel_for(N, opts.threads, [&](int begin, int end) {
    Vector mu(n), xi(n), noise(n), tmp(n);
    for (int i = begin; i < end; ++i) {
      NormalStream rng(rng_seed, uint64_t(i));
      mu = belief0.mu;
      double acc = 0.0;
      auto node_cost = [&](int k) {
        if (custom_q) return model.q_custom(mu, batch.Sigma_path[size_t(k)]) + rho_node[size_t(k)];
        tmp.noalias() = model.q.S * mu;
        return 0.5 * mu.dot(tmp) + model.q.s.dot(mu) + sigma_term[size_t(k)] +
               rho_node[size_t(k)];
      };
      double g_prev = node_cost(0);
      size_t snap = 0;
      if (snap < batch.snapshot_steps.size() && batch.snapshot_steps[snap] == 0) {
        batch.mu_snapshots[snap].row(i) = mu;
        batch.partial_cost[snap][i] = 0.0;
        ++snap;
      }
      for (int k = 0; k < K; ++k) {
        rng.fill(xi);
        noise.noalias() = Lstar * xi;
        noise *= sq_dt;
        if (k == 0) batch.first_noise.row(i) = noise;
        tmp.noalias() = (*A_step[size_t(k)]) * mu;
        mu += model.dt * tmp + noise;
        const double g_new = node_cost(k + 1);
        acc += 0.5 * model.dt * (g_prev + g_new);
        g_prev = g_new;
        if (snap < batch.snapshot_steps.size() && batch.snapshot_steps[snap] == k + 1) {
          batch.mu_snapshots[snap].row(i) = mu;
          batch.partial_cost[snap][i] = acc;
          ++snap;
        }
      }
      batch.running_cost[i] = acc;
      batch.terminal_cost[i] = model.terminal_cost(mu, batch.Sigma_path.back());
    }
  });
  return batch;
}

using Controller = std::function<Vector(double, const Belief&)>;

struct ClosedLoopRecord {
  std::vector<double> times;
  std::vector<Vector> x_path;   // true state (node values)
  std::vector<Vector> mu_path;  // filter mean
  std::vector<Matrix> Sigma_path;
  std::vector<Vector> y_increments;  // observation increments per step
  std::vector<Vector> u_a_path, u_s_path;  // applied controls per step
  std::vector<double> stage_cost_true;     // q_bar(x) at nodes
  std::vector<double> stage_cost_belief;   // q(mu, Sigma) at nodes
  double realized_cost = 0.0;       // belief objective: q + controls + phi(mu_T, Sigma_T)
  double realized_cost_true = 0.0;  // same with q_bar(x) and phi_bar(x_T)
  bool truncated = false;
  double truncated_at = 0.0;
};

// Co-simulates plant, observation channel and Kalman-Bucy filter on the model
// grid. The sensing control comes from the selector unless a fixed value or a
// schedule is supplied; the actuation comes from the controller callback.
inline ClosedLoopRecord simulate_closed_loop(const ModelSpec& model, const Vector& x0,
                                             const Belief& belief0,
                                             const Controller& controller,
                                             uint64_t rng_seed,
                                             const SensingMode& sensing = SelectorMode{},
                                             const Tolerances& tol = {}) {
  belief0.validate();
  require(x0.size() == model.n, "x0 dimension must match model");
  require(bool(controller), "controller callback required");
  const int K = model.steps();
  if (const auto* sched = std::get_if<ScheduleMode>(&sensing))
    require(sched->u.size() == size_t(K), "schedule must hold one control per step");

  Eigen::LLT<Matrix> Ro_llt(model.R_o);
  require(Ro_llt.info() == Eigen::Success, "R_o must be SPD");

  ClosedLoopRecord rec;
  rec.times.push_back(0.0);
  rec.x_path.push_back(x0);
  rec.mu_path.push_back(belief0.mu);
  rec.Sigma_path.push_back(symmetrized(belief0.Sigma));

  NormalStream w_rng(rng_seed, 0);   // process noise
  NormalStream nu_rng(rng_seed, 1);  // observation noise

  auto q_true = [&](const Vector& x) {
    return 0.5 * x.dot(model.q.S * x) + model.q.s.dot(x) + model.q.c;
  };
  rec.stage_cost_true.push_back(q_true(x0));
  rec.stage_cost_belief.push_back(model.stage_cost(belief0.mu, belief0.Sigma));

  const double dt = model.dt;
  const double sq_dt = std::sqrt(dt);
  double control_cost = 0.0;

  for (int k = 0; k < K; ++k) {
    const double t = k * dt;
    const Vector& x = rec.x_path.back();
    const Vector& mu = rec.mu_path.back();
    const Matrix& Sigma = rec.Sigma_path.back();

    Vector u_s;
    Matrix Sigma_next;
    try {
      if (std::holds_alternative<SelectorMode>(sensing)) {
        u_s = selector(t, Sigma, model, tol);
      } else if (const auto* fixed = std::get_if<FixedUMode>(&sensing)) {
        u_s = fixed->u;
      } else {
        u_s = std::get<ScheduleMode>(sensing).u[size_t(k)];
      }
      // Covariance step with the applied control held over the step (same
      // update as propagate_cov in schedule mode).
      const Matrix k1 = riccati_rhs(t, Sigma, u_s, model);
      const Matrix S2 = symmetrized(Sigma + 0.5 * dt * k1);
      const Matrix k2 = riccati_rhs(t + 0.5 * dt, S2, u_s, model);
      const Matrix S3 = symmetrized(Sigma + 0.5 * dt * k2);
      const Matrix k3 = riccati_rhs(t + 0.5 * dt, S3, u_s, model);
      const Matrix S4 = symmetrized(Sigma + dt * k3);
      const Matrix k4 = riccati_rhs(t + dt, S4, u_s, model);
      Sigma_next = symmetrized(Sigma + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
      if (min_eigenvalue(Sigma_next) <= tol.eps_pd)
        throw MatchingInfeasible(t + dt, Sigma_next, 0.0);
    } catch (const MatchingInfeasible& e) {
      rec.truncated = true;
      rec.truncated_at = e.t;
      break;
    }

    const Vector u_a = controller(t, Belief{mu, Sigma});
    require(u_a.size() == model.ell_a, "controller output has wrong dimension");
    const Matrix C = sensing_matrix(model.sensing, u_s);
    const Matrix& A = model.A_at(t + 0.5 * dt);

    const Vector dw = sq_dt * w_rng.next_vector(model.m);
    const Vector dnu = sq_dt * nu_rng.next_vector(model.p);
    const Vector x_next = x + (A * x + model.B * u_a) * dt + model.H * dw;
    const Vector dy = C * x * dt + model.sigma_o * dnu;
    const Vector innovation = dy - C * mu * dt;
    const Matrix gain = Sigma * C.transpose() * Ro_llt.solve(Matrix::Identity(model.p, model.p));
    const Vector mu_next = mu + (A * mu + model.B * u_a) * dt + gain * innovation;

    control_cost += dt * (0.5 * u_a.dot(model.R_a * u_a) + model.rho(u_s));

    rec.y_increments.push_back(dy);
    rec.u_a_path.push_back(u_a);
    rec.u_s_path.push_back(u_s);
    rec.times.push_back((k + 1) * dt);
    rec.x_path.push_back(x_next);
    rec.mu_path.push_back(mu_next);
    rec.Sigma_path.push_back(Sigma_next);
    rec.stage_cost_true.push_back(q_true(x_next));
    rec.stage_cost_belief.push_back(model.stage_cost(mu_next, Sigma_next));
  }

  // Trapezoid on the stage costs, rectangles on the per-step control costs.
  double q_belief_int = 0.0, q_true_int = 0.0;
  for (size_t k = 0; k + 1 < rec.times.size(); ++k) {
    q_belief_int += 0.5 * dt * (rec.stage_cost_belief[k] + rec.stage_cost_belief[k + 1]);
    q_true_int += 0.5 * dt * (rec.stage_cost_true[k] + rec.stage_cost_true[k + 1]);
  }
  rec.realized_cost = q_belief_int + control_cost;
  rec.realized_cost_true = q_true_int + control_cost;
  if (!rec.truncated) {
    rec.realized_cost += model.terminal_cost(rec.mu_path.back(), rec.Sigma_path.back());
    rec.realized_cost_true += 0.5 * rec.x_path.back().dot(model.phi.S * rec.x_path.back()) +
                              model.phi.s.dot(rec.x_path.back()) + model.phi.c;
  }
  return rec;
}

}  // namespace pics
