#pragma once

// Controlled Riccati propagation, the matching set and its deterministic
// selector, and feasibility monitoring of the covariance schedule.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include "pics/model.hpp"

namespace pics {

struct Belief {
  Vector mu;
  Matrix Sigma;

  void validate() const {
    require(mu.allFinite(), "belief mean must be finite");
    require(Sigma.rows() == mu.size() && Sigma.cols() == mu.size(),
            "Sigma dimensions must match mu");
    require(nearly_symmetric(Sigma), "Sigma must be symmetric");
    require(min_eigenvalue(Sigma) > 0.0, "Sigma must be positive definite");
  }
};

struct MatchingSolution {
  // Controls u with D(Sigma, u) = D*, deduplicated, in deterministic order.
  std::vector<Vector> solutions;
  // Frobenius norm of D(Sigma, u) - D* at the returned u (worst over the set),
  // or the best residual found when the set is empty.
  double residual = 0.0;

  bool empty() const { return solutions.empty(); }
};

// Sensing modes for covariance propagation and closed-loop simulation.
struct SelectorMode {};
struct FixedUMode { Vector u; };
struct ScheduleMode { std::vector<Vector> u; };  // one entry per grid step
using SensingMode = std::variant<SelectorMode, FixedUMode, ScheduleMode>;

struct CovariancePath {
  std::vector<double> times;   // grid nodes actually reached
  std::vector<Matrix> Sigmas;  // all positive definite
  std::vector<Vector> u_s;     // applied sensing per completed step (times.size()-1)
  double feasible_until = 0.0; // horizon time when fully feasible
  bool feasible = false;
  double max_matching_residual = 0.0;  // selector mode: max ||D(Sigma_k,u_k) - D*||_F
  double failure_residual = 0.0;       // best matching residual at the failure point
};

// a(t, Sigma, u) = A_t Sigma + Sigma A_t' + Q - D(Sigma, u), symmetrized.
inline Matrix riccati_rhs(double t, const Matrix& Sigma, const Vector& u,
                          const ModelSpec& model) {
  require(Sigma.rows() == model.n && Sigma.cols() == model.n, "Sigma must be n x n");
  const Matrix& A = model.A_at(t);
  const Matrix AS = A * Sigma;
  return symmetrized(AS + AS.transpose() + model.Q -
                     sensing_D(model.sensing, Sigma, u, model.R_o));
}

// D* = lambda B R_a^-1 B', the diffusion the matching condition enforces.
inline Matrix matching_target(const ModelSpec& model) {
  Eigen::LLT<Matrix> llt(model.R_a);
  require(llt.info() == Eigen::Success, "R_a must be SPD");
  return symmetrized(model.lambda * model.B * llt.solve(model.B.transpose()));
}

namespace detail {

// Levenberg-Marquardt descent on ||D(Sigma,u) - D*||_F^2 for the affine family.
// D(Sigma, u) = sum_{k,j} u_k u_j G_kj with G_kj = Sigma C_k' R_o^-1 C_j Sigma.
inline Vector affine_descend(const std::vector<std::vector<Matrix>>& G,
                             const Matrix& Dstar, Vector u, double stop_norm) {
  const int ells = int(G.size());
  const auto n2 = Dstar.size();
  auto eval_D = [&](const Vector& v) {
    Matrix D = Matrix::Zero(Dstar.rows(), Dstar.cols());
    for (int k = 0; k < ells; ++k)
      for (int j = 0; j < ells; ++j) D += v[k] * v[j] * G[size_t(k)][size_t(j)];
    return D;
  };
  double mu_lm = 1e-3;
  Matrix R = eval_D(u) - Dstar;
  double cost = R.squaredNorm();
  for (int it = 0; it < 200; ++it) {
    if (std::sqrt(cost) <= stop_norm) break;
    Matrix J(n2, ells);
    for (int l = 0; l < ells; ++l) {
      Matrix dD = Matrix::Zero(Dstar.rows(), Dstar.cols());
      for (int k = 0; k < ells; ++k)
        dD += u[k] * (G[size_t(l)][size_t(k)] + G[size_t(k)][size_t(l)]);
      J.col(l) = Eigen::Map<const Vector>(dD.data(), n2);
    }
    const Vector r = Eigen::Map<const Vector>(R.data(), n2);
    const Matrix JtJ = J.transpose() * J;
    const Vector g = J.transpose() * r;
    if (g.norm() <= 1e-14 * std::max(1.0, std::sqrt(cost))) break;
    bool stepped = false;
    for (int tries = 0; tries < 25; ++tries) {
      const Matrix M = JtJ + mu_lm * Matrix::Identity(ells, ells);
      const Vector step = M.ldlt().solve(g);
      const Vector u_new = u - step;
      const Matrix R_new = eval_D(u_new) - Dstar;
      const double cost_new = R_new.squaredNorm();
      if (cost_new < cost) {
        u = u_new;
        R = R_new;
        cost = cost_new;
        mu_lm = std::max(mu_lm * 0.3, 1e-12);
        stepped = true;
        break;
      }
      mu_lm *= 4.0;
    }
    if (!stepped) break;
  }
  return u;
}

}  // namespace detail

// The matching set U^s(Sigma) = { u : D(Sigma, u) = D* }.
// Scalar: closed two-point form. Scaled: proportionality test. Affine:
// multistart least squares; all distinct minimizers within tolerance.
inline MatchingSolution solve_matching(const SensingFamily& family, const Matrix& Sigma,
                                       const ModelSpec& model,
                                       double tol_match = Tolerances{}.tol_match) {
  require(nearly_symmetric(Sigma), "Sigma must be symmetric");
  const Matrix Dstar = matching_target(model);
  const double dnorm = Dstar.norm();
  const double accept = tol_match * std::max(1.0, dnorm);
  MatchingSolution out;

  auto residual_at = [&](const Vector& u) {
    return (sensing_D(family, Sigma, u, model.R_o) - Dstar).norm();
  };

  if (std::holds_alternative<ScalarSensing>(family)) {
    const double sig = Sigma(0, 0);
    require(sig > 0.0, "Sigma must be positive");
    // D(Sigma,u) = Sigma^2 u^2 / R_o = D* solved for u.
    const double u_pos = std::sqrt(Dstar(0, 0) * model.R_o(0, 0)) / sig;
    Vector up(1), un(1);
    up[0] = u_pos;
    un[0] = -u_pos;
    out.residual = std::max(residual_at(up), residual_at(un));
    out.solutions = {up, un};
    if (u_pos == 0.0) out.solutions = {up};
    return out;
  }

  if (const auto* scaled = std::get_if<ScaledSensing>(&family)) {
    const Matrix G = sensing_D(SensingFamily{ScaledSensing{scaled->C0}}, Sigma,
                               Vector::Ones(1), model.R_o);
    const double gg = G.squaredNorm();
    if (gg == 0.0) {
      out.residual = dnorm;
      return out;
    }
    const double alpha = std::max(0.0, (Dstar.cwiseProduct(G)).sum() / gg);
    const double resid = (Dstar - alpha * G).norm();
    if (resid <= accept) {
      Vector up(1), un(1);
      up[0] = std::sqrt(alpha);
      un[0] = -up[0];
      out.solutions = up[0] == 0.0 ? std::vector<Vector>{up} : std::vector<Vector>{up, un};
      out.residual = std::max(residual_at(up), resid);
      return out;
    }
    out.residual = resid;
    return out;
  }

  // Affine family: seeded multistart Levenberg-Marquardt.
  const auto& affine = std::get<AffineSensing>(family);
  const int ells = int(affine.C.size());
  Eigen::LLT<Matrix> llt(model.R_o);
  require(llt.info() == Eigen::Success, "R_o must be SPD");
  std::vector<std::vector<Matrix>> G(size_t(ells), std::vector<Matrix>(size_t(ells)));
  for (int k = 0; k < ells; ++k) {
    const Matrix CkS = affine.C[size_t(k)] * Sigma;
    for (int j = 0; j < ells; ++j)
      G[size_t(k)][size_t(j)] = CkS.transpose() * llt.solve(affine.C[size_t(j)] * Sigma);
  }
  const double ra_inv_norm = Matrix(model.R_a.inverse()).norm();
  const double scale = std::sqrt(model.lambda * model.R_o.norm() * ra_inv_norm) /
                       std::max(Sigma.norm(), 1e-12);
  const double stop_norm = 1e-2 * accept;
  std::mt19937_64 gen(0x5eed5eedULL + uint64_t(ells));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<Vector> found;
  for (int start = 0; start < 16; ++start) {
    Vector u0(ells);
    for (int i = 0; i < ells; ++i) u0[i] = scale * unif(gen);
    const Vector u = detail::affine_descend(G, Dstar, u0, stop_norm);
    const double resid = residual_at(u);
    best = std::min(best, resid);
    if (resid <= accept) {
      const bool dup = std::any_of(found.begin(), found.end(), [&](const Vector& v) {
        return (v - u).lpNorm<Eigen::Infinity>() <=
               1e-6 * (1.0 + u.lpNorm<Eigen::Infinity>());
      });
      if (!dup) found.push_back(u);
    }
  }
  // Deterministic order regardless of which start found what.
  std::sort(found.begin(), found.end(), [](const Vector& a, const Vector& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) return a[i] < b[i];
    return false;
  });
  if (found.empty()) {
    out.residual = best;
    return out;
  }
  out.solutions = std::move(found);
  out.residual = 0.0;
  for (const auto& u : out.solutions) out.residual = std::max(out.residual, residual_at(u));
  return out;
}

namespace detail {

// true if a is lexicographically greater than b
inline bool lex_greater(const Vector& a, const Vector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

}  // namespace detail

// Measurable selector kappa(t, Sigma): the matching control of least sensing
// cost, ties broken by lexicographically largest u (picks the positive branch
// of the scalar two-point set).
inline Vector selector(double t, const Matrix& Sigma, const ModelSpec& model,
                       const Tolerances& tol = {}) {
  const MatchingSolution ms = solve_matching(model.sensing, Sigma, model, tol.tol_match);
  if (ms.empty()) throw MatchingInfeasible(t, Sigma, ms.residual);
  const Vector* pick = &ms.solutions.front();
  double pick_rho = model.rho(*pick);
  for (size_t i = 1; i < ms.solutions.size(); ++i) {
    const double r = model.rho(ms.solutions[i]);
    if (r < pick_rho || (r == pick_rho && detail::lex_greater(ms.solutions[i], *pick))) {
      pick = &ms.solutions[i];
      pick_rho = r;
    }
  }
  return *pick;
}

// Classical RK4 on the controlled Riccati ODE over the model grid starting at
// t0, with the sensing control chosen per mode (the selector is re-evaluated
// at every stage). Stops at the first node violating positive definiteness or
// at the first empty matching set.
inline CovariancePath propagate_cov(const Matrix& Sigma0, const ModelSpec& model,
                                    const SensingMode& mode, const Tolerances& tol = {},
                                    double t0 = 0.0) {
  require(Sigma0.rows() == model.n && Sigma0.cols() == model.n, "Sigma0 must be n x n");
  require(nearly_symmetric(Sigma0), "Sigma0 must be symmetric");
  require(min_eigenvalue(Sigma0) > 0.0, "Sigma0 must be positive definite");
  require(t0 >= 0.0 && t0 <= model.T + 1e-12, "t0 must lie in [0, T]");
  const double span = model.T - t0;
  const int K = int(std::lround(span / model.dt));
  require(std::abs(span / model.dt - K) <= 1e-6 * std::max(1.0, double(K)),
          "(T - t0)/dt must be an integer");
  const bool use_selector = std::holds_alternative<SelectorMode>(mode);
  if (const auto* sched = std::get_if<ScheduleMode>(&mode))
    require(sched->u.size() == size_t(K), "schedule must hold one control per step");
  if (const auto* fixed = std::get_if<FixedUMode>(&mode))
    require(fixed->u.size() == model.ell_s, "fixed control has wrong dimension");

  const Matrix Dstar = matching_target(model);
  CovariancePath path;
  path.times.reserve(size_t(K) + 1);
  path.Sigmas.reserve(size_t(K) + 1);
  path.u_s.reserve(size_t(K));
  path.times.push_back(t0);
  path.Sigmas.push_back(symmetrized(Sigma0));

  const double dt = model.dt;
  for (int k = 0; k < K; ++k) {
    const double t = t0 + k * dt;
    const Matrix& S = path.Sigmas.back();
    Vector u_step;
    Matrix S_next;
    try {
      auto stage_u = [&](double ts, const Matrix& Ss) -> Vector {
        if (use_selector) return selector(ts, Ss, model, tol);
        if (const auto* fixed = std::get_if<FixedUMode>(&mode)) return fixed->u;
        return std::get<ScheduleMode>(mode).u[size_t(k)];
      };
      u_step = stage_u(t, S);
      if (use_selector) {
        const double resid = (sensing_D(model.sensing, S, u_step, model.R_o) - Dstar).norm();
        path.max_matching_residual = std::max(path.max_matching_residual, resid);
      }
      const Matrix k1 = riccati_rhs(t, S, u_step, model);
      const Matrix S2 = symmetrized(S + 0.5 * dt * k1);
      const Matrix k2 = riccati_rhs(t + 0.5 * dt, S2, stage_u(t + 0.5 * dt, S2), model);
      const Matrix S3 = symmetrized(S + 0.5 * dt * k2);
      const Matrix k3 = riccati_rhs(t + 0.5 * dt, S3, stage_u(t + 0.5 * dt, S3), model);
      const Matrix S4 = symmetrized(S + dt * k3);
      const Matrix k4 = riccati_rhs(t + dt, S4, stage_u(t + dt, S4), model);
      S_next = symmetrized(S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    } catch (const MatchingInfeasible& e) {
      path.feasible_until = t;
      path.feasible = false;
      path.failure_residual = e.best_residual;
      return path;
    }
    if (min_eigenvalue(S_next) <= tol.eps_pd) {
      path.feasible_until = t + dt;
      path.feasible = false;
      return path;
    }
    path.u_s.push_back(u_step);
    path.times.push_back(t0 + (k + 1) * dt);
    path.Sigmas.push_back(S_next);
  }
  if (use_selector && K > 0) {
    // Audit the final node as well.
    try {
      const Vector uT = selector(model.T, path.Sigmas.back(), model, tol);
      const double resid =
          (sensing_D(model.sensing, path.Sigmas.back(), uT, model.R_o) - Dstar).norm();
      path.max_matching_residual = std::max(path.max_matching_residual, resid);
    } catch (const MatchingInfeasible& e) {
      path.feasible_until = model.T;
      path.feasible = false;
      path.failure_residual = e.best_residual;
      return path;
    }
  }
  path.feasible_until = model.T;
  path.feasible = true;
  return path;
}

// Largest horizon on which the matching schedule stays feasible. Closed form
// for the scalar family with A = 0; otherwise read off a selector-mode
// propagation. With a bounded sensor, feasibility additionally requires
// |kappa(Sigma_t)| <= u_max.
inline double feasibility_horizon(const Matrix& Sigma0, const ModelSpec& model,
                                  std::optional<double> u_max = std::nullopt,
                                  const Tolerances& tol = {}) {
  const bool drift_free =
      std::all_of(model.A.begin(), model.A.end(), [](const Matrix& Ak) { return Ak.norm() == 0.0; });
  if (std::holds_alternative<ScalarSensing>(model.sensing) && drift_free) {
    const double q0 = model.Q(0, 0);
    const double dstar = matching_target(model)(0, 0);
    const double slope = q0 - dstar;  // Sigma_t = Sigma_0 + slope * t
    const double s0 = Sigma0(0, 0);
    if (u_max) {
      require(*u_max > 0.0, "u_max must be positive");
      const double sigma_min = std::sqrt(dstar * model.R_o(0, 0)) / *u_max;
      if (s0 < sigma_min) return 0.0;
      if (slope >= 0.0) return model.T;
      return std::min(model.T, (s0 - sigma_min) / (-slope));
    }
    if (slope >= 0.0) return model.T;
    return std::min(model.T, s0 / (-slope));
  }
  const CovariancePath path = propagate_cov(Sigma0, model, SelectorMode{}, tol);
  if (u_max) {
    for (size_t k = 0; k < path.u_s.size(); ++k) {
      if (path.u_s[k].lpNorm<Eigen::Infinity>() > *u_max) return path.times[k];
    }
  }
  return path.feasible_until;
}

}  // namespace pics
