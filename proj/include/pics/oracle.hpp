#pragma once

// Independent verification paths: a 1-D finite-difference solver for the
// linearized desirability PDE along the covariance characteristic, an exact
// LQG solution of the selector-restricted problem for quadratic costs, and
// finite-difference consistency checkers.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pics/covariance.hpp"

namespace pics {

enum class PdeScheme { explicit_euler, crank_nicolson };

struct PdeGridSpec {
  double mu_min = -6.0, mu_max = 6.0;
  int J = 241;  // spatial nodes
  int K = 200;  // time steps
  PdeScheme scheme = PdeScheme::crank_nicolson;
};

struct PdeGrid {
  std::vector<double> times;  // K+1 nodes on [0, T]
  std::vector<double> mus;    // J nodes
  Matrix psi;                 // (K+1) x J
  std::vector<double> Sigma_sched;  // covariance characteristic at the time nodes
  PdeScheme scheme = PdeScheme::crank_nicolson;
  double lambda = 1.0;

  double psi_at(double t, double mu) const {
    const double dtg = times[1] - times[0];
    const double dmu = mus[1] - mus[0];
    const double kf = std::clamp((t - times.front()) / dtg, 0.0, double(times.size() - 1));
    const double jf = std::clamp((mu - mus.front()) / dmu, 0.0, double(mus.size() - 1));
    const int k0 = std::min(int(kf), int(times.size()) - 2);
    const int j0 = std::min(int(jf), int(mus.size()) - 2);
    const double a = kf - k0, b = jf - j0;
    return (1 - a) * ((1 - b) * psi(k0, j0) + b * psi(k0, j0 + 1)) +
           a * ((1 - b) * psi(k0 + 1, j0) + b * psi(k0 + 1, j0 + 1));
  }
  double value_at(double t, double mu) const { return -lambda * std::log(psi_at(t, mu)); }
};

struct ValueGrid {
  std::vector<double> times;
  std::vector<double> mus;
  Matrix V;  // (K+1) x J
};

inline ValueGrid value_grid_from(const PdeGrid& g) {
  ValueGrid v;
  v.times = g.times;
  v.mus = g.mus;
  v.V = (-g.lambda) * g.psi.array().log().matrix();
  return v;
}

namespace detail {

// Scalar drift-free configuration shared by the PDE oracle and the residual
// checker: covariance characteristic Sigma_t = Sigma_0 + (Q - D*) t and the
// selector's sensing cost along it.
struct ScalarCharacteristic {
  double Sigma0 = 1.0;
  double slope = 0.0;
  double Dstar = 0.0;

  double Sigma(double t) const { return Sigma0 + slope * t; }
};

inline ScalarCharacteristic scalar_characteristic(const ModelSpec& model,
                                                  const Matrix& Sigma0) {
  require(model.n == 1 && model.p == 1 && model.ell_a == 1,
          "scalar oracle requires n = p = ell_a = 1");
  for (const auto& Ak : model.A)
    require(Ak.norm() == 0.0, "scalar oracle requires drift-free dynamics (A = 0)");
  require(!model.q_custom && !model.phi_custom,
          "scalar oracle requires quadratic costs");
  require(Sigma0.rows() == 1 && Sigma0.cols() == 1 && Sigma0(0, 0) > 0.0,
          "Sigma0 must be positive");
  ScalarCharacteristic ch;
  ch.Sigma0 = Sigma0(0, 0);
  ch.Dstar = matching_target(model)(0, 0);
  ch.slope = model.Q(0, 0) - ch.Dstar;
  if (ch.slope < 0.0) {
    const double t_star = ch.Sigma0 / (-ch.slope);
    if (model.T >= t_star)
      throw InfeasibleHorizon("covariance schedule exits positive definiteness at t* < T");
  }
  return ch;
}

inline double rho_kappa_scalar(const ModelSpec& model, double Sigma_t) {
  // |kappa(Sigma)|^2 = D* R_o / Sigma^2; rho is even so the branch is irrelevant.
  const double dstar = matching_target(model)(0, 0);
  const double kappa_sq = dstar * model.R_o(0, 0) / (Sigma_t * Sigma_t);
  return 0.5 * model.rho.R_s(0, 0) * kappa_sq;
}

// Thomas algorithm for a tridiagonal system (a: sub, b: diag, c: super).
inline void solve_tridiagonal(std::vector<double>& a, std::vector<double>& b,
                              std::vector<double>& c, std::vector<double>& d) {
  const size_t n = b.size();
  for (size_t i = 1; i < n; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    d[i] -= w * d[i - 1];
  }
  d[n - 1] /= b[n - 1];
  for (size_t i = n - 1; i-- > 0;) d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
}

}  // namespace detail

// Solves the desirability PDE of the scalar drift-free configuration reduced
// along the covariance characteristic:
//   -d(psi)/dt = -((q(mu, Sigma_t) + rho_kappa(t)) / lambda) psi
//                + (D*/2) d2(psi)/dmu2,
// backward from psi(T, mu) = exp(-phi(mu, Sigma_T)/lambda), with homogeneous
// Neumann boundaries.
inline PdeGrid solve_scalar_pde(const ModelSpec& model, const Matrix& Sigma0,
                                const PdeGridSpec& spec) {
  const auto ch = detail::scalar_characteristic(model, Sigma0);
  require(spec.J >= 3 && spec.K >= 1, "PDE grid too small");
  require(spec.mu_max > spec.mu_min, "mu_max must exceed mu_min");

  const int J = spec.J, K = spec.K;
  const double dmu = (spec.mu_max - spec.mu_min) / (J - 1);
  const double dt = model.T / K;
  const double diff = 0.5 * ch.Dstar;
  if (spec.scheme == PdeScheme::explicit_euler) {
    require(dt <= dmu * dmu / std::max(ch.Dstar, 1e-300),
            "explicit scheme violates the CFL bound dt <= dmu^2 / D*");
  }

  PdeGrid grid;
  grid.scheme = spec.scheme;
  grid.lambda = model.lambda;
  grid.times.resize(size_t(K) + 1);
  grid.mus.resize(size_t(J));
  grid.Sigma_sched.resize(size_t(K) + 1);
  for (int k = 0; k <= K; ++k) {
    grid.times[size_t(k)] = k * dt;
    grid.Sigma_sched[size_t(k)] = ch.Sigma(k * dt);
  }
  for (int j = 0; j < J; ++j) grid.mus[size_t(j)] = spec.mu_min + j * dmu;
  grid.psi.resize(K + 1, J);

  // reaction coefficient (q + rho_kappa)/lambda at (t_k, mu_j)
  auto react = [&](int k, int j) {
    const double mu = grid.mus[size_t(j)];
    const double st = grid.Sigma_sched[size_t(k)];
    const double qv = 0.5 * model.q.S(0, 0) * mu * mu + model.q.s[0] * mu + model.q.c +
                      0.5 * model.q.S(0, 0) * st;
    return (qv + detail::rho_kappa_scalar(model, st)) / model.lambda;
  };

  Vector mu1(1);
  Matrix s1(1, 1);
  for (int j = 0; j < J; ++j) {
    mu1[0] = grid.mus[size_t(j)];
    s1(0, 0) = grid.Sigma_sched[size_t(K)];
    grid.psi(K, j) = std::exp(-gaussian_expect(model.phi, mu1, s1) / model.lambda);
  }

  const double r = diff / (dmu * dmu);
  auto laplacian = [&](const Matrix& psi, int k, int j) {
    if (j == 0) return 2.0 * (psi(k, 1) - psi(k, 0));
    if (j == J - 1) return 2.0 * (psi(k, J - 2) - psi(k, J - 1));
    return psi(k, j - 1) - 2.0 * psi(k, j) + psi(k, j + 1);
  };

  if (spec.scheme == PdeScheme::explicit_euler) {
    for (int k = K; k-- > 0;) {
      for (int j = 0; j < J; ++j) {
        grid.psi(k, j) = grid.psi(k + 1, j) +
                         dt * (-react(k + 1, j) * grid.psi(k + 1, j) +
                               r * laplacian(grid.psi, k + 1, j));
      }
    }
  } else {
    std::vector<double> a(size_t(J)), b(size_t(J)), c(size_t(J)), d(size_t(J));
    for (int k = K; k-- > 0;) {
      for (int j = 0; j < J; ++j) {
        const bool edge = (j == 0 || j == J - 1);
        const double off = edge ? dt * r : 0.5 * dt * r;
        a[size_t(j)] = (j == 0) ? 0.0 : -off;
        c[size_t(j)] = (j == J - 1) ? 0.0 : -off;
        b[size_t(j)] = 1.0 + 0.5 * dt * react(k, j) + dt * r;
        d[size_t(j)] = grid.psi(k + 1, j) +
                       0.5 * dt * (-react(k + 1, j) * grid.psi(k + 1, j) +
                                   r * laplacian(grid.psi, k + 1, j));
      }
      detail::solve_tridiagonal(a, b, c, d);
      for (int j = 0; j < J; ++j) grid.psi(k, j) = d[size_t(j)];
    }
  }
  return grid;
}

struct LqgSolution {
  std::vector<double> times;
  std::vector<Matrix> P;  // quadratic value coefficient
  std::vector<Vector> b;
  std::vector<double> c;

  int index_of(double t) const {
    const double dt = times[1] - times[0];
    const int k = int(std::lround((t - times.front()) / dt));
    require(k >= 0 && k < int(times.size()), "time outside the LQG grid");
    require(std::abs(times[size_t(k)] - t) <= 1e-9 * std::max(1.0, std::abs(t)),
            "time must lie on the LQG grid");
    return k;
  }

  // V(t, mu) = 1/2 mu'P_t mu + b_t'mu + c_t
  double value(double t, const Vector& mu) const {
    const int k = index_of(t);
    return 0.5 * mu.dot(P[size_t(k)] * mu) + b[size_t(k)].dot(mu) + c[size_t(k)];
  }

  // u*(t, mu) = -R_a^-1 B'(P_t mu + b_t)
  Vector feedback(double t, const Vector& mu, const ModelSpec& model) const {
    const int k = index_of(t);
    return -model.R_a.llt().solve(model.B.transpose() * (P[size_t(k)] * mu + b[size_t(k)]));
  }
};

// Exact value function of the selector-restricted problem for quadratic costs:
// backward RK4 on
//   -P' = S_q + A'P + PA - P B R_a^-1 B' P
//   -b' = s_q + (A - B R_a^-1 B' P)' b
//   -c' = c_q + 1/2 tr(S_q Sigma_t) + rho_kappa(t) + 1/2 tr(D* P)
//         - 1/2 b' B R_a^-1 B' b
// with P_T = S_phi, b_T = s_phi, c_T = c_phi + 1/2 tr(S_phi Sigma_T).
inline LqgSolution lqg_solve(const ModelSpec& model, const Matrix& Sigma0,
                             const Tolerances& tol = {}) {
  if (model.q_custom || model.phi_custom)
    throw UnsupportedCost("lqg_solve requires quadratic costs");
  model.validate();

  // Covariance characteristic and selector cost on a half grid so RK4 stage
  // times land on computed nodes.
  ModelSpec half = model;
  half.dt = 0.5 * model.dt;
  const CovariancePath cov = propagate_cov(Sigma0, half, SelectorMode{}, tol);
  if (!cov.feasible)
    throw InfeasibleHorizon("selector infeasible before T; no LQG schedule exists");
  const int K = model.steps();
  std::vector<double> trq(size_t(2 * K) + 1), rho_k(size_t(2 * K) + 1);
  for (int j = 0; j <= 2 * K; ++j) {
    trq[size_t(j)] = 0.5 * (model.q.S * cov.Sigmas[size_t(j)]).trace();
    rho_k[size_t(j)] =
        model.rho(selector(cov.times[size_t(j)], cov.Sigmas[size_t(j)], model, tol));
  }

  const Matrix BRB = model.B * model.R_a.llt().solve(model.B.transpose());
  const Matrix Dstar = matching_target(model);

  LqgSolution sol;
  sol.times.resize(size_t(K) + 1);
  sol.P.resize(size_t(K) + 1);
  sol.b.resize(size_t(K) + 1);
  sol.c.resize(size_t(K) + 1);
  for (int k = 0; k <= K; ++k) sol.times[size_t(k)] = k * model.dt;

  sol.P[size_t(K)] = symmetrized(model.phi.S);
  sol.b[size_t(K)] = model.phi.s;
  sol.c[size_t(K)] = model.phi.c + 0.5 * (model.phi.S * cov.Sigmas[size_t(2 * K)]).trace();

  struct State {
    Matrix P;
    Vector b;
    double c;
  };
  auto deriv = [&](const State& y, const Matrix& A, int half_idx) {
    State d;
    d.P = -(model.q.S + A.transpose() * y.P + y.P * A - y.P * BRB * y.P);
    d.b = -(model.q.s + (A - BRB * y.P).transpose() * y.b);
    d.c = -(model.q.c + trq[size_t(half_idx)] + rho_k[size_t(half_idx)] +
            0.5 * (Dstar * y.P).trace() - 0.5 * y.b.dot(BRB * y.b));
    return d;
  };
  auto axpy = [](const State& y, double h, const State& d) {
    return State{symmetrized(y.P + h * d.P), y.b + h * d.b, y.c + h * d.c};
  };

  const double h = -model.dt;
  for (int k = K; k-- > 0;) {
    const Matrix& A = model.A_at((k + 0.5) * model.dt);
    const State y1{sol.P[size_t(k) + 1], sol.b[size_t(k) + 1], sol.c[size_t(k) + 1]};
    const State d1 = deriv(y1, A, 2 * (k + 1));
    const State d2 = deriv(axpy(y1, 0.5 * h, d1), A, 2 * k + 1);
    const State d3 = deriv(axpy(y1, 0.5 * h, d2), A, 2 * k + 1);
    const State d4 = deriv(axpy(y1, h, d3), A, 2 * k);
    sol.P[size_t(k)] = symmetrized(y1.P + (h / 6.0) * (d1.P + 2.0 * d2.P + 2.0 * d3.P + d4.P));
    sol.b[size_t(k)] = y1.b + (h / 6.0) * (d1.b + 2.0 * d2.b + 2.0 * d3.b + d4.b);
    sol.c[size_t(k)] = y1.c + (h / 6.0) * (d1.c + 2.0 * d2.c + 2.0 * d3.c + d4.c);
  }
  return sol;
}

// Pointwise residual of the reduced HJB equation on a value function sampled
// along the covariance characteristic (forward differences in t, central in
// mu). Row k covers t_k, columns cover interior nodes mu_1 .. mu_{J-2}.
inline Matrix hjb_residual(const ValueGrid& grid, const ModelSpec& model,
                           const Matrix& Sigma0) {
  const int K = int(grid.times.size()) - 1;
  const int J = int(grid.mus.size());
  require(J >= 5 && K >= 5, "grid too coarse for a residual check");
  const auto ch = detail::scalar_characteristic(model, Sigma0);
  const double dtg = grid.times[1] - grid.times[0];
  const double dmu = grid.mus[1] - grid.mus[0];
  const double brb = ch.Dstar / model.lambda;  // B R_a^-1 B' (scalar)

  Matrix res(K, J - 2);
  for (int k = 0; k < K; ++k) {
    const double t = grid.times[size_t(k)];
    const double st = ch.Sigma(t);
    const double rho_t = detail::rho_kappa_scalar(model, st);
    const double a_t = model.A_at(t + 0.5 * dtg)(0, 0);
    for (int j = 1; j + 1 < J; ++j) {
      const double mu = grid.mus[size_t(j)];
      const double dVdt = (grid.V(k + 1, j) - grid.V(k, j)) / dtg;
      const double dVdmu = (grid.V(k, j + 1) - grid.V(k, j - 1)) / (2.0 * dmu);
      const double d2V = (grid.V(k, j + 1) - 2.0 * grid.V(k, j) + grid.V(k, j - 1)) /
                         (dmu * dmu);
      const double qv = 0.5 * model.q.S(0, 0) * mu * mu + model.q.s[0] * mu + model.q.c +
                        0.5 * model.q.S(0, 0) * st;
      res(k, j - 1) = dVdt + qv + rho_t + dVdmu * a_t * mu + 0.5 * ch.Dstar * d2V -
                      0.5 * brb * dVdmu * dVdmu;
    }
  }
  return res;
}

// max |V + lambda log psi| over a shared grid; verifies the transform between
// the two oracle representations.
inline double cole_hopf_check(const PdeGrid& psi_grid, const ValueGrid& v_grid) {
  require(psi_grid.times.size() == v_grid.times.size() &&
              psi_grid.mus.size() == v_grid.mus.size(),
          "grids must match");
  for (size_t k = 0; k < psi_grid.times.size(); ++k)
    require(std::abs(psi_grid.times[k] - v_grid.times[k]) <= 1e-9, "time grids differ");
  for (size_t j = 0; j < psi_grid.mus.size(); ++j)
    require(std::abs(psi_grid.mus[j] - v_grid.mus[j]) <= 1e-9, "mu grids differ");
  if (psi_grid.psi.minCoeff() <= 0.0)
    throw PositivityViolation("psi must be positive everywhere");
  return (v_grid.V + psi_grid.lambda * psi_grid.psi.array().log().matrix()).cwiseAbs().maxCoeff();
}

}  // namespace pics
