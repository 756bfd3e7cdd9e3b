#pragma once

// Linear-Gaussian problem data: plant, sensing family, quadratic costs, and
// the closed-form Gaussian expectation used for belief-space stage costs.

#include <cmath>
#include <functional>
#include <variant>
#include <vector>

#include "pics/common.hpp"

namespace pics {

// q_bar(x) = 1/2 x'Sx + s'x + c (same shape for the terminal cost).
struct QuadraticCost {
  Matrix S;
  Vector s;
  double c = 0.0;
};

// rho(u) = 1/2 u'R_s u, R_s >= 0.
struct SensingCost {
  Matrix R_s;
  double operator()(const Vector& u) const { return 0.5 * u.dot(R_s * u); }
};

struct ScalarSensing {};                          // C(u) = u, scalar plant only
struct ScaledSensing { Matrix C0; };              // C(u) = u * C0
struct AffineSensing { std::vector<Matrix> C; };  // C(u) = sum_k u_k C_k

using SensingFamily = std::variant<ScalarSensing, ScaledSensing, AffineSensing>;

inline int sensing_dim(const SensingFamily& family) {
  if (std::holds_alternative<AffineSensing>(family))
    return int(std::get<AffineSensing>(family).C.size());
  return 1;
}

inline Matrix sensing_matrix(const SensingFamily& family, const Vector& u) {
  require(u.allFinite(), "sensing control must be finite");
  require(u.size() == sensing_dim(family), "sensing control has wrong dimension");
  if (std::holds_alternative<ScalarSensing>(family)) {
    Matrix C(1, 1);
    C(0, 0) = u[0];
    return C;
  }
  if (const auto* scaled = std::get_if<ScaledSensing>(&family)) {
    return u[0] * scaled->C0;
  }
  const auto& affine = std::get<AffineSensing>(family);
  Matrix C = Matrix::Zero(affine.C[0].rows(), affine.C[0].cols());
  for (size_t k = 0; k < affine.C.size(); ++k) C += u[k] * affine.C[k];
  return C;
}

// Innovation diffusion D(Sigma, u) = Sigma C(u)' R_o^-1 C(u) Sigma.
inline Matrix sensing_D(const SensingFamily& family, const Matrix& Sigma,
                        const Vector& u, const Matrix& R_o) {
  require(nearly_symmetric(R_o), "R_o must be symmetric");
  Eigen::LLT<Matrix> llt(R_o);
  require(llt.info() == Eigen::Success, "R_o must be SPD");
  const Matrix C = sensing_matrix(family, u);
  require(C.cols() == Sigma.rows() && C.rows() == R_o.rows(),
          "sensing matrix dimensions inconsistent with Sigma/R_o");
  const Matrix CS = C * Sigma;
  return symmetrized(CS.transpose() * llt.solve(CS));
}

// E_{x ~ N(mu, Sigma)}[q_bar(x)] = 1/2 mu'S mu + s'mu + c + 1/2 tr(S Sigma).
inline double gaussian_expect(const QuadraticCost& cost, const Vector& mu,
                              const Matrix& Sigma) {
  const auto n = mu.size();
  require(cost.S.rows() == n && cost.S.cols() == n && cost.s.size() == n,
          "cost dimensions do not match mu");
  require(Sigma.rows() == n && Sigma.cols() == n, "Sigma dimensions do not match mu");
  require(nearly_symmetric(Sigma), "Sigma must be symmetric");
  return 0.5 * mu.dot(cost.S * mu) + cost.s.dot(mu) + cost.c +
         0.5 * (cost.S * Sigma).trace();
}

struct ModelSpec {
  int n = 0, m = 0, p = 0, ell_a = 0, ell_s = 0;
  std::vector<Matrix> A;  // piecewise-constant drift: one entry, or one per grid step
  Matrix B, H;
  Matrix Q;  // = H H'
  Matrix sigma_o;
  Matrix R_o;  // = sigma_o sigma_o'
  Matrix R_a;
  double lambda = 1.0;
  SensingFamily sensing = ScalarSensing{};
  SensingCost rho;
  QuadraticCost q, phi;
  double T = 1.0;
  double dt = 0.01;

  // Optional non-quadratic costs (sampling path only; oracles reject them).
  std::function<double(const Vector&, const Matrix&)> q_custom, phi_custom;

  int steps() const { return int(std::lround(T / dt)); }

  // Drift piece containing time t. Callers pass a step midpoint so grid
  // boundaries are unambiguous.
  const Matrix& A_at(double t) const {
    if (A.size() == 1) return A[0];
    const double piece_dt = T / double(A.size());
    auto idx = std::clamp<long>(long(std::floor(t / piece_dt)), 0, long(A.size()) - 1);
    return A[size_t(idx)];
  }

  double stage_cost(const Vector& mu, const Matrix& Sigma) const {
    return q_custom ? q_custom(mu, Sigma) : gaussian_expect(q, mu, Sigma);
  }
  double terminal_cost(const Vector& mu, const Matrix& Sigma) const {
    return phi_custom ? phi_custom(mu, Sigma) : gaussian_expect(phi, mu, Sigma);
  }

  // Fill derived matrices (Q, R_o) from their factors, then validate.
  void finalize() {
    Q = H * H.transpose();
    R_o = sigma_o * sigma_o.transpose();
    validate();
  }

  void validate() const {
    require(n > 0 && m > 0 && p > 0 && ell_a > 0 && ell_s > 0,
            "dimensions must be positive");
    require(lambda > 0.0, "lambda must be positive");
    require(T > 0.0 && dt > 0.0, "T and dt must be positive");
    const double k = T / dt;
    require(std::abs(k - std::lround(k)) <= 1e-9 * std::max(1.0, k),
            "T/dt must be an integer");
    require(!A.empty() && (A.size() == 1 || A.size() == size_t(steps())),
            "A must hold one matrix or one per grid step");
    for (const auto& Ak : A)
      require(Ak.rows() == n && Ak.cols() == n, "A pieces must be n x n");
    require(B.rows() == n && B.cols() == ell_a, "B must be n x ell_a");
    require(H.rows() == n && H.cols() == m, "H must be n x m");
    require(sigma_o.rows() == p && sigma_o.cols() == p, "sigma_o must be p x p");
    require(R_a.rows() == ell_a && R_a.cols() == ell_a, "R_a must be ell_a x ell_a");
    require(is_spd(R_a), "R_a must be symmetric positive definite");
    require(R_o.rows() == p && R_o.cols() == p, "R_o must be p x p");
    require(is_spd(R_o), "R_o must be symmetric positive definite");
    require(Q.rows() == n && Q.cols() == n, "Q must be n x n");
    require(nearly_symmetric(Q) && min_eigenvalue(Q) > -1e-12 * std::max(1.0, Q.norm()),
            "Q must be symmetric positive semidefinite");
    require((Q - H * H.transpose()).norm() <= 1e-12 * std::max(1.0, Q.norm()),
            "Q must equal H H'");
    require(rho.R_s.rows() == ell_s && rho.R_s.cols() == ell_s,
            "R_s must be ell_s x ell_s");
    require(nearly_symmetric(rho.R_s) &&
                min_eigenvalue(rho.R_s) > -1e-12 * std::max(1.0, rho.R_s.norm()),
            "R_s must be symmetric positive semidefinite");
    require(sensing_dim(sensing) == ell_s, "sensing family dimension != ell_s");
    if (std::holds_alternative<ScalarSensing>(sensing)) {
      require(n == 1 && p == 1 && ell_s == 1, "scalar sensing requires n = p = 1");
    } else if (const auto* scaled = std::get_if<ScaledSensing>(&sensing)) {
      require(scaled->C0.rows() == p && scaled->C0.cols() == n, "C0 must be p x n");
      require(scaled->C0.norm() > 0.0, "C0 must be nonzero");
    } else {
      const auto& affine = std::get<AffineSensing>(sensing);
      require(!affine.C.empty(), "affine sensing needs at least one matrix");
      for (const auto& Ck : affine.C)
        require(Ck.rows() == p && Ck.cols() == n, "C_k must be p x n");
    }
    auto check_cost = [&](const QuadraticCost& cost, const char* name) {
      require(cost.S.rows() == n && cost.S.cols() == n && cost.s.size() == n,
              std::string(name) + " cost dimensions must match n");
      require(nearly_symmetric(cost.S), std::string(name) + " cost S must be symmetric");
    };
    check_cost(q, "stage");
    check_cost(phi, "terminal");
  }
};

}  // namespace pics
