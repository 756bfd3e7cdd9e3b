#pragma once

// Shared builders for the configurations the suites exercise repeatedly.

#include <random>

#include "pics/model.hpp"

namespace pics_test {

using namespace pics;

inline Matrix m1(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

inline Vector v1(double v) {
  Vector x(1);
  x[0] = v;
  return x;
}

// The scalar benchmark: dx = u_a dt + dw, dy = u_s x dt + sigma_o dnu.
inline ModelSpec scalar_model(double lambda, double R_a = 1.0, double R_o = 1.0,
                              double T = 1.0, double dt = 0.01) {
  ModelSpec model;
  model.n = model.m = model.p = model.ell_a = model.ell_s = 1;
  model.A = {m1(0.0)};
  model.B = m1(1.0);
  model.H = m1(1.0);
  model.sigma_o = m1(std::sqrt(R_o));
  model.R_a = m1(R_a);
  model.lambda = lambda;
  model.sensing = ScalarSensing{};
  model.rho.R_s = m1(0.0);
  model.q = {m1(0.0), v1(0.0), 0.0};
  model.phi = {m1(0.0), v1(0.0), 0.0};
  model.T = T;
  model.dt = dt;
  model.finalize();
  return model;
}

// Scalar model with quadratic running and terminal costs q_bar = phi_bar = x^2.
inline ModelSpec scalar_lqg_model(double T = 1.0, double dt = 0.005) {
  ModelSpec model = scalar_model(1.0, 1.0, 1.0, T, dt);
  model.q = {m1(2.0), v1(0.0), 0.0};
  model.phi = {m1(2.0), v1(0.0), 0.0};
  model.validate();
  return model;
}

inline Matrix random_spd(int n, std::mt19937_64& gen, double eig_min = 0.5,
                         double eig_max = 2.0) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix X(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) X(i, j) = unif(gen);
  Eigen::HouseholderQR<Matrix> qr(X);
  Matrix Qm = qr.householderQ();
  Vector d(n);
  std::uniform_real_distribution<double> eig(eig_min, eig_max);
  for (int i = 0; i < n; ++i) d[i] = eig(gen);
  return pics::symmetrized(Qm * d.asDiagonal() * Qm.transpose());
}

}  // namespace pics_test
