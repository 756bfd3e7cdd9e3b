#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pics/model.hpp"
#include "pics/rng.hpp"
#include "test_helpers.hpp"

using namespace pics;
using namespace pics_test;

TEST_CASE("gaussian_expect closed form") {
  // constant integrand
  QuadraticCost c0{Matrix::Zero(2, 2), Vector::Zero(2), 3.0};
  Vector mu = Vector::Zero(2);
  Matrix Sigma = Matrix::Identity(2, 2);
  CHECK(gaussian_expect(c0, mu, Sigma) == 3.0);

  // E[x^2] = Sigma for zero mean (q_bar = x^2 means S = 2)
  QuadraticCost sq{m1(2.0), v1(0.0), 0.0};
  CHECK(gaussian_expect(sq, v1(0.0), m1(2.0)) == Catch::Approx(2.0).margin(1e-14));

  // frozen from a 1e7-sample Monte Carlo run (agrees within 3 stderr)
  QuadraticCost mixed{m1(2.0), v1(1.0), 0.0};
  CHECK(gaussian_expect(mixed, v1(1.5), m1(0.5)) == Catch::Approx(4.25).margin(1e-12));
}

TEST_CASE("gaussian_expect matches brute-force Monte Carlo on random quadratics") {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 1 + int(gen() % 4);
    Matrix S = random_spd(n, gen, -0.5, 1.5);  // symmetric, possibly indefinite
    Vector s(n);
    for (int i = 0; i < n; ++i) s[i] = unif(gen);
    const double c = unif(gen);
    Vector mu(n);
    for (int i = 0; i < n; ++i) mu[i] = unif(gen);
    Matrix Sigma = random_spd(n, gen);
    const QuadraticCost cost{S, s, c};

    const Matrix L = Sigma.llt().matrixL();
    NormalStream rng(99 + uint64_t(trial), 0);
    const int N = 1000000;
    double sum = 0.0, sum2 = 0.0;
    Vector z(n);
    for (int i = 0; i < N; ++i) {
      rng.fill(z);
      const Vector x = mu + L * z;
      const double v = 0.5 * x.dot(S * x) + s.dot(x) + c;
      sum += v;
      sum2 += v * v;
    }
    const double mc_mean = sum / N;
    const double mc_se = std::sqrt((sum2 / N - mc_mean * mc_mean) / N);
    const double exact = gaussian_expect(cost, mu, Sigma);
    CHECK(std::abs(exact - mc_mean) <= 4.0 * mc_se);
  }
}

TEST_CASE("gaussian_expect is invariant under symmetrization of S") {
  Matrix S(2, 2);
  S << 1.0, 0.8, -0.4, 2.0;  // asymmetric
  Vector s(2);
  s << 0.3, -0.7;
  QuadraticCost raw{S, s, 0.5};
  QuadraticCost sym{symmetrized(S), s, 0.5};
  // validate() would reject the asymmetric S; the expectation itself must not care
  Vector mu(2);
  mu << 1.0, -2.0;
  Matrix Sigma = Matrix::Identity(2, 2) * 0.7;
  Sigma(0, 1) = Sigma(1, 0) = 0.2;
  CHECK(gaussian_expect(raw, mu, Sigma) ==
        Catch::Approx(gaussian_expect(sym, mu, Sigma)).epsilon(1e-14));
}

TEST_CASE("sensing_matrix per family") {
  CHECK(sensing_matrix(ScalarSensing{}, v1(0.7))(0, 0) == 0.7);

  Matrix C0(1, 2);
  C0 << 1.0, 0.0;
  Matrix C = sensing_matrix(ScaledSensing{C0}, v1(2.0));
  CHECK(C(0, 0) == 2.0);
  CHECK(C(0, 1) == 0.0);

  Matrix C1(1, 2), C2(1, 2);
  C1 << 1.0, 0.0;
  C2 << 0.0, 1.0;
  Vector u(2);
  u << 1.0, -1.0;
  Matrix Ca = sensing_matrix(AffineSensing{{C1, C2}}, u);
  CHECK(Ca(0, 0) == 1.0);
  CHECK(Ca(0, 1) == -1.0);

  CHECK_THROWS_AS(sensing_matrix(ScalarSensing{}, u), std::invalid_argument);
}

TEST_CASE("sensing_D examples") {
  // scalar: D = Sigma^2 u^2 / R_o
  CHECK(sensing_D(ScalarSensing{}, m1(1.0), v1(2.0), m1(1.0))(0, 0) ==
        Catch::Approx(4.0).margin(1e-15));
  CHECK(sensing_D(ScalarSensing{}, m1(3.0), v1(0.0), m1(2.0))(0, 0) == 0.0);

  // hand-computed: C0 = [1 0], R_o = 1, Sigma = I, u = 3 -> diag(9, 0)
  Matrix C0(1, 2);
  C0 << 1.0, 0.0;
  Matrix D = sensing_D(ScaledSensing{C0}, Matrix::Identity(2, 2), v1(3.0), m1(1.0));
  CHECK(D(0, 0) == Catch::Approx(9.0).margin(1e-12));
  CHECK(D(0, 1) == Catch::Approx(0.0).margin(1e-12));
  CHECK(D(1, 0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(D(1, 1) == Catch::Approx(0.0).margin(1e-12));

  Matrix bad = -Matrix::Identity(1, 1);
  CHECK_THROWS_AS(sensing_D(ScalarSensing{}, m1(1.0), v1(1.0), bad),
                  std::invalid_argument);
}

TEST_CASE("sensing_D is symmetric PSD and quadratic in u for the scaled family") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + int(gen() % 3);
    const int p = 1 + int(gen() % 2);
    Matrix C0(p, n);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < n; ++j) C0(i, j) = unif(gen);
    if (C0.norm() == 0.0) C0(0, 0) = 1.0;
    Matrix Sigma = random_spd(n, gen);
    Matrix R_o = random_spd(p, gen);
    const double u = unif(gen), alpha = unif(gen);
    const Matrix D1 = sensing_D(ScaledSensing{C0}, Sigma, v1(u), R_o);
    CHECK(nearly_symmetric(D1));
    CHECK(min_eigenvalue(D1) >= -1e-10 * std::max(1.0, D1.norm()));
    CHECK(sensing_D(ScaledSensing{C0}, Sigma, v1(0.0), R_o).norm() == 0.0);
    const Matrix D2 = sensing_D(ScaledSensing{C0}, Sigma, v1(alpha * u), R_o);
    CHECK((D2 - alpha * alpha * D1).norm() <= 1e-10 * std::max(1.0, D1.norm()));
  }
}

TEST_CASE("model validation catches inconsistent data") {
  ModelSpec good = scalar_model(1.0);
  CHECK_NOTHROW(good.validate());

  ModelSpec bad_q = good;
  bad_q.Q(0, 0) = 2.0;  // no longer H H'
  CHECK_THROWS_AS(bad_q.validate(), std::invalid_argument);

  ModelSpec bad_dt = good;
  bad_dt.dt = 0.3;  // T/dt not integral
  CHECK_THROWS_AS(bad_dt.validate(), std::invalid_argument);

  ModelSpec bad_ra = good;
  bad_ra.R_a = m1(-1.0);
  CHECK_THROWS_AS(bad_ra.validate(), std::invalid_argument);

  ModelSpec bad_sensing = good;
  bad_sensing.n = 2;  // scalar sensing demands n = 1
  bad_sensing.A = {Matrix::Zero(2, 2)};
  bad_sensing.B = Matrix::Ones(2, 1);
  bad_sensing.H = Matrix::Identity(2, 2) * 0;
  CHECK_THROWS_AS(bad_sensing.validate(), std::invalid_argument);
}

TEST_CASE("piecewise-constant drift lookup") {
  ModelSpec model = scalar_model(1.0, 1.0, 1.0, 1.0, 0.25);
  model.A = {m1(1.0), m1(2.0), m1(3.0), m1(4.0)};
  model.validate();
  CHECK(model.A_at(0.1)(0, 0) == 1.0);
  CHECK(model.A_at(0.26)(0, 0) == 2.0);
  CHECK(model.A_at(0.875)(0, 0) == 4.0);
  CHECK(model.A_at(2.0)(0, 0) == 4.0);  // clamped
}
