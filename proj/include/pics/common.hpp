#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Numerical knobs shared across modules.
struct Tolerances {
  double tol_match = 1e-8;  // relative matching residual
  double eps_pd = 1e-10;    // positive-definiteness floor (min eigenvalue)
};

// Raised when the matching set at (t, Sigma) is empty.
class MatchingInfeasible : public std::runtime_error {
 public:
  MatchingInfeasible(double t_, Matrix Sigma_, double best_residual_)
      : std::runtime_error(describe(t_, best_residual_)),
        t(t_),
        Sigma(std::move(Sigma_)),
        best_residual(best_residual_) {}

  double t;
  Matrix Sigma;
  double best_residual;

 private:
  static std::string describe(double t, double r) {
    std::ostringstream os;
    os << "matching set empty at t=" << t << " (best residual " << r << ")";
    return os.str();
  }
};

// Raised when exponential weights collapse below the representable floor.
class DegenerateWeights : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a solve is requested past the feasibility horizon.
class InfeasibleHorizon : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by oracles when a model carries non-quadratic (callback) costs.
class UnsupportedCost : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a quantity that must stay positive is not.
class PositivityViolation : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline Matrix symmetrized(const Matrix& M) { return 0.5 * (M + M.transpose()); }

inline bool nearly_symmetric(const Matrix& M, double rel = 1e-10) {
  if (M.rows() != M.cols()) return false;
  return (M - M.transpose()).norm() <= rel * std::max(1.0, M.norm());
}

inline double min_eigenvalue(const Matrix& M) {
  if (M.rows() == 1) return M(0, 0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_spd(const Matrix& M, double eps = 0.0) {
  return nearly_symmetric(M) && min_eigenvalue(M) > eps;
}

// Run fn(begin, end) over a contiguous partition of [0, n). Workers write to
// disjoint preallocated slots, so results do not depend on the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int, int)>& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    fn(0, n);
    return;
  }
  threads = std::min(threads, n);
  const int chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int w = 0; w < threads; ++w) {
    const int b = w * chunk;
    const int e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace pics
