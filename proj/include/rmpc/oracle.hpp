#pragma once

#include "rmpc/rqp.hpp"

#include <Eigen/LU>

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace rmpc {

struct Solution;

/// LU factorization of the reduced KKT matrix [H A^T; A 0] with A = A_eq.
/// Requires the dense H of `red`.
class DenseKktFactor {
 public:
  DenseKktFactor(const Rqp& rqp, const ReducedKkt& red);
  /// Returns (d_z, d_lambda). Throws NumericalBreakdown on a singular matrix.
  std::pair<VectorXd, VectorXd> solve(const VectorXd& rhs_z, const VectorXd& rhs_lambda) const;
  /// Reciprocal condition estimate of the equilibrated matrix.
  double rcond() const { return rcond_; }
  const MatrixXd& matrix() const { return K_; }

 private:
  int nz_ = 0;
  int nl_ = 0;
  MatrixXd K_;
  Eigen::PartialPivLU<MatrixXd> lu_;  ///< of the equilibrated matrix
  VectorXd scale_;
  double rcond_ = 0.0;
};

/// Dense reference solve of the reduced system for the right-hand sides
/// stored in `red`.
std::pair<VectorXd, VectorXd> dense_kkt_solve(const Rqp& rqp, const ReducedKkt& red);

/// Solves [H A^T; A 0] (d_z, d_lambda) = (rhs_z, rhs_lambda) directly.
std::pair<VectorXd, VectorXd> dense_kkt_solve(const MatrixXd& H, const MatrixXd& A,
                                              const VectorXd& rhs_z, const VectorXd& rhs_lambda);

/// Reference optimum from explicit enumeration of active sets.
struct BruteForceResult {
  bool feasible = false;
  double tau = 0.0;
  VectorXd t;
  VectorXd z;
  /// Full primal-dual point (multipliers and slacks) for verification.
  Iterate point;
  std::vector<int> active_rows;  ///< active inequality rows
  std::vector<int> active_scenarios;
  long candidates = 0;
};

/// Largest program accepted: epigraph rows plus inequality rows.
constexpr int kBruteForceRowCap = 14;

/// Enumerates every subset of inequality rows as active set together with
/// every set of scenarios whose cost attains tau. Scenario weights for a
/// tied pair are found by bisection on the cost difference, which is
/// monotone in the weight. Throws std::invalid_argument above the row cap or
/// for more than two scenarios.
BruteForceResult active_set_bruteforce(const Rqp& rqp);

struct VerificationTolerances {
  double kkt = 1e-7;
  double tau_gap = 1e-6;
  double nonanticipativity = 1e-8;
};

struct VerificationReport {
  /// Scaled infinity norms of: tau stationarity, t stationarity, z
  /// stationarity, epigraph rows, equalities, inequalities, epigraph
  /// complementarity, inequality complementarity.
  std::array<double, 8> kkt_block_norms{};
  double sign_violation = 0.0;  ///< most negative entry of (mu, nu, s, w), as a positive number
  double tau_gap = 0.0;         ///< tau - max_j J_j(z)
  double nonanticipativity_norm = 0.0;
  bool pass = false;

  static const std::array<const char*, 8>& block_names();
};

VerificationReport verify_solution(const Rqp& rqp, const Iterate& point,
                                   const VerificationTolerances& tol = {});
VerificationReport verify_solution(const Rqp& rqp, const Solution& sol,
                                   const VerificationTolerances& tol = {});

}  // namespace rmpc
