#pragma once

#include "rmpc/rqp.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rmpc {

enum class Backend { Dense, Chordal };
enum class SolveStatus { Optimal, MaxIter, NumericalBreakdown };

const char* to_string(Backend b);
const char* to_string(SolveStatus s);
/// Accepts "dense" and "chordal"; throws std::invalid_argument otherwise.
Backend parse_backend(const std::string& name);

/// Scaled residual summary at one iterate.
struct IterationRecord {
  int iteration = 0;
  double tau = 0.0;
  double primal = 0.0;  ///< epigraph, equality and inequality rows
  double dual = 0.0;    ///< tau, t and z stationarity
  double comp = 0.0;    ///< complementarity products
  double gap = 0.0;     ///< average complementarity
  double sigma = 0.0;
  double alpha = 0.0;   ///< step taken from this iterate (0 if none)
  bool regularized = false;
};

struct IpmOptions {
  double tol_feas = 1e-8;
  double tol_comp = 1e-8;
  int max_iter = 100;
  double gamma_ftb = 0.995;
  /// Mehrotra predictor-corrector; otherwise fixed centering sigma = 0.1.
  bool use_corrector = true;
  Backend backend = Backend::Dense;
  /// Chordal backend threads; 0 picks RMPC_THREADS or the hardware count.
  int workers = 0;
  /// Called before the direction is computed at every iteration.
  std::function<void(int iteration, const Iterate&)> observer;
};

struct Solution {
  SolveStatus status = SolveStatus::NumericalBreakdown;
  Iterate iterate;
  double objective = 0.0;
  VectorXd per_scenario_costs;
  int iterations = 0;
  std::vector<IterationRecord> history;
  double wall_time = 0.0;  ///< seconds
  std::string message;
};

/// Scale (1 + |b|_inf + |d|_inf) applied to all convergence metrics.
double residual_scale(const Rqp& rqp);

/// Fills primal, dual, comp and gap of a record.
IterationRecord measure(const Rqp& rqp, const Iterate& it, const Residuals& res);

/// Standard infeasible start; see the implementation for the exact choice.
Iterate initial_iterate(const Rqp& rqp);

/// Joint fraction-to-boundary step for (mu, nu, s, w).
double step_length(const Iterate& it, const StepDirection& dir, double gamma);

/// it + alpha * dir.
Iterate advance(const Iterate& it, const StepDirection& dir, double alpha);

/// Search direction at `it` for the given centering, computed with the
/// requested backend (fresh factorization).
StepDirection compute_direction(const Rqp& rqp, const Iterate& it, double centering,
                                Backend backend, int workers = 1);

Solution ipm_solve(const Rqp& rqp, const IpmOptions& options = {});

}  // namespace rmpc
