#pragma once

#include "rmpc/ipm.hpp"
#include "rmpc/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rmpc {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitMaxIter = 2,
  kExitBreakdown = 3,
  kExitInputError = 4,
};

struct SimulationStep {
  int step = 0;
  VectorXd x;  ///< state before the control is applied
  VectorXd u;
  int realization = -1;  ///< sampled stage-0 realization index
  double tau = 0.0;
  int iterations = 0;
};

struct SimulationLog {
  std::vector<SimulationStep> steps;
  VectorXd final_state;
  bool complete = false;
  std::string message;
};

/// Closed loop with fixed problem data: solve, apply the first control,
/// sample the stage-0 realization uniformly, advance the true state and
/// re-solve from it. Stops early (complete = false) if a solve is not optimal.
SimulationLog simulate(const UncertainSystem& sys, int steps, std::uint64_t seed,
                       const IpmOptions& options = {});

/// Entry point of the `rmpc` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rmpc
