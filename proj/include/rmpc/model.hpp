#pragma once

#include "rmpc/rqp.hpp"

#include <vector>

namespace rmpc {

/// One element of a stage's finite uncertainty set.
struct Realization {
  MatrixXd A;
  MatrixXd B;
  VectorXd v;
};

/// Linear dynamics x_{k+1} = A(p_k) x_k + B(p_k) u_k + v_k(p_k) with finite
/// realization sets P_k, a quadratic cost with stage weight Q on (x, u) and
/// terminal weight S, and stage constraints C x_k + D u_k <= e_k.
struct UncertainSystem {
  int nx = 0;
  int nu = 0;
  int horizon = 0;         ///< N
  int robust_horizon = 0;  ///< N_r; stages k > N_r have a single realization
  /// realizations[k] lists the M_k elements of P_k, k = 0..N-1.
  std::vector<std::vector<Realization>> realizations;
  MatrixXd Q;
  MatrixXd S;
  MatrixXd C;
  MatrixXd D;
  std::vector<VectorXd> e;  ///< N right-hand sides of length q
  VectorXd x0;

  int num_constraints() const { return static_cast<int>(C.rows()); }
  int branching(int k) const { return static_cast<int>(realizations[k].size()); }
};

/// Throws InputError naming the first violated field.
void validate(const UncertainSystem& sys);

struct ScenarioTree {
  int num_scenarios = 0;
  int horizon = 0;
  int robust_horizon = 0;
  /// paths[j][k] is the realization index at stage k = 0..N_r; lexicographic.
  std::vector<std::vector<int>> paths;
  /// stage_data[j][k] for k = 0..N-1.
  std::vector<std::vector<Realization>> stage_data;
  /// shared[j] = number of leading controls scenarios j and j+1 have in common.
  std::vector<int> shared;
};

ScenarioTree enumerate_scenarios(const UncertainSystem& sys);

/// Controls shared by scenarios j and j+1 (zero-based, j < M-1). Throws
/// std::out_of_range otherwise.
int shared_control_count(const ScenarioTree& tree, int j);

/// Block-bidiagonal coupling C_bar u = 0 on the stacked controls, and its
/// padded version C_tilde acting on the full stacked z.
struct NonAnticipativity {
  struct Block {
    int scenario;
    int stage;
    int first_row;
  };
  int rows = 0;
  SparseMatrix u_matrix;
  SparseMatrix padded;
  /// One entry per (pair, shared stage), in row order.
  std::vector<Block> blocks;
};

NonAnticipativity build_nonanticipativity(const ScenarioTree& tree, int nx, int nu);

/// Maps the scenario problem onto the epigraph program: Q_k^j = Q, Q_N^j = S,
/// block-diagonal dynamics rows followed by the padded non-anticipativity
/// rows, and N stage blocks [C D] per scenario.
Rqp assemble_rqp(const ScenarioTree& tree, const UncertainSystem& sys);

/// Stacked controls (u^1, ..., u^M) extracted from z.
VectorXd stacked_controls(const StageLayout& layout, const VectorXd& z);

}  // namespace rmpc
