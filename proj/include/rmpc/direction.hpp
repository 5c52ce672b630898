#pragma once

#include "rmpc/chordal.hpp"
#include "rmpc/msgpass.hpp"
#include "rmpc/rqp.hpp"

#include <optional>
#include <vector>

namespace rmpc {

/// Decomposition of the search-direction QP over per-(scenario, stage)
/// supernodes.
///
/// The chordal backend solves the reduced system with the epigraph
/// directions kept as unknowns,
///
///   [ P  R^T  0  ] [d_eta]   [r_eta_hat ]
///   [ R  Q_s  A^T] [d_z  ] = [r_tilde   ]
///   [ 0  A    0  ] [d_l  ]   [rhs_lambda],
///
/// whose Schur complement in d_eta is the (z, lambda) system of ReducedKkt.
/// Eliminating d_eta first densifies the z block across scenarios, while the
/// form above keeps the stage-wise structure: every epigraph row touches one
/// stage block and two neighbouring epigraph variables.
///
/// Variables y = (eta, z) use the ReducedKkt ordering; equality rows are the
/// rows of A_eq.
struct DirectionStructure {
  StageLayout layout;
  bool with_epigraph = true;
  std::vector<Supernode> nodes;
  std::vector<int> offsets;  ///< first y index of each supernode
  std::vector<Term> terms;
  SparsityGraph graph;
  Embedding embedding;
  CliqueTree tree;
  int num_rows = 0;

  std::vector<int> x_node;  ///< [j * (N + 1) + k]
  std::vector<int> u_node;  ///< [j * N + k]
  std::vector<int> t_node;  ///< [layout.t_index(j, k)], empty without epigraph
  int tau_node = -1;

  int coupling_term = -1;  ///< stage-0 term shared by all scenarios
  /// Term carrying stage k of scenario j: stage_term[j * (N + 1) + k].
  std::vector<int> stage_term;

  int x(int j, int k) const { return x_node[j * (layout.horizon + 1) + k]; }
  int u(int j, int k) const { return u_node[j * layout.horizon + k]; }
};

/// Builds the supernodes, term scopes, equality blocks, sparsity graph,
/// embedding and clique tree. Without the epigraph variables only the
/// state/input structure is produced (for inspection; not solvable).
/// Throws InputError if A_eq or G_ineq has entries outside the stage pattern.
DirectionStructure build_direction_structure(const Rqp& rqp, bool with_epigraph = true);

/// Writes the quadratic blocks of the current iterate into the terms.
void refresh_direction_terms(const Rqp& rqp, const ReducedKkt& red, DirectionStructure& ds);

/// Linear term (r_eta_hat, r_tilde) of the direction QP in y ordering.
VectorXd direction_linear_term(const ReducedKkt& red);

struct ChordalDirection {
  VectorXd d_eta;
  VectorXd d_z;
  VectorXd d_lambda;
};

/// Message-passing backend. One factorization per IPM iteration serves the
/// predictor and corrector right-hand sides.
class ChordalKktSolver {
 public:
  explicit ChordalKktSolver(const Rqp& rqp, int workers = 1);

  /// Factorizes for the iterate stored in `red`. On breakdown retries once
  /// with a relative diagonal regularization of 1e-10, then rethrows.
  void factorize(const Rqp& rqp, const ReducedKkt& red);
  /// Message passing, followed by GMRES on the exact augmented system
  /// (preconditioned by the factor) when the direct residual is not at
  /// rounding level.
  ChordalDirection solve(const ReducedKkt& red) const;

  const DirectionStructure& structure() const { return ds_; }
  bool regularized() const { return regularized_; }
  int workers() const { return workers_; }

 private:
  void assemble_exact_system();

  DirectionStructure ds_;
  int workers_;
  std::optional<CliqueTreeSolver> solver_;
  bool regularized_ = false;
  SparseMatrix kkt_;  ///< exact augmented system [H E^T; E 0]
};

constexpr double kRetryRegularization = 1e-10;
constexpr double kDirectResidualTolerance = 1e-14;
constexpr double kKrylovTolerance = 1e-14;
constexpr int kKrylovIterations = 40;
constexpr int kKrylovRestarts = 4;

}  // namespace rmpc
