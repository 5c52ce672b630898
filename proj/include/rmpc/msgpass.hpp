#pragma once

#include "rmpc/chordal.hpp"

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <utility>
#include <vector>

namespace rmpc {

/// Local quadratic with equality rows over a clique's scalar variables:
///   min 1/2 y^T H y - g^T y + constant   s.t.  E y = f.
struct LocalProblem {
  std::vector<int> vars;  ///< global scalar indices, local order
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double constant = 0.0;
  Eigen::MatrixXd E;
  Eigen::VectorXd f;
};

/// Value function of a clique's subtree as a function of its separator,
/// together with the equality rows that could not be resolved below.
struct Message {
  std::vector<int> vars;  ///< separator scalar indices
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double constant = 0.0;
  Eigen::MatrixXd E;  ///< transferred rows on the separator
  Eigen::VectorXd f;
};

/// Affine recovery map y_p = gain * y_s + offset, plus what is needed to
/// reconstruct the multipliers of the clique's local rows.
struct ParametricRecord {
  std::vector<int> private_vars;
  std::vector<int> separator_vars;
  Eigen::MatrixXd gain;
  Eigen::VectorXd offset;
  /// Local row multipliers = row_transform^T * [eliminated; transferred].
  Eigen::MatrixXd row_transform;
  int eliminated_rows = 0;
  /// Eliminated-row multipliers = multiplier_map * (g_p - H_pp y_p - H_ps y_s).
  Eigen::MatrixXd multiplier_map;
  Eigen::MatrixXd H_pp;
  Eigen::MatrixXd H_ps;
  Eigen::VectorXd g_p;
};

/// Minimizes `lp` over the private positions parametrically in the separator
/// positions (together they must partition lp.vars). Rows whose private part
/// is dependent are projected onto the separator and returned in the message.
/// Throws NumericalBreakdown when the reduced private Hessian is not positive
/// definite after adding `regularization`.
std::pair<Message, ParametricRecord> eliminate_clique(const LocalProblem& lp,
                                                      const std::vector<int>& private_pos,
                                                      const std::vector<int>& separator_pos,
                                                      double regularization = 0.0);

/// Applies a record: returns (y_p, local-row multipliers) for given separator
/// values and multipliers of the transferred rows.
std::pair<Eigen::VectorXd, Eigen::VectorXd> apply_record(const ParametricRecord& rec,
                                                         const Eigen::VectorXd& y_s,
                                                         const Eigen::VectorXd& transferred_mult);

struct QpSolution {
  Eigen::VectorXd y;
  Eigen::VectorXd lambda;  ///< one multiplier per global equality row
  double value = 0.0;      ///< optimal objective
};

/// Solves the equality-constrained QP defined by a set of terms by message
/// passing over a clique tree whose assignment covers every term.
///
/// The work is split in a numeric phase (factorize: depends on the term
/// matrices only) and a right-hand-side phase (solve), so one factorization
/// serves several right-hand sides. Cliques of equal height are processed
/// concurrently; children are always combined in ascending index order, so the
/// result does not depend on the number of workers.
class CliqueTreeSolver {
 public:
  /// `offsets[v]` is the first global scalar index of supernode v.
  ~CliqueTreeSolver();
  CliqueTreeSolver(CliqueTreeSolver&&) noexcept;
  CliqueTreeSolver& operator=(CliqueTreeSolver&&) noexcept;

  CliqueTreeSolver(const CliqueTree& tree, const std::vector<Supernode>& nodes,
                   const std::vector<int>& offsets, const std::vector<Term>& terms,
                   int num_rows, int workers = 1);

  int num_vars() const { return num_vars_; }
  int num_rows() const { return num_rows_; }

  void factorize(const std::vector<Term>& terms, double regularization = 0.0);

  struct Upward {
    std::vector<Eigen::VectorXd> offsets;    ///< per clique
    std::vector<Eigen::VectorXd> msg_g;      ///< per clique
    std::vector<double> msg_constant;        ///< per clique
    std::vector<Eigen::VectorXd> msg_f;      ///< transferred right-hand sides
    std::vector<Eigen::VectorXd> local_g;    ///< assembled linear term
    double value = 0.0;
  };

  /// Leaves to root: condenses linear terms and row right-hand sides.
  Upward upward_pass(const Eigen::VectorXd& g, const Eigen::VectorXd& f) const;
  /// Root to leaves: recovers all variables and row multipliers.
  QpSolution downward_pass(const Upward& up) const;
  QpSolution solve(const Eigen::VectorXd& g, const Eigen::VectorXd& f) const {
    return downward_pass(upward_pass(g, f));
  }

  /// Dimensions of clique c as (private, separator, local rows, eliminated rows).
  std::array<int, 4> clique_dims(int c) const;

 private:
  struct Clique;
  struct Factor;

  void factor_clique(int c, const std::vector<Term>& terms, double regularization);

  CliqueTree tree_;
  int num_vars_ = 0;
  int num_rows_ = 0;
  int workers_ = 1;
  std::vector<Clique> cliques_;
  std::vector<Factor> factors_;
  std::vector<std::vector<int>> by_height_;
  std::vector<std::vector<int>> by_depth_;
  bool factorized_ = false;
};

/// Convenience: accumulates each term's linear part and row right-hand sides
/// and solves once.
QpSolution solve_terms(const CliqueTree& tree, const std::vector<Supernode>& nodes,
                       const std::vector<int>& offsets, const std::vector<Term>& terms,
                       int num_rows, int workers = 1);

/// Scalar offset of every supernode when variables are laid out in supernode
/// order.
std::vector<int> supernode_offsets(const std::vector<Supernode>& nodes);

}  // namespace rmpc
