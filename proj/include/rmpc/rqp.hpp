#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>
#include <vector>

namespace rmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Index arithmetic for the stacked variables of a robust QP.
///
/// z = (z^1, ..., z^M), z^j = (z_0^j, ..., z_N^j) with z_k^j = (x_k^j, u_k^j)
/// for k < N and z_N^j = x_N^j. The epigraph variables are eta = (tau, t)
/// with t = (t^1, ..., t^M), t^j = (t_1^j, ..., t_N^j). Scenario and stage
/// indices are zero-based throughout.
struct StageLayout {
  int scenarios = 0;
  int horizon = 0;
  int nx = 0;
  int nu = 0;

  int stage_dim(int k) const { return k < horizon ? nx + nu : nx; }
  int scenario_dim() const { return horizon * (nx + nu) + nx; }
  int z_dim() const { return scenarios * scenario_dim(); }
  int z_offset(int j, int k) const { return j * scenario_dim() + k * (nx + nu); }
  int x_offset(int j, int k) const { return z_offset(j, k); }
  int u_offset(int j, int k) const { return z_offset(j, k) + nx; }

  /// Number of epigraph rows, one per (scenario, stage 0..N).
  int epi_rows() const { return scenarios * (horizon + 1); }
  int epi_index(int j, int k) const { return j * (horizon + 1) + k; }
  int t_dim() const { return scenarios * horizon; }
  /// Position of t_k^j inside t, for k in 1..N.
  int t_index(int j, int k) const { return j * horizon + (k - 1); }
  int eta_dim() const { return 1 + t_dim(); }

  bool operator==(const StageLayout&) const = default;
};

/// A contiguous group of equality rows with a known structural origin.
struct EqualityGroup {
  enum class Kind { Initial, Dynamics, NonAnticipativity };
  Kind kind = Kind::Initial;
  int scenario = 0;
  /// Second scenario of a non-anticipativity pair; unused otherwise.
  int partner = -1;
  /// Dynamics: rows link stage k to k+1. Non-anticipativity: control stage.
  int stage = 0;
  int first_row = 0;
  int rows = 0;
};

/// Epigraph form of the min-max program:
///
///   min tau  s.t.  1/2 z_0^T Q_0 z_0 + t_1 <= tau,
///                  1/2 z_k^T Q_k z_k + t_{k+1} <= t_k,   (per scenario)
///                  1/2 z_N^T Q_N z_N <= t_N,
///                  A_eq z = b,  G_ineq z <= d.
///
/// G_ineq rows are grouped per (scenario, stage < N) in blocks of
/// `ineq_per_stage` rows; the terminal stage carries no inequality rows.
struct Rqp {
  StageLayout layout;
  /// Q_k^j stored at layout.epi_index(j, k).
  std::vector<MatrixXd> Q_blocks;
  SparseMatrix A_eq;
  VectorXd b;
  SparseMatrix G_ineq;
  VectorXd d;
  int ineq_per_stage = 0;
  std::vector<EqualityGroup> eq_groups;

  const MatrixXd& Q(int j, int k) const { return Q_blocks[layout.epi_index(j, k)]; }
  int ineq_offset(int j, int k) const {
    return (j * layout.horizon + k) * ineq_per_stage;
  }
};

/// Throws InputError when dimensions are inconsistent.
void validate_rqp(const Rqp& rqp);

/// J_j(z) = sum_k 1/2 z_k^T Q_k z_k for every scenario.
VectorXd scenario_costs(const Rqp& rqp, const VectorXd& z);

/// The selector beta = (e_1, ..., e_1) and the block-diagonal chain matrix
/// B = diag(B^1, ..., B^M), each B^j the (N+1) x N matrix with +1 on the
/// diagonal and -1 on the subdiagonal.
struct EpigraphOperators {
  VectorXd beta;
  SparseMatrix Bchain;
};

EpigraphOperators assemble_epigraph_operators(int scenarios, int horizon);

/// Primal-dual point. mu, s are indexed by epigraph row, nu, w by inequality
/// row and lambda by equality row.
struct Iterate {
  double tau = 0.0;
  VectorXd t;
  VectorXd z;
  VectorXd mu;
  VectorXd nu;
  VectorXd lambda;
  VectorXd s;
  VectorXd w;
};

/// KKT function values at an iterate; the Newton system is J * dir = -F.
struct Residuals {
  double r_tau = 0.0;  ///< 1 - beta^T mu
  VectorXd r_t;        ///< B^T mu
  VectorXd r_stat;     ///< Q_mu z + A^T lambda + G^T nu
  VectorXd r_epi;      ///< 1/2 Q_z^T z - beta tau + B t + s
  VectorXd r_eq;       ///< A z - b
  VectorXd r_ineq;     ///< G z + w - d
  VectorXd r_s;        ///< mu o s - centering
  VectorXd r_w;        ///< nu o w - centering
};

struct StepDirection {
  double d_tau = 0.0;
  VectorXd d_t;
  VectorXd d_z;
  VectorXd d_mu;
  VectorXd d_nu;
  VectorXd d_lambda;
  VectorXd d_s;
  VectorXd d_w;
};

/// Reduced system in (dz, dlambda) after eliminating w, nu, s, mu and eta:
///
///   [ H  A^T ] [dz]   [rhs_z     ]
///   [ A   0  ] [dl] = [rhs_lambda]
///
/// with H = Q_s - R P^{-1} R^T, P = G_ep^T D G_ep, R = Q_z D G_ep,
/// Q_s = Q_mu + G^T W^{-1} V G + Q_z D Q_z^T, D = S^{-1} M, G_ep = [-beta B].
///
/// The workspace keeps everything needed to reassemble the same operator in
/// other coordinates (the epigraph-augmented form used by message passing)
/// and to recover the eliminated components.
struct ReducedKkt {
  StageLayout layout;
  /// D = S^{-1} M, one entry per epigraph row.
  VectorXd epi_weight;
  /// W^{-1} V, one entry per inequality row.
  VectorXd ineq_weight;
  /// Q_k^j z_k^j for every epigraph row (the columns of Q_z).
  std::vector<VectorXd> qz;
  /// Per-scenario multiplier of each epigraph row; Q_mu = diag(mu_k^j Q_k^j).
  VectorXd mu;
  /// P and its Cholesky factor.
  MatrixXd P;
  Eigen::LLT<MatrixXd> P_factor;

  // Right-hand sides (sign convention: r = -F).
  VectorXd r_eta_hat;   ///< r_eta + G_ep^T D rbar_epi, size eta_dim
  VectorXd r_tilde;     ///< rbar_stat + Q_z D rbar_epi, size z_dim
  VectorXd rbar_epi;    ///< r_epi - M^{-1} r_s
  VectorXd rhs_z;       ///< r_tilde - R P^{-1} r_eta_hat
  VectorXd rhs_lambda;  ///< r_lambda

  /// Dense H; only built on request.
  std::optional<MatrixXd> H;
};

/// F(it) with the complementarity blocks shifted by `centering`.
Residuals kkt_residuals(const Rqp& rqp, const Iterate& it, double centering);

/// Assembles the reduced system; `dense` additionally materializes H.
/// Throws NumericalBreakdown if P is not numerically positive definite.
ReducedKkt build_reduced_kkt(const Rqp& rqp, const Iterate& it, const Residuals& res,
                             bool dense);

/// Recomputes only the right-hand sides of `red` for new residuals at the
/// same iterate (used by the corrector step).
void update_reduced_rhs(const Rqp& rqp, const Iterate& it, const Residuals& res,
                        ReducedKkt& red);

/// Back-substitutes a solution of the reduced system into a full direction.
StepDirection recover_step(const Rqp& rqp, const Iterate& it, const Residuals& res,
                           const ReducedKkt& red, const VectorXd& d_z,
                           const VectorXd& d_lambda);

/// J * dir + F block by block, with explicitly assembled operators.
Residuals newton_residual(const Rqp& rqp, const Iterate& it, const Residuals& res,
                          const StepDirection& dir);

/// Largest infinity norm over the blocks of a residual set.
double max_block_norm(const Residuals& r);

/// Largest block residual of J * dir + F divided by (1 + |F|_inf), evaluated
/// with explicitly assembled operators.
double verify_direction(const Rqp& rqp, const Iterate& it, const Residuals& res,
                        const StepDirection& dir);

// Structured products used on the hot path.

/// G_ep * (tau, t).
VectorXd epigraph_apply(const StageLayout& layout, double tau, const VectorXd& t);
/// G_ep^T * y, returned as (tau component, t components) stacked.
VectorXd epigraph_apply_transpose(const StageLayout& layout, const VectorXd& y);
/// Q_z^T dz (one entry per epigraph row).
VectorXd qz_transpose_apply(const StageLayout& layout, const std::vector<VectorXd>& qz,
                            const VectorXd& dz);
/// Q_z y.
VectorXd qz_apply(const StageLayout& layout, const std::vector<VectorXd>& qz,
                  const VectorXd& y);

/// Infinity norm that treats empty vectors as zero.
double inf_norm(const VectorXd& v);

}  // namespace rmpc
