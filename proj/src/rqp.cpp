#include "rmpc/rqp.hpp"

#include "rmpc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rmpc {

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

void validate_rqp(const Rqp& rqp) {
  const StageLayout& L = rqp.layout;
  if (L.scenarios < 1 || L.horizon < 1 || L.nx < 1 || L.nu < 1) {
    throw InputError("rqp layout must have positive dimensions");
  }
  if (static_cast<int>(rqp.Q_blocks.size()) != L.epi_rows()) {
    throw InputError("rqp needs one Q block per (scenario, stage)");
  }
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      const MatrixXd& Qk = rqp.Q(j, k);
      if (Qk.rows() != L.stage_dim(k) || Qk.cols() != L.stage_dim(k)) {
        throw InputError("rqp Q block (" + std::to_string(j) + ", " + std::to_string(k) +
                         ") has wrong dimension");
      }
    }
  }
  if (rqp.A_eq.cols() != L.z_dim() || rqp.A_eq.rows() != rqp.b.size()) {
    throw InputError("rqp equality system has inconsistent dimensions");
  }
  if (rqp.G_ineq.cols() != L.z_dim() || rqp.G_ineq.rows() != rqp.d.size() ||
      rqp.G_ineq.rows() != L.scenarios * L.horizon * rqp.ineq_per_stage) {
    throw InputError("rqp inequality system has inconsistent dimensions");
  }
}

VectorXd scenario_costs(const Rqp& rqp, const VectorXd& z) {
  const StageLayout& L = rqp.layout;
  VectorXd J = VectorXd::Zero(L.scenarios);
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      const auto zk = z.segment(L.z_offset(j, k), L.stage_dim(k));
      J(j) += 0.5 * zk.dot(rqp.Q(j, k) * zk);
    }
  }
  return J;
}

EpigraphOperators assemble_epigraph_operators(int scenarios, int horizon) {
  const StageLayout L{scenarios, horizon, 1, 1};
  EpigraphOperators ops;
  ops.beta = VectorXd::Zero(L.epi_rows());
  std::vector<Eigen::Triplet<double>> entries;
  for (int j = 0; j < scenarios; ++j) {
    ops.beta(L.epi_index(j, 0)) = 1.0;
    for (int c = 0; c < horizon; ++c) {
      entries.emplace_back(L.epi_index(j, c), j * horizon + c, 1.0);
      entries.emplace_back(L.epi_index(j, c + 1), j * horizon + c, -1.0);
    }
  }
  ops.Bchain.resize(L.epi_rows(), L.t_dim());
  ops.Bchain.setFromTriplets(entries.begin(), entries.end());
  return ops;
}

VectorXd epigraph_apply(const StageLayout& L, double tau, const VectorXd& t) {
  VectorXd out(L.epi_rows());
  const int N = L.horizon;
  for (int j = 0; j < L.scenarios; ++j) {
    out(L.epi_index(j, 0)) = -tau + t(L.t_index(j, 1));
    for (int k = 1; k < N; ++k) out(L.epi_index(j, k)) = -t(L.t_index(j, k)) + t(L.t_index(j, k + 1));
    out(L.epi_index(j, N)) = -t(L.t_index(j, N));
  }
  return out;
}

VectorXd epigraph_apply_transpose(const StageLayout& L, const VectorXd& y) {
  VectorXd out = VectorXd::Zero(L.eta_dim());
  for (int j = 0; j < L.scenarios; ++j) {
    out(0) -= y(L.epi_index(j, 0));
    for (int k = 1; k <= L.horizon; ++k) {
      out(1 + L.t_index(j, k)) = y(L.epi_index(j, k - 1)) - y(L.epi_index(j, k));
    }
  }
  return out;
}

VectorXd qz_transpose_apply(const StageLayout& L, const std::vector<VectorXd>& qz,
                            const VectorXd& dz) {
  VectorXd out(L.epi_rows());
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      out(L.epi_index(j, k)) = qz[L.epi_index(j, k)].dot(dz.segment(L.z_offset(j, k), L.stage_dim(k)));
    }
  }
  return out;
}

VectorXd qz_apply(const StageLayout& L, const std::vector<VectorXd>& qz, const VectorXd& y) {
  VectorXd out(L.z_dim());
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      out.segment(L.z_offset(j, k), L.stage_dim(k)) = qz[L.epi_index(j, k)] * y(L.epi_index(j, k));
    }
  }
  return out;
}

Residuals kkt_residuals(const Rqp& rqp, const Iterate& it, double centering) {
  const StageLayout& L = rqp.layout;
  if (it.z.size() != L.z_dim() || it.t.size() != L.t_dim() || it.mu.size() != L.epi_rows() ||
      it.s.size() != L.epi_rows() || it.lambda.size() != rqp.A_eq.rows() ||
      it.nu.size() != rqp.G_ineq.rows() || it.w.size() != rqp.G_ineq.rows()) {
    throw InputError("iterate dimensions do not match the program");
  }
  Residuals r;
  const VectorXd eta_part = epigraph_apply_transpose(L, it.mu);
  r.r_tau = 1.0 + eta_part(0);
  r.r_t = eta_part.tail(L.t_dim());

  r.r_stat = rqp.A_eq.transpose() * it.lambda + rqp.G_ineq.transpose() * it.nu;
  r.r_epi = epigraph_apply(L, it.tau, it.t) + it.s;
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      const int e = L.epi_index(j, k);
      const auto zk = it.z.segment(L.z_offset(j, k), L.stage_dim(k));
      const VectorXd qzk = rqp.Q(j, k) * zk;
      r.r_stat.segment(L.z_offset(j, k), L.stage_dim(k)) += it.mu(e) * qzk;
      r.r_epi(e) += 0.5 * zk.dot(qzk);
    }
  }
  r.r_eq = rqp.A_eq * it.z - rqp.b;
  r.r_ineq = rqp.G_ineq * it.z + it.w - rqp.d;
  r.r_s = it.mu.cwiseProduct(it.s).array() - centering;
  r.r_w = it.nu.cwiseProduct(it.w).array() - centering;
  return r;
}

namespace {

MatrixXd dense_epigraph_matrix(const StageLayout& L) {
  MatrixXd G = MatrixXd::Zero(L.epi_rows(), L.eta_dim());
  for (int j = 0; j < L.scenarios; ++j) {
    G(L.epi_index(j, 0), 0) = -1.0;
    for (int k = 1; k <= L.horizon; ++k) {
      G(L.epi_index(j, k - 1), 1 + L.t_index(j, k)) = 1.0;
      G(L.epi_index(j, k), 1 + L.t_index(j, k)) = -1.0;
    }
  }
  return G;
}

// R x = Q_z D G_ep x
VectorXd apply_R(const ReducedKkt& red, const VectorXd& x) {
  const VectorXd g = epigraph_apply(red.layout, x(0), x.tail(red.layout.t_dim()));
  return qz_apply(red.layout, red.qz, red.epi_weight.cwiseProduct(g));
}

// R^T dz = G_ep^T D Q_z^T dz
VectorXd apply_RT(const ReducedKkt& red, const VectorXd& dz) {
  const VectorXd y = qz_transpose_apply(red.layout, red.qz, dz);
  return epigraph_apply_transpose(red.layout, red.epi_weight.cwiseProduct(y));
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

}  // namespace

void update_reduced_rhs(const Rqp& rqp, const Iterate& it, const Residuals& res,
                        ReducedKkt& red) {
  const StageLayout& L = rqp.layout;
  VectorXd r_eta(L.eta_dim());
  r_eta(0) = -res.r_tau;
  r_eta.tail(L.t_dim()) = -res.r_t;

  // Eliminate dw, dnu: rbar_stat = r_stat - G^T W^{-1} (r_w - V r_nu).
  const VectorXd r_nu = -res.r_ineq;
  const VectorXd r_w = -res.r_w;
  const VectorXd ineq_term = (r_w - it.nu.cwiseProduct(r_nu)).cwiseQuotient(it.w);
  const VectorXd rbar_stat = -res.r_stat - rqp.G_ineq.transpose() * ineq_term;

  // Eliminate ds: rbar_epi = r_epi - M^{-1} r_s.
  red.rbar_epi = -res.r_epi + res.r_s.cwiseQuotient(it.mu);
  const VectorXd weighted = red.epi_weight.cwiseProduct(red.rbar_epi);

  red.r_eta_hat = r_eta + epigraph_apply_transpose(L, weighted);
  red.r_tilde = rbar_stat + qz_apply(L, red.qz, weighted);
  red.rhs_z = red.r_tilde - apply_R(red, red.P_factor.solve(red.r_eta_hat));
  red.rhs_lambda = -res.r_eq;

  if (!all_finite(red.rhs_z) || !all_finite(red.r_eta_hat)) {
    throw NumericalBreakdown("non-finite right-hand side in reduced KKT system");
  }
}

ReducedKkt build_reduced_kkt(const Rqp& rqp, const Iterate& it, const Residuals& res,
                             bool dense) {
  const StageLayout& L = rqp.layout;
  if ((it.mu.array() <= 0).any() || (it.s.array() <= 0).any() || (it.nu.array() <= 0).any() ||
      (it.w.array() <= 0).any()) {
    throw NumericalBreakdown("iterate is not strictly interior");
  }
  ReducedKkt red;
  red.layout = L;
  red.mu = it.mu;
  red.epi_weight = it.mu.cwiseQuotient(it.s);
  red.ineq_weight = it.nu.cwiseQuotient(it.w);
  red.qz.resize(L.epi_rows());
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      red.qz[L.epi_index(j, k)] = rqp.Q(j, k) * it.z.segment(L.z_offset(j, k), L.stage_dim(k));
    }
  }

  const MatrixXd Gep = dense_epigraph_matrix(L);
  red.P = Gep.transpose() * red.epi_weight.asDiagonal() * Gep;
  red.P_factor.compute(red.P);
  if (red.P_factor.info() != Eigen::Success || !red.P.allFinite()) {
    throw NumericalBreakdown("epigraph block P is not positive definite");
  }

  update_reduced_rhs(rqp, it, res, red);

  if (dense) {
    const int nz = L.z_dim();
    MatrixXd Qz = MatrixXd::Zero(nz, L.epi_rows());
    MatrixXd H = MatrixXd::Zero(nz, nz);
    for (int j = 0; j < L.scenarios; ++j) {
      for (int k = 0; k <= L.horizon; ++k) {
        const int e = L.epi_index(j, k);
        const int off = L.z_offset(j, k);
        const int n = L.stage_dim(k);
        Qz.block(off, e, n, 1) = red.qz[e];
        H.block(off, off, n, n) += it.mu(e) * rqp.Q(j, k);
      }
    }
    const MatrixXd G = MatrixXd(rqp.G_ineq);
    H += G.transpose() * red.ineq_weight.asDiagonal() * G;
    H += Qz * red.epi_weight.asDiagonal() * Qz.transpose();
    const MatrixXd R = Qz * red.epi_weight.asDiagonal() * Gep;
    H -= R * red.P_factor.solve(R.transpose());
    red.H = 0.5 * (H + H.transpose());
  }
  return red;
}

StepDirection recover_step(const Rqp& rqp, const Iterate& it, const Residuals& res,
                           const ReducedKkt& red, const VectorXd& d_z,
                           const VectorXd& d_lambda) {
  const StageLayout& L = rqp.layout;
  StepDirection dir;
  dir.d_z = d_z;
  dir.d_lambda = d_lambda;

  const VectorXd d_eta = red.P_factor.solve(red.r_eta_hat - apply_RT(red, d_z));
  dir.d_tau = d_eta(0);
  dir.d_t = d_eta.tail(L.t_dim());

  dir.d_mu = red.epi_weight.cwiseProduct(qz_transpose_apply(L, red.qz, d_z) +
                                         epigraph_apply(L, dir.d_tau, dir.d_t) - red.rbar_epi);
  dir.d_s = (-res.r_s - it.s.cwiseProduct(dir.d_mu)).cwiseQuotient(it.mu);
  dir.d_w = -res.r_ineq - rqp.G_ineq * d_z;
  dir.d_nu = (-res.r_w - it.nu.cwiseProduct(dir.d_w)).cwiseQuotient(it.w);
  return dir;
}

Residuals newton_residual(const Rqp& rqp, const Iterate& it, const Residuals& res,
                          const StepDirection& dir) {
  const StageLayout& L = rqp.layout;
  const EpigraphOperators ops = assemble_epigraph_operators(L.scenarios, L.horizon);

  // Q_z and Q_mu assembled explicitly.
  std::vector<Eigen::Triplet<double>> qz_entries;
  std::vector<Eigen::Triplet<double>> qmu_entries;
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 0; k <= L.horizon; ++k) {
      const int e = L.epi_index(j, k);
      const int off = L.z_offset(j, k);
      const int n = L.stage_dim(k);
      const MatrixXd& Qk = rqp.Q(j, k);
      const VectorXd col = Qk * it.z.segment(off, n);
      for (int a = 0; a < n; ++a) {
        qz_entries.emplace_back(off + a, e, col(a));
        for (int b = 0; b < n; ++b) qmu_entries.emplace_back(off + a, off + b, it.mu(e) * Qk(a, b));
      }
    }
  }
  SparseMatrix Qz(L.z_dim(), L.epi_rows());
  Qz.setFromTriplets(qz_entries.begin(), qz_entries.end());
  SparseMatrix Qmu(L.z_dim(), L.z_dim());
  Qmu.setFromTriplets(qmu_entries.begin(), qmu_entries.end());

  Residuals e;
  e.r_tau = -ops.beta.dot(dir.d_mu) + res.r_tau;
  e.r_t = ops.Bchain.transpose() * dir.d_mu + res.r_t;
  e.r_stat = Qmu * dir.d_z + Qz * dir.d_mu + rqp.A_eq.transpose() * dir.d_lambda +
             rqp.G_ineq.transpose() * dir.d_nu + res.r_stat;
  e.r_epi = VectorXd(Qz.transpose() * dir.d_z) + ops.Bchain * dir.d_t - ops.beta * dir.d_tau +
            dir.d_s + res.r_epi;
  e.r_eq = rqp.A_eq * dir.d_z + res.r_eq;
  e.r_ineq = rqp.G_ineq * dir.d_z + dir.d_w + res.r_ineq;
  e.r_s = it.mu.cwiseProduct(dir.d_s) + it.s.cwiseProduct(dir.d_mu) + res.r_s;
  e.r_w = it.nu.cwiseProduct(dir.d_w) + it.w.cwiseProduct(dir.d_nu) + res.r_w;
  return e;
}

double max_block_norm(const Residuals& r) {
  return std::max({std::abs(r.r_tau), inf_norm(r.r_t), inf_norm(r.r_stat), inf_norm(r.r_epi),
                   inf_norm(r.r_eq), inf_norm(r.r_ineq), inf_norm(r.r_s), inf_norm(r.r_w)});
}

double verify_direction(const Rqp& rqp, const Iterate& it, const Residuals& res,
                        const StepDirection& dir) {
  return max_block_norm(newton_residual(rqp, it, res, dir)) / (1.0 + max_block_norm(res));
}

}  // namespace rmpc
