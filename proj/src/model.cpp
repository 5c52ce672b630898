#include "rmpc/model.hpp"

#include "rmpc/errors.hpp"

#include <Eigen/Eigenvalues>

#include <stdexcept>
#include <string>

namespace rmpc {

namespace {

std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void expect_shape(const MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                  const std::string& field) {
  if (m.rows() != rows || m.cols() != cols) {
    throw InputError("dimension mismatch in " + field + ": expected " + dims(rows, cols) +
                     ", got " + dims(m.rows(), m.cols()));
  }
}

void expect_size(const VectorXd& v, Eigen::Index n, const std::string& field) {
  if (v.size() != n) {
    throw InputError("dimension mismatch in " + field + ": expected length " +
                     std::to_string(n) + ", got " + std::to_string(v.size()));
  }
}

void expect_psd(const MatrixXd& m, const std::string& field) {
  const double scale = 1.0 + m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw InputError(field + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw InputError(field + " is not positive semidefinite (smallest eigenvalue " +
                     std::to_string(eig.eigenvalues().minCoeff()) + ")");
  }
}

}  // namespace

void validate(const UncertainSystem& sys) {
  if (sys.nx < 1) throw InputError("nx must be positive");
  if (sys.nu < 1) throw InputError("nu must be positive");
  if (sys.horizon < 1) throw InputError("horizon must be positive");
  if (sys.robust_horizon < 0 || sys.robust_horizon >= sys.horizon) {
    throw InputError("robust_horizon must lie in [0, horizon - 1]");
  }
  const int nx = sys.nx;
  const int nu = sys.nu;
  const int q = sys.num_constraints();

  expect_size(sys.x0, nx, "x0");
  expect_shape(sys.Q, nx + nu, nx + nu, "cost.Q");
  expect_shape(sys.S, nx, nx, "cost.S");
  expect_psd(sys.Q, "cost.Q");
  expect_psd(sys.S, "cost.S");
  expect_shape(sys.C, q, nx, "constraints.C");
  expect_shape(sys.D, q, nu, "constraints.D");
  if (static_cast<int>(sys.e.size()) != sys.horizon) {
    throw InputError("constraints.e must contain horizon = " + std::to_string(sys.horizon) +
                     " vectors");
  }
  for (int k = 0; k < sys.horizon; ++k) {
    expect_size(sys.e[k], q, "constraints.e[" + std::to_string(k) + "]");
  }

  if (static_cast<int>(sys.realizations.size()) != sys.horizon) {
    throw InputError("realizations must contain horizon = " + std::to_string(sys.horizon) +
                     " stages");
  }
  for (int k = 0; k < sys.horizon; ++k) {
    const auto& stage = sys.realizations[k];
    const std::string where = "realizations[" + std::to_string(k) + "]";
    if (stage.empty()) throw InputError(where + " is empty");
    if (k > sys.robust_horizon && stage.size() != 1) {
      throw InputError(where + " has " + std::to_string(stage.size()) +
                       " realizations but stage " + std::to_string(k) +
                       " lies beyond robust_horizon = " + std::to_string(sys.robust_horizon));
    }
    for (std::size_t i = 0; i < stage.size(); ++i) {
      const std::string item = where + "[" + std::to_string(i) + "]";
      expect_shape(stage[i].A, nx, nx, item + ".A");
      expect_shape(stage[i].B, nx, nu, item + ".B");
      expect_size(stage[i].v, nx, item + ".v");
    }
  }
}

ScenarioTree enumerate_scenarios(const UncertainSystem& sys) {
  validate(sys);
  ScenarioTree tree;
  tree.horizon = sys.horizon;
  tree.robust_horizon = sys.robust_horizon;
  const int depth = sys.robust_horizon + 1;

  std::vector<int> path(depth, 0);
  while (true) {
    tree.paths.push_back(path);
    // Odometer increment, last stage fastest: lexicographic order.
    int k = depth - 1;
    while (k >= 0 && path[k] + 1 == sys.branching(k)) {
      path[k] = 0;
      --k;
    }
    if (k < 0) break;
    ++path[k];
  }
  tree.num_scenarios = static_cast<int>(tree.paths.size());

  tree.stage_data.resize(tree.num_scenarios);
  for (int j = 0; j < tree.num_scenarios; ++j) {
    for (int k = 0; k < sys.horizon; ++k) {
      const int idx = k < depth ? tree.paths[j][k] : 0;
      tree.stage_data[j].push_back(sys.realizations[k][idx]);
    }
  }

  for (int j = 0; j + 1 < tree.num_scenarios; ++j) {
    int prefix = 0;
    while (prefix < depth && tree.paths[j][prefix] == tree.paths[j + 1][prefix]) ++prefix;
    // u_k depends on p_0..p_{k-1}: controls 0..prefix coincide.
    tree.shared.push_back(prefix + 1);
  }
  return tree;
}

int shared_control_count(const ScenarioTree& tree, int j) {
  if (j < 0 || j >= static_cast<int>(tree.shared.size())) {
    throw std::out_of_range("scenario pair index " + std::to_string(j) + " out of range");
  }
  return tree.shared[j];
}

NonAnticipativity build_nonanticipativity(const ScenarioTree& tree, int nx, int nu) {
  const int M = tree.num_scenarios;
  const int N = tree.horizon;
  const StageLayout layout{M, N, nx, nu};

  NonAnticipativity na;
  std::vector<Eigen::Triplet<double>> u_entries;
  std::vector<Eigen::Triplet<double>> z_entries;
  int row = 0;
  for (int j = 0; j + 1 < M; ++j) {
    for (int k = 0; k < tree.shared[j]; ++k) {
      na.blocks.push_back({j, k, row});
      for (int i = 0; i < nu; ++i, ++row) {
        u_entries.emplace_back(row, (j * N + k) * nu + i, 1.0);
        u_entries.emplace_back(row, ((j + 1) * N + k) * nu + i, -1.0);
        z_entries.emplace_back(row, layout.u_offset(j, k) + i, 1.0);
        z_entries.emplace_back(row, layout.u_offset(j + 1, k) + i, -1.0);
      }
    }
  }
  na.rows = row;
  na.u_matrix.resize(row, M * N * nu);
  na.u_matrix.setFromTriplets(u_entries.begin(), u_entries.end());
  na.padded.resize(row, layout.z_dim());
  na.padded.setFromTriplets(z_entries.begin(), z_entries.end());
  return na;
}

Rqp assemble_rqp(const ScenarioTree& tree, const UncertainSystem& sys) {
  validate(sys);
  if (tree.horizon != sys.horizon || tree.stage_data.size() != tree.paths.size()) {
    throw InputError("scenario tree does not match the system");
  }
  const int M = tree.num_scenarios;
  const int N = sys.horizon;
  const int nx = sys.nx;
  const int nu = sys.nu;
  const int q = sys.num_constraints();

  Rqp rqp;
  rqp.layout = StageLayout{M, N, nx, nu};
  const StageLayout& L = rqp.layout;
  rqp.ineq_per_stage = q;

  rqp.Q_blocks.resize(L.epi_rows());
  for (int j = 0; j < M; ++j) {
    for (int k = 0; k < N; ++k) rqp.Q_blocks[L.epi_index(j, k)] = sys.Q;
    rqp.Q_blocks[L.epi_index(j, N)] = sys.S;
  }

  const NonAnticipativity na = build_nonanticipativity(tree, nx, nu);
  const int dyn_rows = M * (N + 1) * nx;
  const int eq_rows = dyn_rows + na.rows;

  std::vector<Eigen::Triplet<double>> a;
  rqp.b = VectorXd::Zero(eq_rows);
  for (int j = 0; j < M; ++j) {
    const int base = j * (N + 1) * nx;
    rqp.eq_groups.push_back({EqualityGroup::Kind::Initial, j, -1, 0, base, nx});
    for (int i = 0; i < nx; ++i) a.emplace_back(base + i, L.x_offset(j, 0) + i, 1.0);
    rqp.b.segment(base, nx) = sys.x0;

    for (int k = 0; k < N; ++k) {
      const Realization& r = tree.stage_data[j][k];
      const int row = base + (k + 1) * nx;
      rqp.eq_groups.push_back({EqualityGroup::Kind::Dynamics, j, -1, k, row, nx});
      // Structural zeros are kept so the sparsity pattern does not depend on data.
      for (int i = 0; i < nx; ++i) {
        for (int c = 0; c < nx; ++c) a.emplace_back(row + i, L.x_offset(j, k) + c, -r.A(i, c));
        for (int c = 0; c < nu; ++c) a.emplace_back(row + i, L.u_offset(j, k) + c, -r.B(i, c));
        a.emplace_back(row + i, L.x_offset(j, k + 1) + i, 1.0);
      }
      rqp.b.segment(row, nx) = r.v;
    }
  }
  for (const auto& blk : na.blocks) {
    rqp.eq_groups.push_back({EqualityGroup::Kind::NonAnticipativity, blk.scenario,
                             blk.scenario + 1, blk.stage, dyn_rows + blk.first_row, nu});
  }
  for (int r = 0; r < na.padded.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator itr(na.padded, r); itr; ++itr) {
      a.emplace_back(dyn_rows + static_cast<int>(itr.row()), static_cast<int>(itr.col()),
                     itr.value());
    }
  }
  rqp.A_eq.resize(eq_rows, L.z_dim());
  rqp.A_eq.setFromTriplets(a.begin(), a.end());

  std::vector<Eigen::Triplet<double>> g;
  rqp.d = VectorXd::Zero(M * N * q);
  for (int j = 0; j < M; ++j) {
    for (int k = 0; k < N; ++k) {
      const int row = rqp.ineq_offset(j, k);
      for (int i = 0; i < q; ++i) {
        for (int c = 0; c < nx; ++c) g.emplace_back(row + i, L.x_offset(j, k) + c, sys.C(i, c));
        for (int c = 0; c < nu; ++c) g.emplace_back(row + i, L.u_offset(j, k) + c, sys.D(i, c));
      }
      rqp.d.segment(row, q) = sys.e[k];
    }
  }
  rqp.G_ineq.resize(M * N * q, L.z_dim());
  rqp.G_ineq.setFromTriplets(g.begin(), g.end());

  validate_rqp(rqp);
  return rqp;
}

VectorXd stacked_controls(const StageLayout& layout, const VectorXd& z) {
  VectorXd u(layout.scenarios * layout.horizon * layout.nu);
  for (int j = 0; j < layout.scenarios; ++j) {
    for (int k = 0; k < layout.horizon; ++k) {
      u.segment((j * layout.horizon + k) * layout.nu, layout.nu) =
          z.segment(layout.u_offset(j, k), layout.nu);
    }
  }
  return u;
}

}  // namespace rmpc
