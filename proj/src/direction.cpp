#include "rmpc/direction.hpp"

#include "rmpc/errors.hpp"
#include "rmpc/parallel.hpp"

#include <unsupported/Eigen/IterativeSolvers>

#include <algorithm>
#include <stdexcept>
#include <string>

namespace rmpc {

namespace {

// Message-passing solve of the augmented system, for Krylov refinement.
class CliqueTreePreconditioner {
 public:
  void attach(const CliqueTreeSolver* solver) { solver_ = solver; }

  template <typename Matrix>
  CliqueTreePreconditioner& analyzePattern(const Matrix&) { return *this; }
  template <typename Matrix>
  CliqueTreePreconditioner& factorize(const Matrix&) { return *this; }
  template <typename Matrix>
  CliqueTreePreconditioner& compute(const Matrix&) { return *this; }
  Eigen::ComputationInfo info() const { return Eigen::Success; }

  VectorXd solve(const VectorXd& b) const {
    const int n = solver_->num_vars();
    const QpSolution s = solver_->solve(b.head(n), b.tail(b.size() - n));
    VectorXd out(b.size());
    out << s.y, s.lambda;
    return out;
  }

 private:
  const CliqueTreeSolver* solver_ = nullptr;
};

std::string stage_label(const char* kind, int j, int k) {
  return std::string(kind) + "_" + std::to_string(k) + "^" + std::to_string(j + 1);
}

// y indices of a term's scalars in local (sorted scope) order.
std::vector<int> term_indices(const Term& t, const DirectionStructure& ds) {
  std::vector<int> idx;
  for (int v : t.scope) {
    for (int i = 0; i < ds.nodes[v].dim; ++i) idx.push_back(ds.offsets[v] + i);
  }
  return idx;
}

Term make_term(std::string name, std::vector<int> scope) {
  Term t;
  t.name = std::move(name);
  std::sort(scope.begin(), scope.end());
  scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
  t.scope = std::move(scope);
  return t;
}

}  // namespace

DirectionStructure build_direction_structure(const Rqp& rqp, bool with_epigraph) {
  validate_rqp(rqp);
  const StageLayout& L = rqp.layout;
  const int M = L.scenarios;
  const int N = L.horizon;
  DirectionStructure ds;
  ds.layout = L;
  ds.with_epigraph = with_epigraph;
  ds.num_rows = static_cast<int>(rqp.A_eq.rows());
  const int zoff = with_epigraph ? L.eta_dim() : 0;

  ds.x_node.assign(M * (N + 1), -1);
  ds.u_node.assign(M * N, -1);
  if (with_epigraph) ds.t_node.assign(L.t_dim(), -1);
  auto add_node = [&](Supernode::Kind kind, int j, int k, int dim, std::string label,
                      int offset) {
    ds.nodes.push_back({kind, j, k, dim, std::move(label)});
    ds.offsets.push_back(offset);
    return static_cast<int>(ds.nodes.size()) - 1;
  };
  for (int j = 0; j < M; ++j) {
    for (int k = 0; k < N; ++k) {
      ds.x_node[j * (N + 1) + k] = add_node(Supernode::Kind::State, j, k, L.nx,
                                            stage_label("x", j, k), zoff + L.x_offset(j, k));
      ds.u_node[j * N + k] = add_node(Supernode::Kind::Input, j, k, L.nu,
                                      stage_label("u", j, k), zoff + L.u_offset(j, k));
      if (with_epigraph) {
        ds.t_node[L.t_index(j, k + 1)] = add_node(Supernode::Kind::Epigraph, j, k + 1, 1,
                                                  stage_label("t", j, k + 1),
                                                  1 + L.t_index(j, k + 1));
      }
    }
    ds.x_node[j * (N + 1) + N] = add_node(Supernode::Kind::State, j, N, L.nx,
                                          stage_label("x", j, N), zoff + L.x_offset(j, N));
  }
  if (with_epigraph) ds.tau_node = add_node(Supernode::Kind::Tau, -1, 0, 1, "tau", 0);

  auto t = [&](int j, int k) { return ds.t_node[L.t_index(j, k)]; };

  // Stage-0 coupling term: every epigraph row at stage 0 involves tau.
  {
    std::vector<int> scope;
    for (int j = 0; j < M; ++j) {
      scope.push_back(ds.x(j, 0));
      scope.push_back(ds.u(j, 0));
      if (with_epigraph) scope.push_back(t(j, 1));
    }
    if (with_epigraph) scope.push_back(ds.tau_node);
    ds.coupling_term = static_cast<int>(ds.terms.size());
    ds.terms.push_back(make_term("F0", std::move(scope)));
  }
  ds.stage_term.assign(M * (N + 1), -1);
  for (int j = 0; j < M; ++j) {
    ds.stage_term[j * (N + 1)] = static_cast<int>(ds.terms.size());
    ds.terms.push_back(make_term(stage_label("F", j, 0), {ds.x(j, 0), ds.u(j, 0), ds.x(j, 1)}));
    for (int k = 1; k < N; ++k) {
      std::vector<int> scope{ds.x(j, k), ds.u(j, k), ds.x(j, k + 1)};
      if (with_epigraph) {
        scope.push_back(t(j, k));
        scope.push_back(t(j, k + 1));
      }
      ds.stage_term[j * (N + 1) + k] = static_cast<int>(ds.terms.size());
      ds.terms.push_back(make_term(stage_label("F", j, k), std::move(scope)));
    }
    std::vector<int> scope{ds.x(j, N)};
    if (with_epigraph) scope.push_back(t(j, N));
    ds.stage_term[j * (N + 1) + N] = static_cast<int>(ds.terms.size());
    ds.terms.push_back(make_term(stage_label("F", j, N), std::move(scope)));
  }

  // Equality rows.
  const MatrixXd A = MatrixXd(rqp.A_eq);
  std::vector<int> row_seen(ds.num_rows, 0);
  std::vector<int> local(L.z_dim() + zoff, -1);
  auto attach_rows = [&](Term& term, int first, int rows) {
    const std::vector<int> idx = term_indices(term, ds);
    for (std::size_t i = 0; i < idx.size(); ++i) local[idx[i]] = static_cast<int>(i);
    const int old = static_cast<int>(term.eq_rows.size());
    term.eq_matrix.conservativeResize(old + rows, static_cast<Eigen::Index>(idx.size()));
    for (int r = 0; r < rows; ++r) {
      const int row = first + r;
      if (row < 0 || row >= ds.num_rows || row_seen[row]++) {
        throw InputError("equality row " + std::to_string(row) + " grouped twice");
      }
      term.eq_matrix.row(old + r).setZero();
      for (int c = 0; c < L.z_dim(); ++c) {
        if (A(row, c) == 0.0) continue;
        const int pos = local[zoff + c];
        if (pos < 0) {
          throw InputError("equality row " + std::to_string(row) +
                           " couples variables outside its stage block");
        }
        term.eq_matrix(old + r, pos) = A(row, c);
      }
      term.eq_rows.push_back(row);
    }
    for (int i : idx) local[i] = -1;
  };
  for (const EqualityGroup& grp : rqp.eq_groups) {
    switch (grp.kind) {
      case EqualityGroup::Kind::Initial:
        attach_rows(ds.terms[ds.stage_term[grp.scenario * (N + 1)]], grp.first_row, grp.rows);
        break;
      case EqualityGroup::Kind::Dynamics:
        attach_rows(ds.terms[ds.stage_term[grp.scenario * (N + 1) + grp.stage]], grp.first_row,
                    grp.rows);
        break;
      case EqualityGroup::Kind::NonAnticipativity: {
        Term term = make_term("NA_" + std::to_string(grp.stage) + "^" +
                                  std::to_string(grp.scenario + 1) + "," +
                                  std::to_string(grp.partner + 1),
                              {ds.u(grp.scenario, grp.stage), ds.u(grp.partner, grp.stage)});
        attach_rows(term, grp.first_row, grp.rows);
        ds.terms.push_back(std::move(term));
        break;
      }
    }
  }
  for (int row = 0; row < ds.num_rows; ++row) {
    if (!row_seen[row]) throw InputError("equality row " + std::to_string(row) + " has no group");
  }
  for (Term& term : ds.terms) {
    term.eq_rhs = VectorXd::Zero(static_cast<Eigen::Index>(term.eq_rows.size()));
    if (term.eq_rows.empty()) term.eq_matrix.resize(0, term.scope_dim(ds.nodes));
  }

  // Inequality rows must stay within their stage block.
  const int q = rqp.ineq_per_stage;
  for (int k = 0; k < rqp.G_ineq.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(rqp.G_ineq, k); it; ++it) {
      if (it.value() == 0.0) continue;
      const int row = static_cast<int>(it.row());
      const int col = static_cast<int>(it.col());
      const int block = q > 0 ? row / q : 0;
      const int j = block / N;
      const int stage = block % N;
      const int off = L.z_offset(j, stage);
      if (col < off || col >= off + L.stage_dim(stage)) {
        throw InputError("inequality row " + std::to_string(row) +
                         " couples variables outside its stage block");
      }
    }
  }

  ds.graph = build_sparsity_graph(ds.nodes, ds.terms);
  ds.embedding = chordal_embedding(ds.graph);
  ds.tree = build_clique_tree(ds.embedding.graph,
                              max_cliques(ds.embedding.graph, ds.embedding.ordering));
  assign_terms(ds.terms, ds.tree);
  return ds;
}

void refresh_direction_terms(const Rqp& rqp, const ReducedKkt& red, DirectionStructure& ds) {
  if (!ds.with_epigraph) {
    throw std::logic_error("direction terms need the epigraph variables");
  }
  if (!(red.layout == ds.layout)) throw std::invalid_argument("layout mismatch");
  const StageLayout& L = ds.layout;
  const int M = L.scenarios;
  const int N = L.horizon;
  const int q = rqp.ineq_per_stage;
  const int zoff = L.eta_dim();

  std::vector<std::vector<int>> indices(ds.terms.size());
  for (std::size_t i = 0; i < ds.terms.size(); ++i) {
    indices[i] = term_indices(ds.terms[i], ds);
    const auto n = static_cast<Eigen::Index>(indices[i].size());
    ds.terms[i].quadratic = MatrixXd::Zero(n, n);
  }
  std::vector<int> local(L.z_dim() + zoff, -1);
  const MatrixXd G = MatrixXd(rqp.G_ineq);

  for (int j = 0; j < M; ++j) {
    for (int k = 0; k <= N; ++k) {
      const int ti = k == 0 ? ds.coupling_term : ds.stage_term[j * (N + 1) + k];
      Term& term = ds.terms[ti];
      const auto& idx = indices[ti];
      for (std::size_t i = 0; i < idx.size(); ++i) local[idx[i]] = static_cast<int>(i);

      const int e = L.epi_index(j, k);
      const int off = zoff + L.z_offset(j, k);
      const int n = L.stage_dim(k);
      std::vector<int> stage_pos(n);
      for (int i = 0; i < n; ++i) stage_pos[i] = local[off + i];

      // Rank-one contribution d_e a a^T of epigraph row (j, k).
      VectorXd a = VectorXd::Zero(static_cast<Eigen::Index>(idx.size()));
      if (k == 0) a(local[0]) -= 1.0;
      if (k < N) a(local[1 + L.t_index(j, k + 1)]) += 1.0;
      if (k >= 1) a(local[1 + L.t_index(j, k)]) -= 1.0;
      a(stage_pos) += red.qz[e];
      term.quadratic += red.epi_weight(e) * a * a.transpose();

      MatrixXd block = red.mu(e) * rqp.Q(j, k);
      if (k < N && q > 0) {
        const int row = rqp.ineq_offset(j, k);
        const MatrixXd Gb = G.block(row, L.z_offset(j, k), q, n);
        block += Gb.transpose() * red.ineq_weight.segment(row, q).asDiagonal() * Gb;
      }
      term.quadratic(stage_pos, stage_pos) += block;

      for (int i : idx) local[i] = -1;
    }
  }
  for (Term& term : ds.terms) {
    term.quadratic = 0.5 * (term.quadratic + term.quadratic.transpose()).eval();
  }
}

VectorXd direction_linear_term(const ReducedKkt& red) {
  VectorXd c(red.r_eta_hat.size() + red.r_tilde.size());
  c << red.r_eta_hat, red.r_tilde;
  return c;
}

ChordalKktSolver::ChordalKktSolver(const Rqp& rqp, int workers)
    : ds_(build_direction_structure(rqp, true)), workers_(resolve_workers(workers)) {
  solver_.emplace(ds_.tree, ds_.nodes, ds_.offsets, ds_.terms, ds_.num_rows, workers_);
}

void ChordalKktSolver::factorize(const Rqp& rqp, const ReducedKkt& red) {
  refresh_direction_terms(rqp, red, ds_);
  regularized_ = false;
  try {
    solver_->factorize(ds_.terms, 0.0);
  } catch (const NumericalBreakdown&) {
    regularized_ = true;
    solver_->factorize(ds_.terms, kRetryRegularization);
  }
  assemble_exact_system();
}

void ChordalKktSolver::assemble_exact_system() {
  const int n = solver_->num_vars();
  std::vector<Eigen::Triplet<double>> entries;
  for (const Term& term : ds_.terms) {
    const std::vector<int> idx = term_indices(term, ds_);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const double v = term.quadratic(a, b);
        if (v != 0.0) entries.emplace_back(idx[a], idx[b], v);
      }
    }
    for (std::size_t r = 0; r < term.eq_rows.size(); ++r) {
      for (std::size_t a = 0; a < idx.size(); ++a) {
        const double v = term.eq_matrix(r, a);
        if (v == 0.0) continue;
        entries.emplace_back(n + term.eq_rows[r], idx[a], v);
        entries.emplace_back(idx[a], n + term.eq_rows[r], v);
      }
    }
  }
  kkt_.resize(n + ds_.num_rows, n + ds_.num_rows);
  kkt_.setFromTriplets(entries.begin(), entries.end());
}

ChordalDirection ChordalKktSolver::solve(const ReducedKkt& red) const {
  const int n = solver_->num_vars();
  VectorXd b(kkt_.rows());
  b << direction_linear_term(red), red.rhs_lambda;
  const QpSolution direct = solver_->solve(b.head(n), red.rhs_lambda);
  VectorXd x(b.size());
  x << direct.y, direct.lambda;

  // Close to the solution the clique eliminations are not backward stable;
  // the factor then serves as a preconditioner on the exact system.
  const double scale = 1.0 + inf_norm(b);
  double res = inf_norm(b - kkt_ * x);
  if (x.allFinite() && res > kDirectResidualTolerance * scale) {
    Eigen::GMRES<SparseMatrix, CliqueTreePreconditioner> gmres;
    gmres.setMaxIterations(kKrylovIterations);
    gmres.set_restart(kKrylovIterations);
    gmres.setTolerance(kKrylovTolerance);
    gmres.compute(kkt_);
    gmres.preconditioner().attach(&*solver_);
    // The preconditioned residual that GMRES monitors can understate the
    // true one when the factor is nearly singular, hence the outer restarts.
    for (int round = 0; round < kKrylovRestarts && res > kDirectResidualTolerance * scale;
         ++round) {
      const VectorXd refined = gmres.solveWithGuess(b, x);
      const double refined_res = inf_norm(b - kkt_ * refined);
      if (!refined.allFinite() || !(refined_res < 0.5 * res)) break;
      x = refined;
      res = refined_res;
    }
  }
  QpSolution sol;
  sol.y = x.head(n);
  sol.lambda = x.tail(x.size() - n);
  ChordalDirection out;
  const int ne = ds_.layout.eta_dim();
  out.d_eta = sol.y.head(ne);
  out.d_z = sol.y.tail(sol.y.size() - ne);
  out.d_lambda = sol.lambda;
  if (!out.d_z.allFinite() || !out.d_lambda.allFinite() || !out.d_eta.allFinite()) {
    throw NumericalBreakdown("non-finite direction from message passing");
  }
  return out;
}

}  // namespace rmpc
