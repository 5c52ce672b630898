#include "rmpc/msgpass.hpp"

#include "rmpc/errors.hpp"
#include "rmpc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kRankThreshold = 1e-12;
constexpr double kPivotTolerance = 1e-12;
constexpr double kScaleFloor = 1e-30;

// Dense elimination of the leading `np` variables of a local problem.
struct Core {
  int np = 0, ns = 0, m = 0, r = 0;
  MatrixXd H;
  MatrixXd T;     // m x m, orthogonal
  MatrixXd Pt;    // np x r, particular solution map of eliminated rows
  MatrixXd mult;  // r x np
  MatrixXd Z;     // np x (np - r), null space of eliminated rows (not orthonormal)
  // Z^T H_pp Z = S^{-1} (S Z^T H_pp Z S) S^{-1} with the scaled matrix factored.
  Eigen::LDLT<MatrixXd> Hr;
  VectorXd Hr_scale;
  MatrixXd gain;   // np x ns
  MatrixXd msg_H;  // ns x ns
  MatrixXd E_trans;

  MatrixXd reduced_solve(const MatrixXd& rhs) const {
    if (Z.cols() == 0) return MatrixXd::Zero(np, rhs.cols());
    const MatrixXd scaled = Hr_scale.asDiagonal() * (Z.transpose() * rhs);
    return Z * (Hr_scale.asDiagonal() * Hr.solve(scaled));
  }
};

Core factor_core(const MatrixXd& H, const MatrixXd& E, int np, double reg) {
  Core c;
  const int n = static_cast<int>(H.rows());
  c.np = np;
  c.ns = n - np;
  c.m = static_cast<int>(E.rows());
  c.H = H;
  c.T = MatrixXd::Identity(c.m, c.m);
  MatrixXd TE = E;
  if (c.m > 0 && np > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(E.leftCols(np));
    qr.setThreshold(kRankThreshold);
    c.r = static_cast<int>(qr.rank());
    c.T = MatrixXd(qr.householderQ()).transpose();
    TE = c.T * E;
    TE.bottomLeftCorner(c.m - c.r, np).setZero();
  }
  const int r = c.r;
  const MatrixXd R1 = TE.topLeftCorner(r, np);
  const MatrixXd F = TE.topRightCorner(r, c.ns);
  const MatrixXd Hpp = H.topLeftCorner(np, np);
  const MatrixXd Hps = H.topRightCorner(np, c.ns);

  // The null space is built in Jacobi-scaled coordinates. An orthonormal
  // basis in the original coordinates would mix variables whose curvatures
  // differ by many orders of magnitude and cancel the small ones in Z^T H Z.
  VectorXd S(np);
  const double hmax = np > 0 ? Hpp.diagonal().cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < np; ++i) {
    const double d = Hpp(i, i);
    S(i) = d > kScaleFloor * hmax && d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
  }
  const MatrixXd Hs = S.asDiagonal() * Hpp * S.asDiagonal();
  MatrixXd Zs;
  if (r > 0) {
    Eigen::HouseholderQR<MatrixXd> q2((R1 * S.asDiagonal()).transpose());
    const MatrixXd Qf = q2.householderQ() * MatrixXd::Identity(np, np);
    const MatrixXd U = q2.matrixQR().topLeftCorner(r, r).triangularView<Eigen::Upper>();
    if (!U.diagonal().allFinite() || U.diagonal().cwiseAbs().minCoeff() == 0.0) {
      throw NumericalBreakdown("eliminated clique rows are rank deficient");
    }
    // R1 Pt = I and Pt^T R1^T = I, so mult recovers the eliminated multipliers.
    c.Pt = S.asDiagonal() *
           Qf.leftCols(r) * U.transpose().triangularView<Eigen::Lower>().solve(
                                MatrixXd::Identity(r, r));
    c.mult = c.Pt.transpose();
    Zs = Qf.rightCols(np - r);
  } else {
    c.mult = MatrixXd::Zero(0, np);
    c.Pt = MatrixXd::Zero(np, 0);
    Zs = MatrixXd::Identity(np, np);
  }
  c.Z = S.asDiagonal() * Zs;

  if (c.Z.cols() > 0) {
    MatrixXd Hr = Zs.transpose() * Hs * Zs;
    Hr = 0.5 * (Hr + Hr.transpose()).eval();
    // Regularization is proportional to each diagonal entry (plus an absolute
    // floor) so that it survives the unit-diagonal scaling below.
    Hr.diagonal() += reg * (Hr.diagonal().cwiseAbs().array() + 1.0).matrix();
    if (!Hr.allFinite() || Hr.diagonal().minCoeff() <= 0.0) {
      throw NumericalBreakdown("reduced clique Hessian has a nonpositive diagonal");
    }
    c.Hr_scale = Hr.diagonal().cwiseSqrt().cwiseInverse();
    c.Hr.compute(c.Hr_scale.asDiagonal() * Hr * c.Hr_scale.asDiagonal());
    const VectorXd D = c.Hr.vectorD();
    if (c.Hr.info() != Eigen::Success || !D.allFinite() || D.minCoeff() <= kPivotTolerance) {
      throw NumericalBreakdown("reduced clique Hessian is not positive definite");
    }
  }

  const MatrixXd base_gain = -c.Pt * F;
  c.gain = base_gain - c.reduced_solve(Hpp * base_gain + Hps);
  MatrixXd Ts(n, c.ns);
  Ts << c.gain, MatrixXd::Identity(c.ns, c.ns);
  c.msg_H = Ts.transpose() * H * Ts;
  c.msg_H = 0.5 * (c.msg_H + c.msg_H.transpose()).eval();
  c.E_trans = TE.bottomRightCorner(c.m - r, c.ns);
  return c;
}

struct CoreRhs {
  VectorXd offset;
  VectorXd msg_g;
  double constant = 0.0;
  VectorXd f_trans;
};

CoreRhs condense_core(const Core& c, const VectorXd& g, const VectorXd& f, double constant) {
  CoreRhs out;
  const VectorXd tf = c.T * f;
  const VectorXd h = tf.head(c.r);
  out.f_trans = tf.tail(c.m - c.r);
  const VectorXd base = c.Pt * h;
  const MatrixXd Hpp = c.H.topLeftCorner(c.np, c.np);
  out.offset = base - c.reduced_solve(Hpp * base - g.head(c.np));
  VectorXd t0 = VectorXd::Zero(c.np + c.ns);
  t0.head(c.np) = out.offset;
  const VectorXd Ht0 = c.H * t0;
  const VectorXd resid = g - Ht0;
  out.msg_g = c.gain.transpose() * resid.head(c.np) + resid.tail(c.ns);
  out.constant = 0.5 * t0.dot(Ht0) - g.dot(t0) + constant;
  return out;
}

std::pair<VectorXd, VectorXd> recover_core(const Core& c, const VectorXd& g,
                                           const VectorXd& offset, const VectorXd& y_s,
                                           const VectorXd& transferred) {
  if (transferred.size() != c.m - c.r) {
    throw std::invalid_argument("transferred multiplier size mismatch");
  }
  VectorXd y_p = c.gain * y_s + offset;
  const VectorXd resid = g.head(c.np) - c.H.topLeftCorner(c.np, c.np) * y_p -
                         c.H.topRightCorner(c.np, c.ns) * y_s;
  VectorXd stacked(c.m);
  stacked << c.mult * resid, transferred;
  return {std::move(y_p), c.T.transpose() * stacked};
}

}  // namespace

std::pair<Message, ParametricRecord> eliminate_clique(const LocalProblem& lp,
                                                      const std::vector<int>& private_pos,
                                                      const std::vector<int>& separator_pos,
                                                      double regularization) {
  const int n = static_cast<int>(lp.vars.size());
  if (static_cast<int>(private_pos.size() + separator_pos.size()) != n || lp.H.rows() != n ||
      lp.H.cols() != n || lp.g.size() != n || lp.E.cols() != n || lp.E.rows() != lp.f.size()) {
    throw std::invalid_argument("eliminate_clique: inconsistent dimensions");
  }
  std::vector<int> idx(private_pos);
  idx.insert(idx.end(), separator_pos.begin(), separator_pos.end());
  std::vector<int> check(idx);
  std::sort(check.begin(), check.end());
  for (int i = 0; i < n; ++i) {
    if (check[i] != i) throw std::invalid_argument("eliminate_clique: positions must partition");
  }
  const MatrixXd H = lp.H(idx, idx);
  const MatrixXd E = lp.E(Eigen::all, idx);
  const VectorXd g = lp.g(idx);
  const int np = static_cast<int>(private_pos.size());
  const Core core = factor_core(H, E, np, regularization);
  const CoreRhs rhs = condense_core(core, g, lp.f, lp.constant);

  Message msg;
  ParametricRecord rec;
  for (int p : private_pos) rec.private_vars.push_back(lp.vars[p]);
  for (int p : separator_pos) rec.separator_vars.push_back(lp.vars[p]);
  msg.vars = rec.separator_vars;
  msg.H = core.msg_H;
  msg.g = rhs.msg_g;
  msg.constant = rhs.constant;
  msg.E = core.E_trans;
  msg.f = rhs.f_trans;
  rec.gain = core.gain;
  rec.offset = rhs.offset;
  rec.row_transform = core.T;
  rec.eliminated_rows = core.r;
  rec.multiplier_map = core.mult;
  rec.H_pp = H.topLeftCorner(np, np);
  rec.H_ps = H.topRightCorner(np, core.ns);
  rec.g_p = g.head(np);
  return {std::move(msg), std::move(rec)};
}

std::pair<VectorXd, VectorXd> apply_record(const ParametricRecord& rec, const VectorXd& y_s,
                                           const VectorXd& transferred_mult) {
  const int m = static_cast<int>(rec.row_transform.rows());
  if (transferred_mult.size() != m - rec.eliminated_rows) {
    throw std::invalid_argument("apply_record: transferred multiplier size mismatch");
  }
  VectorXd y_p = rec.gain * y_s + rec.offset;
  const VectorXd resid = rec.g_p - rec.H_pp * y_p - rec.H_ps * y_s;
  VectorXd stacked(m);
  stacked << rec.multiplier_map * resid, transferred_mult;
  return {std::move(y_p), rec.row_transform.transpose() * stacked};
}

struct CliqueTreeSolver::Clique {
  std::vector<int> vars;  // [private; separator]
  int np = 0;
  int ns = 0;
  std::vector<int> terms;
  std::vector<std::vector<int>> term_pos;
  std::vector<int> term_rows;
  std::vector<std::vector<int>> child_pos;
};

struct CliqueTreeSolver::Factor {
  Core core;
  std::vector<int> child_rows;
};

CliqueTreeSolver::~CliqueTreeSolver() = default;
CliqueTreeSolver::CliqueTreeSolver(CliqueTreeSolver&&) noexcept = default;
CliqueTreeSolver& CliqueTreeSolver::operator=(CliqueTreeSolver&&) noexcept = default;

CliqueTreeSolver::CliqueTreeSolver(const CliqueTree& tree, const std::vector<Supernode>& nodes,
                                   const std::vector<int>& offsets,
                                   const std::vector<Term>& terms, int num_rows, int workers)
    : tree_(tree), num_rows_(num_rows), workers_(std::max(1, workers)) {
  if (offsets.size() != nodes.size()) {
    throw std::invalid_argument("CliqueTreeSolver: one offset per supernode required");
  }
  for (const auto& n : nodes) num_vars_ += n.dim;
  if (tree_.assignment.size() != terms.size()) {
    throw std::invalid_argument("CliqueTreeSolver: terms are not assigned to cliques");
  }
  auto scalars = [&](const std::vector<int>& supernodes) {
    std::vector<int> out;
    for (int v : supernodes) {
      for (int i = 0; i < nodes[v].dim; ++i) out.push_back(offsets[v] + i);
    }
    return out;
  };

  const int nc = tree_.size();
  cliques_.resize(nc);
  factors_.resize(nc);
  std::vector<int> local(num_vars_, -1);
  std::vector<int> row_owner(num_rows_, -1);
  for (int c = 0; c < nc; ++c) {
    Clique& q = cliques_[c];
    const std::vector<int> priv = scalars(tree_.private_nodes(c));
    const std::vector<int> sep = scalars(tree_.separators[c]);
    q.vars = priv;
    q.vars.insert(q.vars.end(), sep.begin(), sep.end());
    q.np = static_cast<int>(priv.size());
    q.ns = static_cast<int>(sep.size());
  }
  for (int t = 0; t < static_cast<int>(terms.size()); ++t) {
    cliques_[tree_.assignment[t]].terms.push_back(t);
  }
  for (int c = 0; c < nc; ++c) {
    Clique& q = cliques_[c];
    for (int i = 0; i < static_cast<int>(q.vars.size()); ++i) local[q.vars[i]] = i;
    for (int t : q.terms) {
      std::vector<int> pos;
      for (int s : scalars(terms[t].scope)) {
        if (local[s] < 0) throw std::logic_error("term '" + terms[t].name + "' not covered");
        pos.push_back(local[s]);
      }
      if (terms[t].quadratic.size() > 0 &&
          (terms[t].quadratic.rows() != static_cast<int>(pos.size()) ||
           terms[t].quadratic.cols() != static_cast<int>(pos.size()))) {
        throw std::invalid_argument("term '" + terms[t].name + "' quadratic size mismatch");
      }
      q.term_pos.push_back(std::move(pos));
      for (int row : terms[t].eq_rows) {
        if (row < 0 || row >= num_rows_ || row_owner[row] >= 0) {
          throw std::invalid_argument("equality row assigned twice or out of range");
        }
        row_owner[row] = c;
        q.term_rows.push_back(row);
      }
    }
    for (int child : tree_.children[c]) {
      std::vector<int> pos;
      const Clique& ch = cliques_[child];
      for (int i = ch.np; i < ch.np + ch.ns; ++i) {
        if (local[ch.vars[i]] < 0) throw std::logic_error("separator not contained in parent");
        pos.push_back(local[ch.vars[i]]);
      }
      q.child_pos.push_back(std::move(pos));
    }
    for (int v : q.vars) local[v] = -1;
  }
  for (int row = 0; row < num_rows_; ++row) {
    if (row_owner[row] < 0) throw std::invalid_argument("equality row not carried by any term");
  }
  std::vector<int> covered(num_vars_, 0);
  for (const auto& q : cliques_) {
    for (int i = 0; i < q.np; ++i) ++covered[q.vars[i]];
  }
  for (int v = 0; v < num_vars_; ++v) {
    if (covered[v] != 1) throw std::invalid_argument("variable not private to exactly one clique");
  }

  std::vector<int> height(nc, 0);
  for (int c : tree_.postorder) {
    for (int ch : tree_.children[c]) height[c] = std::max(height[c], height[ch] + 1);
  }
  const int max_h = nc ? *std::max_element(height.begin(), height.end()) : 0;
  const int max_d = nc ? *std::max_element(tree_.depth.begin(), tree_.depth.end()) : 0;
  by_height_.assign(max_h + 1, {});
  by_depth_.assign(max_d + 1, {});
  for (int c = 0; c < nc; ++c) {
    by_height_[height[c]].push_back(c);
    by_depth_[tree_.depth[c]].push_back(c);
  }
}

std::array<int, 4> CliqueTreeSolver::clique_dims(int c) const {
  const Core& core = factors_.at(c).core;
  return {cliques_[c].np, cliques_[c].ns, core.m, core.r};
}

void CliqueTreeSolver::factor_clique(int c, const std::vector<Term>& terms,
                                     double regularization) {
  const Clique& q = cliques_[c];
  const int n = q.np + q.ns;
  MatrixXd H = MatrixXd::Zero(n, n);
  int m = static_cast<int>(q.term_rows.size());
  std::vector<int> child_rows;
  for (int child : tree_.children[c]) {
    const Core& cc = factors_[child].core;
    child_rows.push_back(cc.m - cc.r);
    m += cc.m - cc.r;
  }
  MatrixXd E = MatrixXd::Zero(m, n);
  int row = 0;
  for (std::size_t k = 0; k < q.terms.size(); ++k) {
    const Term& t = terms[q.terms[k]];
    const auto& pos = q.term_pos[k];
    if (t.quadratic.size() > 0) H(pos, pos) += t.quadratic;
    const int rows = static_cast<int>(t.eq_rows.size());
    if (rows > 0) {
      if (t.eq_matrix.rows() != rows || t.eq_matrix.cols() != static_cast<int>(pos.size())) {
        throw std::invalid_argument("term '" + t.name + "' equality block size mismatch");
      }
      E(Eigen::seqN(row, rows), pos) = t.eq_matrix;
    }
    row += rows;
  }
  for (std::size_t k = 0; k < tree_.children[c].size(); ++k) {
    const Core& cc = factors_[tree_.children[c][k]].core;
    const auto& pos = q.child_pos[k];
    H(pos, pos) += cc.msg_H;
    if (child_rows[k] > 0) E(Eigen::seqN(row, child_rows[k]), pos) = cc.E_trans;
    row += child_rows[k];
  }
  factors_[c].core = factor_core(H, E, q.np, regularization);
  factors_[c].child_rows = std::move(child_rows);
}

void CliqueTreeSolver::factorize(const std::vector<Term>& terms, double regularization) {
  factorized_ = false;
  for (const auto& level : by_height_) {
    parallel_for(static_cast<int>(level.size()), workers_,
                 [&](int i) { factor_clique(level[i], terms, regularization); });
  }
  for (int c = 0; c < tree_.size(); ++c) {
    if (tree_.parent[c] < 0 && factors_[c].core.m != factors_[c].core.r) {
      throw NumericalBreakdown("equality constraints are linearly dependent");
    }
  }
  factorized_ = true;
}

CliqueTreeSolver::Upward CliqueTreeSolver::upward_pass(const VectorXd& g,
                                                        const VectorXd& f) const {
  if (!factorized_) throw std::logic_error("CliqueTreeSolver: factorize first");
  if (g.size() != num_vars_ || f.size() != num_rows_) {
    throw std::invalid_argument("CliqueTreeSolver: right-hand side size mismatch");
  }
  const int nc = tree_.size();
  Upward up;
  up.offsets.resize(nc);
  up.msg_g.resize(nc);
  up.msg_constant.assign(nc, 0.0);
  up.msg_f.resize(nc);
  up.local_g.resize(nc);
  for (const auto& level : by_height_) {
    parallel_for(static_cast<int>(level.size()), workers_, [&](int i) {
      const int c = level[i];
      const Clique& q = cliques_[c];
      const Factor& fac = factors_[c];
      VectorXd gl = VectorXd::Zero(q.np + q.ns);
      for (int k = 0; k < q.np; ++k) gl(k) = g(q.vars[k]);
      VectorXd fl(fac.core.m);
      int row = 0;
      for (int r : q.term_rows) fl(row++) = f(r);
      double constant = 0.0;
      for (std::size_t k = 0; k < tree_.children[c].size(); ++k) {
        const int child = tree_.children[c][k];
        gl(q.child_pos[k]) += up.msg_g[child];
        constant += up.msg_constant[child];
        fl.segment(row, fac.child_rows[k]) = up.msg_f[child];
        row += fac.child_rows[k];
      }
      CoreRhs rhs = condense_core(fac.core, gl, fl, constant);
      up.offsets[c] = std::move(rhs.offset);
      up.msg_g[c] = std::move(rhs.msg_g);
      up.msg_constant[c] = rhs.constant;
      up.msg_f[c] = std::move(rhs.f_trans);
      up.local_g[c] = std::move(gl);
    });
  }
  for (int c = 0; c < nc; ++c) {
    if (tree_.parent[c] < 0) up.value += up.msg_constant[c];
  }
  return up;
}

QpSolution CliqueTreeSolver::downward_pass(const Upward& up) const {
  const int nc = tree_.size();
  QpSolution sol;
  sol.y = VectorXd::Zero(num_vars_);
  sol.lambda = VectorXd::Zero(num_rows_);
  sol.value = up.value;
  std::vector<VectorXd> transferred(nc);
  for (int c = 0; c < nc; ++c) {
    if (tree_.parent[c] < 0) transferred[c] = VectorXd::Zero(0);
  }
  for (const auto& level : by_depth_) {
    parallel_for(static_cast<int>(level.size()), workers_, [&](int i) {
      const int c = level[i];
      const Clique& q = cliques_[c];
      const Factor& fac = factors_[c];
      VectorXd y_s(q.ns);
      for (int k = 0; k < q.ns; ++k) y_s(k) = sol.y(q.vars[q.np + k]);
      auto [y_p, mult] = recover_core(fac.core, up.local_g[c], up.offsets[c], y_s, transferred[c]);
      for (int k = 0; k < q.np; ++k) sol.y(q.vars[k]) = y_p(k);
      int row = 0;
      for (int r : q.term_rows) sol.lambda(r) = mult(row++);
      for (std::size_t k = 0; k < tree_.children[c].size(); ++k) {
        transferred[tree_.children[c][k]] = mult.segment(row, fac.child_rows[k]);
        row += fac.child_rows[k];
      }
    });
  }
  return sol;
}

std::vector<int> supernode_offsets(const std::vector<Supernode>& nodes) {
  std::vector<int> out(nodes.size());
  int off = 0;
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    out[v] = off;
    off += nodes[v].dim;
  }
  return out;
}

QpSolution solve_terms(const CliqueTree& tree, const std::vector<Supernode>& nodes,
                       const std::vector<int>& offsets, const std::vector<Term>& terms,
                       int num_rows, int workers) {
  CliqueTreeSolver solver(tree, nodes, offsets, terms, num_rows, workers);
  solver.factorize(terms);
  VectorXd g = VectorXd::Zero(solver.num_vars());
  VectorXd f = VectorXd::Zero(num_rows);
  for (const Term& t : terms) {
    if (t.linear.size() > 0) {
      int k = 0;
      for (int v : t.scope) {
        for (int i = 0; i < nodes[v].dim; ++i) g(offsets[v] + i) += t.linear(k++);
      }
    }
    for (std::size_t r = 0; r < t.eq_rows.size(); ++r) f(t.eq_rows[r]) = t.eq_rhs(r);
  }
  return solver.solve(g, f);
}

}  // namespace rmpc
