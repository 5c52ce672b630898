#include "rmpc/oracle.hpp"

#include "rmpc/errors.hpp"
#include "rmpc/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

namespace rmpc {

DenseKktFactor::DenseKktFactor(const Rqp& rqp, const ReducedKkt& red) {
  if (!red.H) throw std::invalid_argument("dense KKT solve needs the dense reduced Hessian");
  const MatrixXd A = MatrixXd(rqp.A_eq);
  nz_ = static_cast<int>(red.H->rows());
  nl_ = static_cast<int>(A.rows());
  if (A.cols() != nz_) throw std::invalid_argument("equality matrix does not match H");
  K_ = MatrixXd::Zero(nz_ + nl_, nz_ + nl_);
  K_.topLeftCorner(nz_, nz_) = *red.H;
  K_.topRightCorner(nz_, nl_) = A.transpose();
  K_.bottomLeftCorner(nl_, nz_) = A;
  // Symmetric equilibration so that the conditioning test is not fooled by
  // the wide spread of barrier weights near convergence.
  scale_ = VectorXd::Ones(nz_ + nl_);
  MatrixXd Ks = K_;
  for (int pass = 0; pass < 10; ++pass) {
    const VectorXd row_max = Ks.cwiseAbs().rowwise().maxCoeff();
    if ((row_max.array() - 1.0).abs().maxCoeff() < 1e-3) break;
    const VectorXd d = row_max.unaryExpr([](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 1.0; });
    Ks = d.asDiagonal() * Ks * d.asDiagonal();
    scale_ = scale_.cwiseProduct(d);
  }
  lu_.compute(Ks);
  rcond_ = lu_.rcond();
  if (!(rcond_ > std::numeric_limits<double>::epsilon()) || !K_.allFinite()) {
    throw NumericalBreakdown("reduced KKT matrix is numerically singular");
  }
}

std::pair<VectorXd, VectorXd> DenseKktFactor::solve(const VectorXd& rhs_z,
                                                    const VectorXd& rhs_lambda) const {
  VectorXd rhs(nz_ + nl_);
  rhs << rhs_z, rhs_lambda;
  auto scaled_solve = [&](const VectorXd& b) {
    return VectorXd(scale_.cwiseProduct(lu_.solve(scale_.cwiseProduct(b))));
  };
  VectorXd x = scaled_solve(rhs);
  // One step of iterative refinement.
  x += scaled_solve(rhs - K_ * x);
  if (!x.allFinite()) throw NumericalBreakdown("non-finite dense KKT solution");
  return {x.head(nz_), x.tail(nl_)};
}

std::pair<VectorXd, VectorXd> dense_kkt_solve(const Rqp& rqp, const ReducedKkt& red) {
  return DenseKktFactor(rqp, red).solve(red.rhs_z, red.rhs_lambda);
}

std::pair<VectorXd, VectorXd> dense_kkt_solve(const MatrixXd& H, const MatrixXd& A,
                                              const VectorXd& rhs_z, const VectorXd& rhs_lambda) {
  const auto nz = H.rows();
  const auto nl = A.rows();
  MatrixXd K = MatrixXd::Zero(nz + nl, nz + nl);
  K.topLeftCorner(nz, nz) = H;
  K.topRightCorner(nz, nl) = A.transpose();
  K.bottomLeftCorner(nl, nz) = A;
  Eigen::PartialPivLU<MatrixXd> lu(K);
  if (!(lu.rcond() > std::numeric_limits<double>::epsilon())) {
    throw NumericalBreakdown("KKT matrix is numerically singular");
  }
  VectorXd rhs(nz + nl);
  rhs << rhs_z, rhs_lambda;
  VectorXd x = lu.solve(rhs);
  x += lu.solve(rhs - K * x);
  return {x.head(nz), x.tail(nl)};
}

namespace {

constexpr double kFeasTol = 1e-9;
// Weight left on a scenario whose cost is below tau; keeps the stationarity
// system nonsingular in that scenario's variables.
constexpr double kMinorWeight = 1e-10;

struct Candidate {
  VectorXd z;
  VectorXd lambda;
  VectorXd nu_active;
};

MatrixXd scenario_hessian(const Rqp& rqp, int j) {
  const StageLayout& L = rqp.layout;
  MatrixXd H = MatrixXd::Zero(L.z_dim(), L.z_dim());
  for (int k = 0; k <= L.horizon; ++k) {
    H.block(L.z_offset(j, k), L.z_offset(j, k), L.stage_dim(k), L.stage_dim(k)) = rqp.Q(j, k);
  }
  return H;
}

}  // namespace

BruteForceResult active_set_bruteforce(const Rqp& rqp) {
  validate_rqp(rqp);
  const StageLayout& L = rqp.layout;
  const int M = L.scenarios;
  const int p = static_cast<int>(rqp.G_ineq.rows());
  if (M > 2) throw std::invalid_argument("brute-force oracle supports at most two scenarios");
  if (L.epi_rows() + p > kBruteForceRowCap) {
    throw std::invalid_argument("brute-force oracle is limited to " +
                                std::to_string(kBruteForceRowCap) + " inequality rows");
  }
  const MatrixXd A = MatrixXd(rqp.A_eq);
  const MatrixXd G = MatrixXd(rqp.G_ineq);
  const int nz = L.z_dim();
  const int nl = static_cast<int>(A.rows());
  std::vector<MatrixXd> Hs;
  for (int j = 0; j < M; ++j) Hs.push_back(scenario_hessian(rqp, j));

  auto solve_weighted = [&](const std::vector<double>& theta,
                            const std::vector<int>& S) -> std::optional<Candidate> {
    const int na = static_cast<int>(S.size());
    const int n = nz + nl + na;
    MatrixXd K = MatrixXd::Zero(n, n);
    for (int j = 0; j < M; ++j) K.topLeftCorner(nz, nz) += theta[j] * Hs[j];
    K.block(0, nz, nz, nl) = A.transpose();
    K.block(nz, 0, nl, nz) = A;
    VectorXd rhs = VectorXd::Zero(n);
    rhs.segment(nz, nl) = rqp.b;
    for (int i = 0; i < na; ++i) {
      K.block(0, nz + nl + i, nz, 1) = G.row(S[i]).transpose();
      K.block(nz + nl + i, 0, 1, nz) = G.row(S[i]);
      rhs(nz + nl + i) = rqp.d(S[i]);
    }
    Eigen::FullPivLU<MatrixXd> lu(K);
    const VectorXd x = lu.solve(rhs);
    if (!x.allFinite() || (K * x - rhs).lpNorm<Eigen::Infinity>() >
                              1e-10 * (1.0 + rhs.lpNorm<Eigen::Infinity>() +
                                       K.lpNorm<Eigen::Infinity>() * x.lpNorm<Eigen::Infinity>())) {
      return std::nullopt;
    }
    return Candidate{x.head(nz), x.segment(nz, nl), x.tail(na)};
  };

  BruteForceResult best;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<double> best_theta;
  Candidate best_cand;

  auto consider = [&](const std::vector<int>& S, const std::vector<double>& theta,
                      const Candidate& c, const std::vector<int>& attained) {
    ++best.candidates;
    const VectorXd slack = rqp.d - G * c.z;
    if (p > 0 && slack.minCoeff() < -kFeasTol * (1.0 + inf_norm(rqp.d))) return;
    if (c.nu_active.size() > 0 && c.nu_active.minCoeff() < -kFeasTol) return;
    const VectorXd J = scenario_costs(rqp, c.z);
    const double value = J.maxCoeff();
    const double tol = kFeasTol * (1.0 + std::abs(value));
    for (int j : attained) {
      if (J(j) < value - tol) return;
    }
    const bool better = value < best_value - 1e-12 ||
                        (std::abs(value - best_value) <= 1e-12 &&
                         std::lexicographical_compare(S.begin(), S.end(), best.active_rows.begin(),
                                                      best.active_rows.end()));
    if (!better) return;
    best_value = value;
    best.feasible = true;
    best.active_rows = S;
    best.active_scenarios = attained;
    best_theta = theta;
    best_cand = c;
  };

  for (long mask = 0; mask < (1L << p); ++mask) {
    std::vector<int> S;
    for (int i = 0; i < p; ++i) {
      if (mask & (1L << i)) S.push_back(i);
    }
    if (static_cast<int>(S.size()) + nl > nz) continue;
    if (M == 1) {
      if (auto c = solve_weighted({1.0}, S)) consider(S, {1.0}, *c, {0});
      continue;
    }
    // Only one scenario attains tau: the other keeps a vanishing weight.
    const std::vector<double> lo{kMinorWeight, 1.0 - kMinorWeight};
    const std::vector<double> hi{1.0 - kMinorWeight, kMinorWeight};
    const auto c_lo = solve_weighted(lo, S);
    const auto c_hi = solve_weighted(hi, S);
    if (c_lo) consider(S, lo, *c_lo, {1});
    if (c_hi) consider(S, hi, *c_hi, {0});
    if (!c_lo || !c_hi) continue;

    // Both attain tau: J_1 - J_2 is nonincreasing in the weight of scenario 1.
    auto diff = [&](const Candidate& c) {
      const VectorXd J = scenario_costs(rqp, c.z);
      return J(0) - J(1);
    };
    double a = lo[0], b = hi[0];
    double fa = diff(*c_lo), fb = diff(*c_hi);
    if (fa < 0.0 || fb > 0.0) continue;
    std::optional<Candidate> root;
    double theta = a;
    for (int iter = 0; iter < 200; ++iter) {
      theta = 0.5 * (a + b);
      root = solve_weighted({theta, 1.0 - theta}, S);
      if (!root) break;
      const double f = diff(*root);
      if (f > 0.0) {
        a = theta;
        fa = f;
      } else {
        b = theta;
        fb = f;
      }
      if (f == 0.0 || b - a < 1e-15) break;
    }
    if (root) consider(S, {theta, 1.0 - theta}, *root, {0, 1});
  }

  if (!best.feasible) return best;

  // Full primal-dual point.
  Iterate& pt = best.point;
  const VectorXd J = scenario_costs(rqp, best_cand.z);
  pt.z = best_cand.z;
  pt.tau = J.maxCoeff();
  pt.t = VectorXd::Zero(L.t_dim());
  pt.s = VectorXd::Zero(L.epi_rows());
  pt.mu = VectorXd::Zero(L.epi_rows());
  for (int j = 0; j < M; ++j) {
    double tail = 0.0;
    for (int k = L.horizon; k >= 1; --k) {
      const auto zk = pt.z.segment(L.z_offset(j, k), L.stage_dim(k));
      tail += 0.5 * zk.dot(rqp.Q(j, k) * zk);
      pt.t(L.t_index(j, k)) = tail;
    }
    pt.s(L.epi_index(j, 0)) = pt.tau - J(j);
    for (int k = 0; k <= L.horizon; ++k) pt.mu(L.epi_index(j, k)) = best_theta[j];
  }
  pt.lambda = best_cand.lambda;
  pt.nu = VectorXd::Zero(p);
  for (std::size_t i = 0; i < best.active_rows.size(); ++i) {
    pt.nu(best.active_rows[i]) = best_cand.nu_active(static_cast<Eigen::Index>(i));
  }
  pt.w = rqp.d - G * pt.z;
  best.tau = pt.tau;
  best.t = pt.t;
  best.z = pt.z;
  return best;
}

const std::array<const char*, 8>& VerificationReport::block_names() {
  static const std::array<const char*, 8> names{
      "tau_stationarity", "t_stationarity", "z_stationarity",     "epigraph_rows",
      "equality_rows",    "inequality_rows", "epigraph_complementarity",
      "inequality_complementarity"};
  return names;
}

VerificationReport verify_solution(const Rqp& rqp, const Iterate& x,
                                   const VerificationTolerances& tol) {
  VerificationReport rep;
  const StageLayout& L = rqp.layout;
  const int M = L.scenarios;
  const int N = L.horizon;
  const MatrixXd A = MatrixXd(rqp.A_eq);
  const MatrixXd G = MatrixXd(rqp.G_ineq);
  const double scale = 1.0 + rqp.b.cwiseAbs().maxCoeff() +
                       (rqp.d.size() ? rqp.d.cwiseAbs().maxCoeff() : 0.0);
  auto norm = [](const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };

  double mu_first = 0.0;
  VectorXd e_t(M * N);
  VectorXd stat = A.transpose() * x.lambda + G.transpose() * x.nu;
  VectorXd epi(M * (N + 1));
  VectorXd J = VectorXd::Zero(M);
  for (int j = 0; j < M; ++j) {
    const int row0 = j * (N + 1);
    mu_first += x.mu(row0);
    for (int k = 0; k <= N; ++k) {
      const int zoff = j * (N * (L.nx + L.nu) + L.nx) + k * (L.nx + L.nu);
      const int n = k < N ? L.nx + L.nu : L.nx;
      const VectorXd zk = x.z.segment(zoff, n);
      const MatrixXd& Qk = k < N ? rqp.Q_blocks[row0 + k] : rqp.Q_blocks[row0 + N];
      const double cost = 0.5 * zk.dot(Qk * zk);
      J(j) += cost;
      stat.segment(zoff, n) += x.mu(row0 + k) * (Qk * zk);
      // Row k: cost_k + t_{k+1} - t_k <= 0 with t_0 = tau and t_{N+1} = 0.
      const double t_here = k == 0 ? x.tau : x.t(j * N + k - 1);
      const double t_next = k < N ? x.t(j * N + k) : 0.0;
      epi(row0 + k) = cost + t_next - t_here + x.s(row0 + k);
      if (k >= 1) e_t(j * N + k - 1) = x.mu(row0 + k - 1) - x.mu(row0 + k);
    }
  }
  const VectorXd eq = A * x.z - rqp.b;
  const VectorXd ineq = G * x.z + x.w - rqp.d;
  rep.kkt_block_norms = {std::abs(1.0 - mu_first) / scale,
                         norm(e_t) / scale,
                         norm(stat) / scale,
                         norm(epi) / scale,
                         norm(eq) / scale,
                         norm(ineq) / scale,
                         norm(x.mu.cwiseProduct(x.s)) / scale,
                         norm(x.nu.cwiseProduct(x.w)) / scale};
  double most_negative = 0.0;
  for (const VectorXd* v : {&x.mu, &x.nu, &x.s, &x.w}) {
    if (v->size()) most_negative = std::min(most_negative, v->minCoeff());
  }
  rep.sign_violation = -most_negative;
  rep.tau_gap = x.tau - J.maxCoeff();

  for (const EqualityGroup& g : rqp.eq_groups) {
    if (g.kind != EqualityGroup::Kind::NonAnticipativity) continue;
    for (int i = 0; i < L.nu; ++i) {
      const double a = x.z(g.scenario * (N * (L.nx + L.nu) + L.nx) + g.stage * (L.nx + L.nu) +
                           L.nx + i);
      const double b = x.z(g.partner * (N * (L.nx + L.nu) + L.nx) + g.stage * (L.nx + L.nu) +
                           L.nx + i);
      rep.nonanticipativity_norm = std::max(rep.nonanticipativity_norm, std::abs(a - b));
    }
  }

  rep.pass = rep.sign_violation <= tol.kkt && std::abs(rep.tau_gap) <= tol.tau_gap &&
             rep.nonanticipativity_norm <= tol.nonanticipativity;
  for (double v : rep.kkt_block_norms) rep.pass = rep.pass && v <= tol.kkt;
  return rep;
}

VerificationReport verify_solution(const Rqp& rqp, const Solution& sol,
                                   const VerificationTolerances& tol) {
  return verify_solution(rqp, sol.iterate, tol);
}

}  // namespace rmpc
