#include "rmpc/ipm.hpp"

#include "rmpc/direction.hpp"
#include "rmpc/errors.hpp"
#include "rmpc/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace rmpc {

const char* to_string(Backend b) { return b == Backend::Dense ? "dense" : "chordal"; }

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::NumericalBreakdown: return "numerical_breakdown";
  }
  return "unknown";
}

Backend parse_backend(const std::string& name) {
  if (name == "dense") return Backend::Dense;
  if (name == "chordal") return Backend::Chordal;
  throw std::invalid_argument("unknown backend '" + name + "' (expected dense or chordal)");
}

double residual_scale(const Rqp& rqp) { return 1.0 + inf_norm(rqp.b) + inf_norm(rqp.d); }

IterationRecord measure(const Rqp& rqp, const Iterate& it, const Residuals& res) {
  const double scale = residual_scale(rqp);
  IterationRecord rec;
  rec.tau = it.tau;
  rec.primal = std::max({inf_norm(res.r_epi), inf_norm(res.r_eq), inf_norm(res.r_ineq)}) / scale;
  rec.dual = std::max({std::abs(res.r_tau), inf_norm(res.r_t), inf_norm(res.r_stat)}) / scale;
  const VectorXd ms = it.mu.cwiseProduct(it.s);
  const VectorXd nw = it.nu.cwiseProduct(it.w);
  rec.comp = std::max(inf_norm(ms), inf_norm(nw)) / scale;
  const auto n = static_cast<double>(ms.size() + nw.size());
  rec.gap = n > 0 ? (ms.sum() + nw.sum()) / n : 0.0;
  return rec;
}

Iterate initial_iterate(const Rqp& rqp) {
  const StageLayout& L = rqp.layout;
  const int N = L.horizon;
  const double t_unit = 1.0 + inf_norm(rqp.d);
  Iterate it;
  it.z = VectorXd::Zero(L.z_dim());
  it.lambda = VectorXd::Zero(rqp.A_eq.rows());
  it.t.resize(L.t_dim());
  for (int j = 0; j < L.scenarios; ++j) {
    for (int k = 1; k <= N; ++k) it.t(L.t_index(j, k)) = (N - k) * t_unit;
  }
  it.tau = N * t_unit + 1.0;
  // Slack of each epigraph row at z = 0. The last row of every chain has
  // t_N = 0 and thus a zero slack, so slacks are clipped below at 1 like w.
  it.s = (-epigraph_apply(L, it.tau, it.t)).cwiseMax(1.0);
  it.w = rqp.d.cwiseMax(1.0);
  it.mu = VectorXd::Ones(L.epi_rows());
  it.nu = VectorXd::Ones(rqp.d.size());
  return it;
}

double step_length(const Iterate& it, const StepDirection& dir, double gamma) {
  double ratio = std::numeric_limits<double>::infinity();
  auto scan = [&](const VectorXd& v, const VectorXd& dv) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (dv(i) < 0.0) ratio = std::min(ratio, -v(i) / dv(i));
    }
  };
  scan(it.mu, dir.d_mu);
  scan(it.nu, dir.d_nu);
  scan(it.s, dir.d_s);
  scan(it.w, dir.d_w);
  return std::min(1.0, gamma * ratio);
}

Iterate advance(const Iterate& it, const StepDirection& dir, double alpha) {
  Iterate next;
  next.tau = it.tau + alpha * dir.d_tau;
  next.t = it.t + alpha * dir.d_t;
  next.z = it.z + alpha * dir.d_z;
  next.mu = it.mu + alpha * dir.d_mu;
  next.nu = it.nu + alpha * dir.d_nu;
  next.lambda = it.lambda + alpha * dir.d_lambda;
  next.s = it.s + alpha * dir.d_s;
  next.w = it.w + alpha * dir.d_w;
  return next;
}

namespace {

constexpr int kRefinementSteps = 3;
constexpr double kRefinementFloor = 1e-15;

// Factorization of one iteration's KKT matrix behind either backend.
class KktBackend {
 public:
  KktBackend(const Rqp& rqp, Backend backend, int workers) : rqp_(rqp), backend_(backend) {
    if (backend == Backend::Chordal) chordal_ = std::make_unique<ChordalKktSolver>(rqp, workers);
  }

  void factorize(const ReducedKkt& red) {
    if (backend_ == Backend::Dense) {
      dense_ = std::make_unique<DenseKktFactor>(rqp_, red);
    } else {
      chordal_->factorize(rqp_, red);
    }
  }

  std::pair<VectorXd, VectorXd> solve(const ReducedKkt& red) const {
    if (backend_ == Backend::Dense) return dense_->solve(red.rhs_z, red.rhs_lambda);
    ChordalDirection d = chordal_->solve(red);
    return {std::move(d.d_z), std::move(d.d_lambda)};
  }

  bool regularized() const { return chordal_ && chordal_->regularized(); }

 private:
  const Rqp& rqp_;
  Backend backend_;
  std::unique_ptr<DenseKktFactor> dense_;
  std::unique_ptr<ChordalKktSolver> chordal_;
};

StepDirection& operator+=(StepDirection& a, const StepDirection& b) {
  a.d_tau += b.d_tau;
  a.d_t += b.d_t;
  a.d_z += b.d_z;
  a.d_mu += b.d_mu;
  a.d_nu += b.d_nu;
  a.d_lambda += b.d_lambda;
  a.d_s += b.d_s;
  a.d_w += b.d_w;
  return a;
}

// Solves J * dir = -res with the current factorization. The eliminated
// system is much worse conditioned than J near convergence (the weights
// mu / s spread over many orders of magnitude), so the result is refined
// against the full linearization.
StepDirection newton_direction(const Rqp& rqp, const Iterate& it, const Residuals& res,
                               const KktBackend& kkt, ReducedKkt& red) {
  update_reduced_rhs(rqp, it, res, red);
  auto [d_z, d_lambda] = kkt.solve(red);
  StepDirection dir = recover_step(rqp, it, res, red, d_z, d_lambda);
  const double floor = kRefinementFloor * (1.0 + max_block_norm(res));
  Residuals e = newton_residual(rqp, it, res, dir);
  double err = max_block_norm(e);
  for (int step = 0; step < kRefinementSteps && err > floor; ++step) {
    update_reduced_rhs(rqp, it, e, red);
    auto [c_z, c_lambda] = kkt.solve(red);
    StepDirection next = dir;
    next += recover_step(rqp, it, e, red, c_z, c_lambda);
    Residuals next_e = newton_residual(rqp, it, res, next);
    const double next_err = max_block_norm(next_e);
    if (!(next_err < err)) break;
    dir = std::move(next);
    e = std::move(next_e);
    err = next_err;
  }
  return dir;
}

bool finite(const Iterate& it) {
  return std::isfinite(it.tau) && it.t.allFinite() && it.z.allFinite() && it.mu.allFinite() &&
         it.nu.allFinite() && it.lambda.allFinite() && it.s.allFinite() && it.w.allFinite();
}

double merit(const IterationRecord& r) { return std::max({r.primal, r.dual, r.comp}); }

}  // namespace

StepDirection compute_direction(const Rqp& rqp, const Iterate& it, double centering,
                                Backend backend, int workers) {
  const Residuals res = kkt_residuals(rqp, it, centering);
  ReducedKkt red = build_reduced_kkt(rqp, it, res, backend == Backend::Dense);
  KktBackend kkt(rqp, backend, workers);
  kkt.factorize(red);
  return newton_direction(rqp, it, res, kkt, red);
}

Solution ipm_solve(const Rqp& rqp, const IpmOptions& options) {
  if (!(options.gamma_ftb > 0.0 && options.gamma_ftb < 1.0) || !(options.tol_feas > 0.0) ||
      !(options.tol_comp > 0.0) || options.max_iter < 0) {
    throw std::invalid_argument("invalid interior-point options");
  }
  const auto start = std::chrono::steady_clock::now();
  validate_rqp(rqp);
  Solution sol;
  Iterate it = initial_iterate(rqp);
  Iterate best = it;
  double best_merit = std::numeric_limits<double>::infinity();
  const double n_comp = static_cast<double>(it.mu.size() + it.nu.size());

  auto finish = [&](SolveStatus status, const Iterate& point, std::string message) {
    sol.status = status;
    sol.iterate = point;
    sol.objective = point.tau;
    sol.per_scenario_costs = scenario_costs(rqp, point.z);
    sol.message = std::move(message);
    sol.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sol;
  };

  std::unique_ptr<KktBackend> kkt;
  try {
    kkt = std::make_unique<KktBackend>(rqp, options.backend, options.workers);
  } catch (const NumericalBreakdown& e) {
    return finish(SolveStatus::NumericalBreakdown, it, e.what());
  }

  for (int iter = 0;; ++iter) {
    const Residuals res = kkt_residuals(rqp, it, 0.0);
    IterationRecord rec = measure(rqp, it, res);
    rec.iteration = iter;
    sol.iterations = iter;
    if (!finite(it) || !std::isfinite(merit(rec))) {
      sol.history.push_back(rec);
      return finish(SolveStatus::NumericalBreakdown, best, "non-finite iterate");
    }
    if (merit(rec) < best_merit) {
      best_merit = merit(rec);
      best = it;
    }
    if (rec.primal <= options.tol_feas && rec.dual <= options.tol_feas &&
        rec.comp <= options.tol_comp) {
      sol.history.push_back(rec);
      return finish(SolveStatus::Optimal, it, "converged");
    }
    if (iter >= options.max_iter) {
      sol.history.push_back(rec);
      return finish(SolveStatus::MaxIter, best, "iteration limit reached");
    }
    if (options.observer) options.observer(iter, it);

    try {
      ReducedKkt red = build_reduced_kkt(rqp, it, res, options.backend == Backend::Dense);
      kkt->factorize(red);
      rec.regularized = kkt->regularized();
      StepDirection dir;
      if (options.use_corrector) {
        const StepDirection aff = newton_direction(rqp, it, res, *kkt, red);
        const double a_aff = step_length(it, aff, 1.0);
        const Iterate trial = advance(it, aff, a_aff);
        const double m_aff = (trial.mu.dot(trial.s) + trial.nu.dot(trial.w)) / n_comp;
        rec.sigma = std::clamp(std::pow(m_aff / rec.gap, 3), 0.0, 1.0);

        Residuals corr = res;
        corr.r_s = (res.r_s + aff.d_mu.cwiseProduct(aff.d_s)).array() - rec.sigma * rec.gap;
        corr.r_w = (res.r_w + aff.d_nu.cwiseProduct(aff.d_w)).array() - rec.sigma * rec.gap;
        dir = newton_direction(rqp, it, corr, *kkt, red);
      } else {
        rec.sigma = 0.1;
        const Residuals centred = kkt_residuals(rqp, it, rec.sigma * rec.gap);
        dir = newton_direction(rqp, it, centred, *kkt, red);
      }
      rec.alpha = step_length(it, dir, options.gamma_ftb);
      it = advance(it, dir, rec.alpha);
    } catch (const NumericalBreakdown& e) {
      sol.history.push_back(rec);
      return finish(SolveStatus::NumericalBreakdown, best, e.what());
    }
    sol.history.push_back(rec);
  }
}

}  // namespace rmpc
