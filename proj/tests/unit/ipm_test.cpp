#include "instances.hpp"
#include "rmpc/ipm.hpp"
#include "rmpc/oracle.hpp"
#include "rmpc/problem_io.hpp"

#include <gtest/gtest.h>

using namespace rmpc;
using rmpc::testing::random_system;
using rmpc::testing::structured_system;
using rmpc::testing::tiny_system;
using rmpc::testing::to_rqp;

namespace {

Rqp data_rqp(const std::string& name) {
  return to_rqp(parse_problem(std::string(RMPC_DATA_DIR) + "/" + name));
}

StepDirection zero_direction(const Iterate& it) {
  StepDirection d;
  d.d_t = VectorXd::Zero(it.t.size());
  d.d_z = VectorXd::Zero(it.z.size());
  d.d_mu = VectorXd::Zero(it.mu.size());
  d.d_nu = VectorXd::Zero(it.nu.size());
  d.d_lambda = VectorXd::Zero(it.lambda.size());
  d.d_s = VectorXd::Zero(it.s.size());
  d.d_w = VectorXd::Zero(it.w.size());
  return d;
}

// Nominal problem with a unit input box.
UncertainSystem unit_box_system(int horizon) {
  std::mt19937_64 rng(71);
  UncertainSystem sys = structured_system(rng, 2, 1, horizon, {1});
  for (auto& e : sys.e) e.setOnes();
  return sys;
}

}  // namespace

TEST(Ipm, StepLengthIsOneForNonnegativeSteps) {
  const Iterate it = initial_iterate(data_rqp("toy2.json"));
  StepDirection d = zero_direction(it);
  d.d_mu.setOnes();
  d.d_w.setConstant(2.0);
  EXPECT_EQ(step_length(it, d, 0.99), 1.0);
}

TEST(Ipm, StepLengthStopsShortOfBoundary) {
  Iterate it = initial_iterate(data_rqp("toy2.json"));
  it.s.setOnes();
  StepDirection d = zero_direction(it);
  d.d_s(0) = -2.0;
  EXPECT_DOUBLE_EQ(step_length(it, d, 0.99), 0.495);
}

TEST(Ipm, RandomStepsKeepPositivity) {
  const Rqp rqp = data_rqp("fig2.json");
  std::mt19937_64 rng(72);
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_real_distribution<double> pos(0.01, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Iterate it = initial_iterate(rqp);
    StepDirection d = zero_direction(it);
    for (VectorXd* v : {&it.mu, &it.nu, &it.s, &it.w}) {
      for (int i = 0; i < v->size(); ++i) (*v)(i) = pos(rng);
    }
    for (VectorXd* v : {&d.d_mu, &d.d_nu, &d.d_s, &d.d_w}) {
      for (int i = 0; i < v->size(); ++i) (*v)(i) = n(rng);
    }
    const double alpha = step_length(it, d, 0.995);
    ASSERT_GT(alpha, 0.0);
    ASSERT_LE(alpha, 1.0);
    const Iterate next = advance(it, d, alpha);
    ASSERT_GT(next.mu.minCoeff(), 0.0);
    ASSERT_GT(next.nu.minCoeff(), 0.0);
    ASSERT_GT(next.s.minCoeff(), 0.0);
    ASSERT_GT(next.w.minCoeff(), 0.0);
  }
}

TEST(Ipm, InitialIterateIsInterior) {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 30; ++trial) {
    const Iterate it = initial_iterate(to_rqp(random_system(rng)));
    EXPECT_GT(it.mu.minCoeff(), 0.0);
    EXPECT_GT(it.nu.minCoeff(), 0.0);
    EXPECT_GT(it.s.minCoeff(), 0.0);
    EXPECT_GT(it.w.minCoeff(), 0.0);
    EXPECT_EQ(inf_norm(it.z), 0.0);
    EXPECT_EQ(inf_norm(it.lambda), 0.0);
  }
}

TEST(Ipm, InitialEpigraphValuesOnUnitScaledInstance) {
  const int N = 4;
  const Rqp rqp = to_rqp(unit_box_system(N));
  ASSERT_EQ(inf_norm(rqp.d), 1.0);
  const Iterate it = initial_iterate(rqp);
  EXPECT_EQ(it.tau, 2.0 * N + 1.0);
  for (int k = 1; k <= N; ++k) EXPECT_EQ(it.t(rqp.layout.t_index(0, k)), 2.0 * (N - k));
}

TEST(Ipm, ComplementarityMeasureTwoWays) {
  const Rqp rqp = data_rqp("fig2.json");
  Iterate it = initial_iterate(rqp);
  std::mt19937_64 rng(74);
  std::uniform_real_distribution<double> pos(0.1, 3.0);
  for (VectorXd* v : {&it.mu, &it.nu, &it.s, &it.w}) {
    for (int i = 0; i < v->size(); ++i) (*v)(i) = pos(rng);
  }
  double sum = 0.0;
  for (int i = 0; i < it.mu.size(); ++i) sum += it.mu(i) * it.s(i);
  for (int i = 0; i < it.nu.size(); ++i) sum += it.nu(i) * it.w(i);
  const double expected = sum / static_cast<double>(it.mu.size() + it.nu.size());
  const IterationRecord rec = measure(rqp, it, kkt_residuals(rqp, it, 0.0));
  EXPECT_NEAR(rec.gap, expected, 1e-14 * expected);
}

TEST(Ipm, TwoScenarioToyIsTightAndPinned) {
  const Rqp rqp = data_rqp("toy2.json");
  const Solution sol = ipm_solve(rqp);
  ASSERT_EQ(sol.status, SolveStatus::Optimal) << sol.message;
  const double worst = sol.per_scenario_costs.maxCoeff();
  EXPECT_LE(std::abs(sol.objective - worst), 1e-6);
  // Reference value from the active-set enumeration.
  EXPECT_NEAR(sol.objective, 1.175, 1e-6);
  const BruteForceResult bf = active_set_bruteforce(rqp);
  ASSERT_TRUE(bf.feasible);
  EXPECT_NEAR(sol.objective, bf.tau, 1e-6 * std::max(1.0, bf.tau));
}

TEST(Ipm, SingleScenarioMatchesBruteForce) {
  std::mt19937_64 rng(75);
  int checked = 0;
  while (checked < 5) {
    UncertainSystem sys = tiny_system(rng);
    if (rmpc::testing::scenario_count(sys) != 1) continue;
    const Rqp rqp = to_rqp(sys);
    const Solution sol = ipm_solve(rqp);
    ASSERT_EQ(sol.status, SolveStatus::Optimal);
    const BruteForceResult bf = active_set_bruteforce(rqp);
    ASSERT_TRUE(bf.feasible);
    EXPECT_NEAR(sol.objective, bf.tau, 1e-6 * std::max(1.0, std::abs(bf.tau)));
    ++checked;
  }
}

TEST(Ipm, EmptyFeasibleSetIsNotOptimal) {
  std::mt19937_64 rng(76);
  UncertainSystem sys = structured_system(rng, 1, 1, 2, {2});
  sys.C = MatrixXd::Zero(2, 1);
  sys.D = (MatrixXd(2, 1) << 1, -1).finished();
  sys.e.assign(2, (VectorXd(2) << -1, -1).finished());  // u <= -1 and u >= 1
  IpmOptions opt;
  opt.max_iter = 60;
  EXPECT_NE(ipm_solve(to_rqp(sys), opt).status, SolveStatus::Optimal);
}

TEST(Ipm, IterationLimitIsReported) {
  IpmOptions opt;
  opt.max_iter = 1;
  const Solution sol = ipm_solve(data_rqp("fig2.json"), opt);
  EXPECT_EQ(sol.status, SolveStatus::MaxIter);
  EXPECT_EQ(sol.iterations, 1);
}

TEST(Ipm, OptimalSolutionMeetsTolerances) {
  for (const char* name : {"toy2.json", "fig2.json", "nominal.json"}) {
    const Rqp rqp = data_rqp(name);
    for (Backend b : {Backend::Dense, Backend::Chordal}) {
      IpmOptions opt;
      opt.backend = b;
      const Solution sol = ipm_solve(rqp, opt);
      ASSERT_EQ(sol.status, SolveStatus::Optimal) << name;
      const IterationRecord rec = measure(rqp, sol.iterate, kkt_residuals(rqp, sol.iterate, 0.0));
      EXPECT_LE(rec.primal, opt.tol_feas);
      EXPECT_LE(rec.dual, opt.tol_feas);
      EXPECT_LE(rec.comp, opt.tol_comp);
      EXPECT_EQ(static_cast<int>(sol.history.size()), sol.iterations + 1);
    }
  }
}

TEST(Ipm, PlainPathFollowingConverges) {
  IpmOptions opt;
  opt.use_corrector = false;
  const Solution sol = ipm_solve(data_rqp("toy2.json"), opt);
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.objective, 1.175, 1e-6);
}

TEST(Ipm, BackendsTrackEachOther) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 15; ++trial) {
    const Rqp rqp = to_rqp(random_system(rng));
    std::vector<double> dense_tau, chordal_tau;
    IpmOptions opt;
    opt.observer = [&](int, const Iterate& it) { dense_tau.push_back(it.tau); };
    const Solution a = ipm_solve(rqp, opt);
    opt.backend = Backend::Chordal;
    opt.observer = [&](int, const Iterate& it) { chordal_tau.push_back(it.tau); };
    const Solution b = ipm_solve(rqp, opt);
    ASSERT_EQ(a.status, SolveStatus::Optimal);
    ASSERT_EQ(b.status, SolveStatus::Optimal);
    ASSERT_EQ(dense_tau.size(), chordal_tau.size());
    for (std::size_t i = 0; i < dense_tau.size(); ++i) {
      EXPECT_LE(std::abs(dense_tau[i] - chordal_tau[i]), 1e-9 * std::max(1.0, std::abs(dense_tau[i])))
          << "trial " << trial << " iteration " << i;
    }
  }
}

TEST(Ipm, SingleScenarioSolutionFollowsDynamics) {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 5; ++trial) {
    const UncertainSystem sys = structured_system(rng, 2, 1, 5, {1});
    const Rqp rqp = to_rqp(sys);
    // Tight tolerances so the check probes the dynamics rows, not the stopping rule.
    IpmOptions opt;
    opt.tol_feas = 1e-12;
    opt.tol_comp = 1e-12;
    const Solution sol = ipm_solve(rqp, opt);
    ASSERT_EQ(sol.status, SolveStatus::Optimal);
    const StageLayout& L = rqp.layout;
    EXPECT_LE(inf_norm(sol.iterate.z.segment(L.x_offset(0, 0), 2) - sys.x0), 1e-10);
    for (int k = 0; k < sys.horizon; ++k) {
      const Realization& rk = sys.realizations[k][0];
      const VectorXd next = rk.A * sol.iterate.z.segment(L.x_offset(0, k), 2) +
                            rk.B * sol.iterate.z.segment(L.u_offset(0, k), 1) + rk.v;
      EXPECT_LE(inf_norm(next - sol.iterate.z.segment(L.x_offset(0, k + 1), 2)), 1e-10);
    }
    EXPECT_NEAR(sol.objective, sol.per_scenario_costs(0), 1e-6);
  }
}

TEST(Ipm, EnlargingUncertaintyNeverLowersWorstCase) {
  std::mt19937_64 rng(79);
  int pairs = 0;
  while (pairs < 5) {
    UncertainSystem base = random_system(rng);
    UncertainSystem bigger = base;
    const int stage = std::uniform_int_distribution<int>(0, base.robust_horizon)(rng);
    if (!rmpc::testing::add_realization(bigger, stage, rng)) continue;
    const Solution a = ipm_solve(to_rqp(base));
    const Solution b = ipm_solve(to_rqp(bigger));
    ASSERT_EQ(a.status, SolveStatus::Optimal);
    ASSERT_EQ(b.status, SolveStatus::Optimal);
    EXPECT_GE(b.objective, a.objective - 1e-7);
    ++pairs;
  }
}

TEST(Ipm, BackendNamesParse) {
  EXPECT_EQ(parse_backend("dense"), Backend::Dense);
  EXPECT_EQ(parse_backend("chordal"), Backend::Chordal);
  EXPECT_THROW(parse_backend("sparse"), std::invalid_argument);
  EXPECT_STREQ(to_string(SolveStatus::MaxIter), "max_iter");
}
