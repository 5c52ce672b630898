#include "rmpc/cli.hpp"

#include "rmpc/chordal.hpp"
#include "rmpc/direction.hpp"
#include "rmpc/errors.hpp"
#include "rmpc/oracle.hpp"
#include "rmpc/parallel.hpp"
#include "rmpc/problem_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace rmpc {

namespace {

using nlohmann::json;

json to_json(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

std::string format(const VectorXd& v) {
  std::ostringstream os;
  os << std::setprecision(10) << "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
  os << "]";
  return os.str();
}

VectorXd first_control(const Rqp& rqp, const VectorXd& z) {
  return z.segment(rqp.layout.u_offset(0, 0), rqp.layout.nu);
}

int status_exit_code(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return kExitOk;
    case SolveStatus::MaxIter: return kExitMaxIter;
    case SolveStatus::NumericalBreakdown: return kExitBreakdown;
  }
  return kExitBreakdown;
}

Rqp build_rqp(const UncertainSystem& sys) { return assemble_rqp(enumerate_scenarios(sys), sys); }

struct SolveArgs {
  std::string file;
  std::string backend = "dense";
  double tol = 1e-8;
  int max_iter = 100;
  bool json_out = false;
};

IpmOptions make_options(const std::string& backend, double tol, int max_iter) {
  IpmOptions opt;
  opt.backend = parse_backend(backend);
  opt.tol_feas = tol;
  opt.tol_comp = tol;
  opt.max_iter = max_iter;
  return opt;
}

int cmd_solve(const SolveArgs& a, std::ostream& out) {
  const UncertainSystem sys = parse_problem(a.file);
  const Rqp rqp = build_rqp(sys);
  const Solution sol = ipm_solve(rqp, make_options(a.backend, a.tol, a.max_iter));
  const VectorXd u0 = first_control(rqp, sol.iterate.z);
  if (a.json_out) {
    json doc;
    doc["status"] = to_string(sol.status);
    doc["tau"] = sol.objective;
    doc["iterations"] = sol.iterations;
    doc["u0"] = to_json(u0);
    doc["per_scenario_costs"] = to_json(sol.per_scenario_costs);
    doc["backend"] = a.backend;
    doc["scenarios"] = rqp.layout.scenarios;
    doc["wall_time_s"] = sol.wall_time;
    out << doc.dump(2) << "\n";
  } else {
    out << std::setprecision(12);
    out << "status:         " << to_string(sol.status) << "\n";
    out << "backend:        " << a.backend << "\n";
    out << "scenarios:      " << rqp.layout.scenarios << "\n";
    out << "iterations:     " << sol.iterations << "\n";
    out << "tau:            " << sol.objective << "\n";
    out << "scenario costs: " << format(sol.per_scenario_costs) << "\n";
    out << "u0:             " << format(u0) << "\n";
    out << "wall time [s]:  " << sol.wall_time << "\n";
  }
  return status_exit_code(sol.status);
}

int cmd_tree(const std::string& file, const std::string& dot_path, bool with_epigraph,
             std::ostream& out) {
  const UncertainSystem sys = parse_problem(file);
  const Rqp rqp = build_rqp(sys);
  const DirectionStructure ds = build_direction_structure(rqp, with_epigraph);
  const ChordalityResult chordal = is_chordal(ds.graph);
  std::size_t max_size = 0;
  int max_dim = 0;
  for (const auto& c : ds.tree.cliques) {
    max_size = std::max(max_size, c.size());
    int dim = 0;
    for (int v : c) dim += ds.nodes[v].dim;
    max_dim = std::max(max_dim, dim);
  }
  out << "supernodes:        " << ds.graph.size() << "\n";
  out << "edges:             " << ds.graph.num_edges() << "\n";
  out << "chordal:           " << (chordal.chordal ? "yes" : "no") << "\n";
  out << "fill edges:        " << ds.embedding.fill_edges << "\n";
  out << "cliques:           " << ds.tree.size() << "\n";
  out << "max clique size:   " << max_size << " supernodes (" << max_dim << " scalars)\n";
  out << "root:              " << clique_label(ds.tree.cliques[ds.tree.root], ds.embedding.graph)
      << "\n";
  out << "separator sizes:  ";
  for (int c = 0; c < ds.tree.size(); ++c) {
    if (ds.tree.parent[c] >= 0) out << " " << ds.tree.separators[c].size();
  }
  out << "\n";
  if (!dot_path.empty()) {
    std::ofstream f(dot_path);
    if (!f) throw InputError(dot_path + ": cannot write DOT output");
    f << to_dot(ds.graph, "sparsity") << to_dot(ds.tree, ds.embedding.graph, "clique_tree");
    out << "dot:               " << dot_path << "\n";
  }
  return kExitOk;
}

struct CheckRow {
  std::string name;
  std::string state;  // PASS, FAIL, SKIPPED
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

int cmd_verify(const std::string& file, bool corrupt, std::ostream& out) {
  const UncertainSystem sys = parse_problem(file);
  const Rqp rqp = build_rqp(sys);
  std::vector<CheckRow> rows;
  auto add = [&](std::string name, bool ok, std::string detail) {
    rows.push_back({std::move(name), ok ? "PASS" : "FAIL", std::move(detail)});
  };

  double dir_err = 0.0, dir_res = 0.0;
  int sampled = 0;
  IpmOptions dense_opt;
  dense_opt.backend = Backend::Dense;
  dense_opt.observer = [&](int, const Iterate& it) {
    const StepDirection d = compute_direction(rqp, it, 0.0, Backend::Dense);
    const StepDirection c = compute_direction(rqp, it, 0.0, Backend::Chordal, resolve_workers(0));
    VectorXd dv(d.d_z.size() + d.d_lambda.size()), cv(dv.size());
    dv << d.d_z, d.d_lambda;
    cv << c.d_z, c.d_lambda;
    dir_err = std::max(dir_err, inf_norm(cv - dv) / (1.0 + inf_norm(dv)));
    const Residuals res = kkt_residuals(rqp, it, 0.0);
    dir_res = std::max({dir_res, verify_direction(rqp, it, res, d), verify_direction(rqp, it, res, c)});
    ++sampled;
  };
  const Solution dense = ipm_solve(rqp, dense_opt);
  IpmOptions chordal_opt;
  chordal_opt.backend = Backend::Chordal;
  const Solution chordal = ipm_solve(rqp, chordal_opt);

  add("dense solve", dense.status == SolveStatus::Optimal,
      std::string(to_string(dense.status)) + ", " + std::to_string(dense.iterations) + " iterations");
  add("chordal solve", chordal.status == SolveStatus::Optimal,
      std::string(to_string(chordal.status)) + ", " + std::to_string(chordal.iterations) +
          " iterations");
  const double tau_diff = std::abs(dense.objective - chordal.objective);
  add("backend tau agreement", tau_diff <= 1e-9 * std::max(1.0, std::abs(dense.objective)),
      "|diff| = " + sci(tau_diff));
  add("direction agreement", dir_err <= 1e-8,
      "max rel diff " + sci(dir_err) + " over " + std::to_string(sampled) + " iterations");
  add("direction residual", dir_res <= 1e-10, "max rel residual " + sci(dir_res));

  Iterate point = dense.iterate;
  if (corrupt) point.z.array() += 1e-3;
  const VerificationReport rep = verify_solution(rqp, point);
  double worst = 0.0;
  std::size_t worst_block = 0;
  for (std::size_t i = 0; i < rep.kkt_block_norms.size(); ++i) {
    if (rep.kkt_block_norms[i] > worst) {
      worst = rep.kkt_block_norms[i];
      worst_block = i;
    }
  }
  add("kkt verification", rep.pass,
      "worst block " + std::string(VerificationReport::block_names()[worst_block]) + " = " +
          sci(worst) + ", tau gap " + sci(rep.tau_gap) + ", non-anticipativity " +
          sci(rep.nonanticipativity_norm));

  const bool small = rqp.layout.scenarios <= 2 &&
                     rqp.layout.epi_rows() + rqp.G_ineq.rows() <= kBruteForceRowCap;
  if (small) {
    const BruteForceResult bf = active_set_bruteforce(rqp);
    if (!bf.feasible) {
      add("brute-force optimum", false, "no feasible active set");
    } else {
      const double rel = std::abs(dense.objective - bf.tau) / std::max(1.0, std::abs(bf.tau));
      add("brute-force optimum", rel <= 1e-6, "tau* = " + sci(bf.tau) + ", rel diff " + sci(rel));
      const VerificationReport brep = verify_solution(rqp, bf.point);
      add("brute-force kkt", brep.pass, "oracle point verification");
    }
  } else {
    rows.push_back({"brute-force optimum", "SKIPPED", "problem exceeds the enumeration cap"});
  }

  bool ok = true;
  for (const auto& r : rows) {
    out << std::left << std::setw(24) << r.name << std::setw(9) << r.state << r.detail << "\n";
    ok = ok && r.state != "FAIL";
  }
  out << (ok ? "verification passed" : "verification FAILED") << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_simulate(const std::string& file, int steps, std::uint64_t seed, bool json_out,
                 const std::string& backend, std::ostream& out) {
  const UncertainSystem sys = parse_problem(file);
  IpmOptions opt;
  opt.backend = parse_backend(backend);
  const SimulationLog log = simulate(sys, steps, seed, opt);
  if (json_out) {
    json doc;
    doc["seed"] = seed;
    doc["complete"] = log.complete;
    doc["message"] = log.message;
    json arr = json::array();
    for (const auto& s : log.steps) {
      arr.push_back({{"step", s.step},
                     {"x", to_json(s.x)},
                     {"u", to_json(s.u)},
                     {"realization", s.realization},
                     {"tau", s.tau},
                     {"iterations", s.iterations}});
    }
    doc["steps"] = std::move(arr);
    doc["final_state"] = to_json(log.final_state);
    out << doc.dump(2) << "\n";
  } else {
    out << std::setprecision(10);
    for (const auto& s : log.steps) {
      out << "step " << s.step << "  x=" << format(s.x) << "  u=" << format(s.u)
          << "  realization=" << s.realization << "  tau=" << s.tau << "\n";
    }
    out << "final x=" << format(log.final_state) << "\n";
    if (!log.complete) out << "stopped: " << log.message << "\n";
  }
  return log.complete ? kExitOk : kExitMaxIter;
}

}  // namespace

SimulationLog simulate(const UncertainSystem& sys_in, int steps, std::uint64_t seed,
                       const IpmOptions& options) {
  UncertainSystem sys = sys_in;
  validate(sys);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, sys.branching(0) - 1);
  SimulationLog log;
  VectorXd x = sys.x0;
  for (int k = 0; k < steps; ++k) {
    sys.x0 = x;
    const Rqp rqp = build_rqp(sys);
    const Solution sol = ipm_solve(rqp, options);
    if (sol.status != SolveStatus::Optimal) {
      log.final_state = x;
      log.message = "step " + std::to_string(k) + ": solver returned " + to_string(sol.status);
      return log;
    }
    SimulationStep s;
    s.step = k;
    s.x = x;
    s.u = first_control(rqp, sol.iterate.z);
    s.realization = pick(rng);
    s.tau = sol.objective;
    s.iterations = sol.iterations;
    const Realization& r = sys.realizations[0][s.realization];
    x = r.A * x + r.B * s.u + r.v;
    log.steps.push_back(std::move(s));
  }
  log.final_state = x;
  log.complete = true;
  return log;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust min-max MPC over scenario trees"};
  app.name("rmpc");
  app.require_subcommand(1);

  SolveArgs solve_args;
  auto* solve = app.add_subcommand("solve", "Solve the robust MPC problem in a problem file");
  solve->add_option("file", solve_args.file, "Problem file (JSON)")->required();
  solve->add_option("--backend", solve_args.backend, "KKT backend")
      ->check(CLI::IsMember({"dense", "chordal"}));
  solve->add_option("--tol", solve_args.tol, "Residual tolerance")->check(CLI::PositiveNumber);
  solve->add_option("--max-iter", solve_args.max_iter, "Iteration limit")
      ->check(CLI::NonNegativeNumber);
  solve->add_flag("--json-out", solve_args.json_out, "Print a JSON report");

  std::string tree_file, dot_path;
  bool with_epigraph = false;
  auto* tree = app.add_subcommand("tree", "Sparsity graph and clique tree of the direction QP");
  tree->add_option("file", tree_file, "Problem file (JSON)")->required();
  tree->add_option("--dot", dot_path, "Write both graphs in DOT format to this path");
  tree->add_flag("--with-epigraph", with_epigraph, "Include the epigraph variables");

  std::string verify_file;
  bool corrupt = false;
  auto* verify = app.add_subcommand("verify", "Cross-check backends, KKT conditions and oracle");
  verify->add_option("file", verify_file, "Problem file (JSON)")->required();
  verify->add_flag("--corrupt", corrupt)->group("");

  std::string sim_file, sim_backend = "dense";
  int sim_steps = 10;
  std::uint64_t sim_seed = 0;
  bool sim_json = false;
  auto* sim = app.add_subcommand("simulate", "Closed-loop simulation with sampled realizations");
  sim->add_option("file", sim_file, "Problem file (JSON)")->required();
  sim->add_option("--steps", sim_steps, "Number of closed-loop steps")
      ->required()
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--seed", sim_seed, "Sampling seed")->required();
  sim->add_option("--backend", sim_backend, "KKT backend")
      ->check(CLI::IsMember({"dense", "chordal"}));
  sim->add_flag("--json-out", sim_json, "Print a JSON log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInputError;
  }

  try {
    if (*solve) return cmd_solve(solve_args, out);
    if (*tree) return cmd_tree(tree_file, dot_path, with_epigraph, out);
    if (*verify) return cmd_verify(verify_file, corrupt, out);
    if (*sim) return cmd_simulate(sim_file, sim_steps, sim_seed, sim_json, sim_backend, out);
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const NumericalBreakdown& e) {
    err << "numerical breakdown: " << e.what() << "\n";
    return kExitBreakdown;
  }
  return kExitInputError;
}

}  // namespace rmpc
