// mfgtour: solve, optimize, validate and simulate the tourist mean field game.
//
// Exit status: 0 success, 1 I/O or validation error, 2 non-convergence,
// 3 invariant failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfgtour/io.hpp"
#include "mfgtour/invariants.hpp"
#include "mfgtour/mfgtour.hpp"

namespace fs = std::filesystem;
using namespace mfgtour;
using io::json;

namespace {

enum Exit : int { kOk = 0, kInputError = 1, kNoConvergence = 2, kInvariantFailure = 3 };

struct SolverFlags {
  std::optional<double> epsilon, gamma, tol;
  std::optional<int> max_iters;
  std::vector<int> seeds;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--epsilon", epsilon, "epsilon of the choice rule")->check(CLI::PositiveNumber);
    cmd->add_option("--gamma", gamma, "damping factor in (0, 1]")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--tol", tol, "fixed-point tolerance (default 1e-4 * MassBound)")->check(CLI::PositiveNumber);
    cmd->add_option("--max-iters", max_iters, "iteration budget")->check(CLI::PositiveNumber);
    cmd->add_option("--seeds", seeds, "tie-break seeds, e.g. 0,1")->delimiter(',');
  }

  SolverConfig config() const {
    SolverConfig c;
    if (epsilon) c.epsilon = *epsilon;
    if (gamma) c.gamma = *gamma;
    if (tol) c.tol_fp = *tol;
    if (max_iters) c.max_iters = *max_iters;
    if (!seeds.empty()) c.seeds = seeds;
    validate(c);
    return c;
  }

  json overrides() const {
    json j = json::object();
    if (epsilon) j["epsilon"] = *epsilon;
    if (gamma) j["gamma"] = *gamma;
    if (tol) j["tol"] = *tol;
    if (max_iters) j["max_iters"] = *max_iters;
    if (!seeds.empty()) j["seeds"] = seeds;
    return j;
  }
};

struct Common {
  std::string scenario;
  std::string out = "out";
  SolverFlags solver;
};

void write_manifest(const std::string& command, const Common& c, json extra = json::object()) {
  json m{{"schema_version", io::kSchemaVersion},
         {"version", io::kVersion},
         {"command", command},
         {"scenario", c.scenario},
         {"out", c.out},
         {"overrides", c.solver.overrides()},
         {"seeds", c.solver.config().seeds}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  io::write_text(fs::path(c.out) / "manifest.json", io::dump(m));
}

void print_checks(const std::vector<InvariantCheck>& checks) {
  for (const auto& c : checks)
    std::printf("  %-40s %s  value %s  bound %s\n", c.name.c_str(), c.ok ? "ok  " : "FAIL", io::num(c.value).c_str(),
                io::num(c.bound).c_str());
}

json checks_json(const std::vector<InvariantCheck>& checks) {
  json a = json::array();
  for (const auto& c : checks) a.push_back({{"name", c.name}, {"value", c.value}, {"bound", c.bound}, {"ok", c.ok}});
  return a;
}

json failure_json(const ConvergenceError& e) {
  return {{"schema_version", io::kSchemaVersion},
          {"converged", false},
          {"message", e.what()},
          {"iterations", e.iterations()},
          {"best_step", e.best_step()}};
}

int cmd_solve(const Common& c, bool dump_tables) {
  const auto doc = io::load_scenario(c.scenario);
  const auto cfg = c.solver.config();
  const auto params = doc.params();
  const fs::path out(c.out);
  write_manifest("solve", c);
  try {
    const auto r = solve_epsilon_equilibrium(doc.scenario, params, cfg);
    io::write_text(out / "equilibrium.json", io::dump(io::equilibrium_json(doc, params, cfg, r)));
    io::write_text(out / "timeseries.csv",
                   io::timeseries_csv(doc.scenario.grid, doc.scenario.arrival, r.flows.exits, r.rho));
    if (dump_tables) io::write_text(out / "value_tables.csv", io::value_tables_csv(r.tables));
    json report = io::residual_json(doc.scenario, r);
    report["schema_version"] = io::kSchemaVersion;
    report["converged"] = true;
    report["iterations"] = r.iterations;
    io::write_text(out / "residual.json", io::dump(report));
    const bool ok = r.residual.gap <= io::residual_bound(doc.scenario, r);
    std::printf("converged in %d iterations, residual %s (bound %s)%s\n", r.iterations, io::num(r.residual.gap).c_str(),
                io::num(io::residual_bound(doc.scenario, r)).c_str(), r.split_active() ? ", split active" : "");
    return ok ? kOk : kInvariantFailure;
  } catch (const ConvergenceError& e) {
    io::write_text(out / "residual.json", io::dump(failure_json(e)));
    io::write_text(out / "last_iterate.csv", io::mass_csv(doc.scenario.grid, e.last_iterate()));
    std::fprintf(stderr, "error: %s after %d iterations (best step %s)\n", e.what(), e.iterations(),
                 io::num(e.best_step()).c_str());
    return kNoConvergence;
  }
}

int cmd_optimize(const Common& c, const std::string& ref_path, const std::string& box_spec, int budget,
                 std::uint64_t seed, unsigned threads) {
  const auto doc = io::load_scenario(c.scenario);
  const auto cfg = c.solver.config();
  const auto ref = io::load_mass_csv(ref_path, doc.scenario.grid);
  const auto box = io::load_box(box_spec);
  if (!box.breakpoints.empty() && std::abs(box.breakpoints.back() - doc.scenario.costs.T) > 1e-12)
    throw ScenarioError("box.breakpoints", "last breakpoint must equal the horizon T");
  OptimizerConfig opt;
  opt.budget = budget;
  opt.seed = seed;
  opt.threads = threads;
  write_manifest("optimize", c, {{"ref_mass", ref_path}, {"box", box_spec}, {"budget", budget}, {"seed", seed}});
  const auto res = optimize(doc.scenario, box, ref, cfg, opt);
  const fs::path out(c.out);
  io::write_text(out / "control.json", io::dump(io::control_json(res, box, opt)));
  if (!std::isfinite(res.best_objective)) {
    std::fprintf(stderr, "error: no evaluation produced an equilibrium\n");
    return kNoConvergence;
  }
  const auto best = evaluate_objective(doc.scenario, res.best_params, ref, cfg);
  if (best.best_equilibrium) {
    const auto& r = *best.best_equilibrium;
    io::write_text(out / "best_timeseries.csv",
                   io::timeseries_csv(doc.scenario.grid, doc.scenario.arrival, r.flows.exits, r.rho));
  }
  std::printf("best objective %s after %zu evaluations\n", io::num(res.best_objective).c_str(), res.log.size());
  return kOk;
}

int cmd_validate(const Common& c, const std::string& result_path) {
  const auto doc = io::load_scenario(c.scenario);
  const auto cfg = c.solver.config();
  const auto params = doc.params();
  std::vector<InvariantCheck> checks;
  if (!result_path.empty()) {
    const auto stored = io::parse_equilibrium(
        io::parse_json_text(io::read_text(result_path), "result file " + result_path), doc.scenario.grid);
    checks = replay_invariants(doc.scenario, params, stored.rho, stored.fractions, cfg.epsilon,
                               cfg.fixed_point_tolerance(doc.scenario.mass_bound()), &stored.arrival_splits);
  } else {
    try {
      checks = invariant_suite(doc.scenario, solve_epsilon_equilibrium(doc.scenario, params, cfg));
    } catch (const ConvergenceError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kNoConvergence;
    }
  }
  print_checks(checks);
  if (!c.out.empty()) {
    write_manifest("validate", c, {{"result", result_path}});
    io::write_text(fs::path(c.out) / "validation.json",
                   io::dump({{"schema_version", io::kSchemaVersion}, {"passed", all_pass(checks)},
                             {"checks", checks_json(checks)}}));
  }
  if (all_pass(checks)) {
    std::printf("all invariants hold\n");
    return kOk;
  }
  for (const auto& ch : checks)
    if (!ch.ok) std::fprintf(stderr, "invariant failed: %s\n", ch.name.c_str());
  return kInvariantFailure;
}

int cmd_simulate(const Common& c, int agents, std::uint64_t seed, unsigned threads) {
  const auto doc = io::load_scenario(c.scenario);
  const auto cfg = c.solver.config();
  const auto params = doc.params();
  EquilibriumResult r;
  try {
    r = solve_epsilon_equilibrium(doc.scenario, params, cfg);
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNoConvergence;
  }
  AbmConfig ac;
  ac.n_agents = agents;
  ac.seed = seed;
  ac.epsilon = r.epsilon_used;
  ac.tie_seed = r.seed_used;
  ac.threads = threads;
  const auto trace = simulate_best_response(doc.scenario, params, r.rho, ac, &r.fractions, &r.arrival_splits);
  const auto emp = empirical_mass(trace);
  const auto& sc = doc.scenario;
  const auto psi_mass = branch_mass(sc.grid, sc.arrival, r.flows.exits);
  const double distance = x_norm_distance(emp, psi_mass);
  const double tolerance =
      (agents > 0 ? 3 * sc.mass_bound() / std::sqrt(static_cast<double>(agents)) : 0.0) + 2 * sc.grid.dt() * sc.arrival.sup();
  const fs::path out(c.out);
  write_manifest("simulate", c, {{"agents", agents}, {"seed", seed}});
  io::write_text(out / "events.csv", io::events_csv(trace));
  io::write_text(out / "empirical_mass.csv", io::mass_csv(sc.grid, emp));
  io::write_text(out / "simulation.json",
                 io::dump({{"schema_version", io::kSchemaVersion},
                           {"agents", agents},
                           {"seed", seed},
                           {"distance_to_psi", distance},
                           {"tolerance", tolerance},
                           {"max_cost_excess", trace.max_excess()},
                           {"equilibrium_iterations", r.iterations}}));
  std::printf("%d agents, X distance to the transported masses %s (tolerance %s)\n", agents,
              io::num(distance).c_str(), io::num(tolerance).c_str());
  return distance <= tolerance ? kOk : kInvariantFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tourist mean field game on a circular city: equilibria, congestion control, agent simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::kVersion);

  Common common;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", common.scenario, "scenario JSON file")->required();
    cmd->add_option("--out", common.out, "output directory");
    common.solver.add_to(cmd);
  };

  bool dump_tables = false;
  auto* solve = app.add_subcommand("solve", "compute an epsilon-equilibrium");
  add_common(solve);
  solve->add_flag("--value-tables", dump_tables, "also write value_tables.csv");

  std::string ref_mass, box_spec;
  int budget = 200;
  std::uint64_t opt_seed = 0;
  unsigned threads = 0;
  auto* opt = app.add_subcommand("optimize", "fit congestion coefficients to a reference mass");
  add_common(opt);
  opt->add_option("--ref-mass", ref_mass, "reference mass CSV (t,rho11,rho01,rho10,rho00)")->required();
  opt->add_option("--box", box_spec, "parameter box JSON file or lo:hi")->required();
  opt->add_option("--budget", budget, "number of objective evaluations")->check(CLI::PositiveNumber);
  opt->add_option("--opt-seed", opt_seed, "seed of the sweep");
  opt->add_option("--threads", threads, "worker threads (0: all cores)");

  std::string result_path;
  auto* val = app.add_subcommand("validate", "run the invariant suite on a fresh solve or a stored result");
  add_common(val);
  val->add_option("--result", result_path, "equilibrium.json to replay instead of solving");

  int agents = 10000;
  std::uint64_t abm_seed = 0;
  auto* sim = app.add_subcommand("simulate", "agent-based cross-check against the equilibrium");
  add_common(sim);
  sim->add_option("--agents", agents, "number of agents")->check(CLI::NonNegativeNumber);
  sim->add_option("--seed", abm_seed, "sampling seed");
  sim->add_option("--threads", threads, "worker threads (0: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInputError;
  }

  try {
    if (solve->parsed()) return cmd_solve(common, dump_tables);
    if (opt->parsed()) return cmd_optimize(common, ref_mass, box_spec, budget, opt_seed, threads);
    if (val->parsed()) return cmd_validate(common, result_path);
    if (sim->parsed()) return cmd_simulate(common, agents, abm_seed, threads);
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNoConvergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputError;
  }
  return kInputError;
}
