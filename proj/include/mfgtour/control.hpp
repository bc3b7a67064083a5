#ifndef MFGTOUR_CONTROL_HPP_INCLUDED
#define MFGTOUR_CONTROL_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfgtour/congestion.hpp"
#include "mfgtour/equilibrium.hpp"
#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"
#include "mfgtour/parallel.hpp"

namespace mfgtour {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const noexcept { return hi - lo; }
  double center() const noexcept { return 0.5 * (lo + hi); }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Box constraint on every alpha and beta entry. Per coefficient interval the
/// components are ordered alpha[0..3] then beta[0..3].
struct ParamBox {
  std::vector<double> breakpoints;             // empty for constant coefficients
  std::vector<std::array<Interval, 8>> pieces;  // one entry per coefficient interval

  static ParamBox uniform(double lo, double hi) {
    ParamBox b;
    b.pieces.resize(1);
    b.pieces[0].fill({lo, hi});
    return b;
  }

  static ParamBox around(const CongestionParams& p, double half_width) {
    ParamBox b;
    if (p.mode() == CongestionParams::Mode::Piecewise) b.breakpoints = p.breakpoints();
    for (const auto& c : p.pieces()) {
      std::array<Interval, 8> iv;
      for (int w = 0; w < 4; ++w) {
        iv[w] = {std::max(0.0, c.alpha[w] - half_width), c.alpha[w] + half_width};
        iv[4 + w] = {std::max(0.0, c.beta[w] - half_width), c.beta[w] + half_width};
      }
      b.pieces.push_back(iv);
    }
    return b;
  }

  int dimension() const noexcept { return static_cast<int>(pieces.size()) * 8; }
  const Interval& component(int i) const { return pieces.at(i / 8)[i % 8]; }

  void validate() const {
    if (pieces.empty()) throw std::invalid_argument("parameter box is empty");
    if (!breakpoints.empty() && breakpoints.size() != pieces.size() + 1)
      throw std::invalid_argument("parameter box needs one interval set per breakpoint interval");
    for (int i = 0; i < dimension(); ++i) {
      const auto& c = component(i);
      if (!std::isfinite(c.lo) || !std::isfinite(c.hi) || c.lo > c.hi)
        throw std::invalid_argument("parameter box component " + std::to_string(i) + " has lo > hi");
      if (c.lo < 0) throw std::invalid_argument("parameter box component " + std::to_string(i) + " is negative");
    }
  }

  std::vector<double> center() const {
    std::vector<double> x(dimension());
    for (int i = 0; i < dimension(); ++i) x[i] = component(i).center();
    return x;
  }

  std::vector<double> clamp(std::vector<double> x) const {
    for (int i = 0; i < dimension(); ++i) x[i] = std::clamp(x[i], component(i).lo, component(i).hi);
    return x;
  }

  CongestionParams to_params(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != dimension()) throw std::invalid_argument("parameter vector has wrong size");
    std::vector<Coefficients> cs(pieces.size());
    for (std::size_t p = 0; p < pieces.size(); ++p)
      for (int w = 0; w < 4; ++w) {
        cs[p].alpha[w] = x[p * 8 + w];
        cs[p].beta[w] = x[p * 8 + 4 + w];
      }
    if (breakpoints.empty()) return CongestionParams::constant(cs.front());
    return CongestionParams::piecewise(breakpoints, std::move(cs));
  }

  std::vector<double> to_vector(const CongestionParams& p) const {
    std::vector<double> x;
    for (const auto& c : p.pieces()) {
      x.insert(x.end(), c.alpha.begin(), c.alpha.end());
      x.insert(x.end(), c.beta.begin(), c.beta.end());
    }
    return x;
  }
};

/// The controller's target mass profile.
struct ReferenceMass {
  MassProfile rho;

  static ReferenceMass checked(MassProfile rho, const TimeGrid& grid) {
    if (rho.n_nodes() != grid.n_nodes())
      throw std::invalid_argument("reference mass has " + std::to_string(rho.n_nodes()) + " nodes, grid has " +
                                  std::to_string(grid.n_nodes()));
    for (const auto& comp : rho.rho)
      for (double v : comp)
        if (!std::isfinite(v) || v < 0) throw std::invalid_argument("reference mass must be finite and nonnegative");
    return {std::move(rho)};
  }
};

struct SeedOutcome {
  int seed = 0;
  bool converged = false;
  double distance = kInf;
  double residual = kInf;
  bool split = false;
  std::string error;
};

struct ObjectiveReport {
  double best = kInf;   // min distance over discovered equilibria
  double worst = kInf;  // max distance over discovered equilibria (heuristic)
  int discovered = 0;   // distinct equilibria among the converged seeds
  std::vector<SeedOutcome> seeds;
  std::optional<EquilibriumResult> best_equilibrium;
};

/// Solves once per tie-break seed and reports the distances of the discovered
/// equilibria to the reference.
inline ObjectiveReport evaluate_objective(const Scenario& sc, const CongestionParams& params, const ReferenceMass& ref,
                                          const SolverConfig& cfg) {
  ObjectiveReport rep;
  std::vector<MassProfile> found;
  double worst = -kInf;
  for (int seed : cfg.seeds) {
    SolverConfig c = cfg;
    c.seeds = {seed};
    SeedOutcome o;
    o.seed = seed;
    try {
      auto r = solve_epsilon_equilibrium(sc, params, c);
      o.converged = true;
      o.distance = x_norm_distance(r.rho, ref.rho);
      o.residual = r.residual.gap;
      o.split = r.split_active();
      const double same = cfg.fixed_point_tolerance(sc.mass_bound()) * 10;
      if (std::none_of(found.begin(), found.end(), [&](const MassProfile& m) { return x_norm_distance(m, r.rho) <= same; }))
        found.push_back(r.rho);
      worst = std::max(worst, o.distance);
      if (o.distance < rep.best) {
        rep.best = o.distance;
        rep.best_equilibrium = std::move(r);
      }
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    rep.seeds.push_back(std::move(o));
  }
  rep.discovered = static_cast<int>(found.size());
  if (found.empty()) {
    std::string msg = "no equilibrium found for any seed";
    for (const auto& s : rep.seeds) msg += "; seed " + std::to_string(s.seed) + ": " + s.error;
    throw std::runtime_error(msg);
  }
  rep.worst = worst;
  return rep;
}

inline double objective(const Scenario& sc, const CongestionParams& params, const ReferenceMass& ref,
                        const SolverConfig& cfg) {
  return evaluate_objective(sc, params, ref, cfg).best;
}

/// Max distance over the discovered equilibria; the discovered set may miss equilibria.
inline double worst_case_objective(const Scenario& sc, const CongestionParams& params, const ReferenceMass& ref,
                                   const SolverConfig& cfg) {
  return evaluate_objective(sc, params, ref, cfg).worst;
}

struct Evaluation {
  int index = 0;
  std::string phase;  // "sweep" or "poll"
  std::vector<double> x;
  double objective = kInf;
  double worst = kInf;
  double residual = kInf;
  int discovered = 0;
  std::string error;
};

struct ControlResult {
  std::vector<double> best_x;
  CongestionParams best_params;
  double best_objective = kInf;
  double best_worst = kInf;
  std::vector<Evaluation> log;
  int sweep_size = 0;
  double final_step = 0.0;  // relative to box width
};

struct OptimizerConfig {
  int budget = 200;
  std::uint64_t seed = 0;
  int sweep_size = 0;          // <= 0: min(budget, 4 * dimension)
  double initial_step = 0.25;  // fraction of the box width
  double min_step = 0.01;
  unsigned threads = 0;  // 0: hardware concurrency
};

namespace detail {

// Latin hypercube sample of `n` points in the box; collapsed components stay fixed.
inline std::vector<std::vector<double>> latin_hypercube(const ParamBox& box, int n, std::mt19937_64& rng) {
  const int d = box.dimension();
  std::vector<std::vector<double>> pts(n, std::vector<double>(d));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int j = 0; j < d; ++j) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto& c = box.component(j);
    for (int i = 0; i < n; ++i) pts[i][j] = c.lo + c.width() * (perm[i] + u(rng)) / n;
  }
  return pts;
}

}  // namespace detail

/// Latin hypercube sweep (box center first) followed by compass pattern search
/// from the best sample. Polls run concurrently and are merged by index, so the
/// result depends only on the inputs and the seed.
inline ControlResult optimize(const Scenario& sc, const ParamBox& box, const ReferenceMass& ref,
                              const SolverConfig& solver, const OptimizerConfig& opt) {
  box.validate();
  if (opt.budget < 1) throw std::invalid_argument("optimizer budget must be >= 1");
  const int d = box.dimension();
  ControlResult res;
  std::map<std::vector<double>, std::size_t> seen;  // parameter vector -> log index

  const auto run = [&](const std::vector<std::vector<double>>& xs, const char* phase) {
    std::vector<Evaluation> batch(xs.size());
    detail::parallel_for(static_cast<int>(xs.size()), opt.threads, [&](int i) {
      auto& e = batch[i];
      e.x = xs[i];
      e.phase = phase;
      try {
        const auto rep = evaluate_objective(sc, box.to_params(e.x), ref, solver);
        e.objective = rep.best;
        e.worst = rep.worst;
        e.discovered = rep.discovered;
        for (const auto& s : rep.seeds)
          if (s.converged && s.distance == rep.best) e.residual = s.residual;
      } catch (const std::exception& ex) {
        e.error = ex.what();
      }
    });
    std::vector<std::size_t> ids;
    for (auto& e : batch) {
      e.index = static_cast<int>(res.log.size());
      seen.emplace(e.x, res.log.size());
      ids.push_back(res.log.size());
      if (e.objective < res.best_objective) {
        res.best_objective = e.objective;
        res.best_worst = e.worst;
        res.best_x = e.x;
      }
      res.log.push_back(std::move(e));
    }
    return ids;
  };
  const auto remaining = [&] { return opt.budget - static_cast<int>(res.log.size()); };

  std::mt19937_64 rng(opt.seed);
  const int n_sweep = std::clamp(opt.sweep_size > 0 ? opt.sweep_size : 4 * d, 1, opt.budget);
  std::vector<std::vector<double>> sweep{box.center()};
  if (n_sweep > 1) {
    auto lhs = detail::latin_hypercube(box, n_sweep - 1, rng);
    for (auto& x : lhs)
      if (std::find(sweep.begin(), sweep.end(), x) == sweep.end()) sweep.push_back(std::move(x));
  }
  run(sweep, "sweep");
  res.sweep_size = n_sweep;

  double step = opt.initial_step;
  if (res.best_x.empty()) res.best_x = sweep.front();
  while (step >= opt.min_step && remaining() > 0) {
    std::vector<std::vector<double>> polls;
    for (int j = 0; j < d && static_cast<int>(polls.size()) < remaining(); ++j) {
      const auto& c = box.component(j);
      if (c.width() <= 0) continue;
      for (double sign : {+1.0, -1.0}) {
        auto x = res.best_x;
        x[j] = std::clamp(x[j] + sign * step * c.width(), c.lo, c.hi);
        if (x == res.best_x || seen.count(x)) continue;
        if (std::find(polls.begin(), polls.end(), x) != polls.end()) continue;
        if (static_cast<int>(polls.size()) < remaining()) polls.push_back(std::move(x));
      }
    }
    const double before = res.best_objective;
    if (!polls.empty()) run(polls, "poll");
    if (!(res.best_objective < before)) step *= 0.5;
  }
  res.final_step = step;
  res.best_params = box.to_params(res.best_x);
  return res;
}

}  // namespace mfgtour

#endif  // MFGTOUR_CONTROL_HPP_INCLUDED
