#ifndef MFGTOUR_INVARIANTS_HPP_INCLUDED
#define MFGTOUR_INVARIANTS_HPP_INCLUDED

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mfgtour/equilibrium.hpp"
#include "mfgtour/transport.hpp"

namespace mfgtour {

struct InvariantCheck {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool ok = false;
};

inline bool all_pass(const std::vector<InvariantCheck>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const InvariantCheck& c) { return c.ok; });
}

namespace detail {

inline InvariantCheck at_most(std::string name, double value, double bound) {
  return {std::move(name), value, bound, std::isfinite(value) && value <= bound};
}

}  // namespace detail

/// Checks of a converged solve: total-mass identity and conservation on every
/// iterate, X membership, the arrival-map identity (exact at constructed nodes,
/// within dt against the raw slowness) and the equilibrium certificate.
inline std::vector<InvariantCheck> invariant_suite(const Scenario& sc, const EquilibriumResult& r) {
  const double dt = sc.grid.dt();
  const double tol = conservation_tolerance(sc.grid, sc.arrival);
  const auto& d = r.diagnostics;
  std::vector<InvariantCheck> out;
  out.push_back(detail::at_most("total mass identity", d.max_sum_identity_error, tol));
  out.push_back(detail::at_most("conservation inequalities", d.max_conservation_violation, tol));
  out.push_back({"X membership", d.all_in_x ? 0.0 : 1.0, 0.0, d.all_in_x});
  out.push_back(detail::at_most("arrival identity at constructed nodes", d.max_identity_error, 1e-9 * sc.grid.horizon()));
  out.push_back(detail::at_most("arrival identity after repair", d.max_raw_identity_error, dt * (1 + 1e-9)));
  out.push_back(detail::at_most("equilibrium residual", r.residual.gap, r.epsilon_used + 10 * dt * r.lipschitz));
  return out;
}

/// Re-derives every check from a stored (rho, fractions, arrival splits) triple:
/// fractions and late shares must lie in [0, 1] with fractions summing to one
/// wherever mass arrives, the triple must regenerate rho within the fixed-point
/// tolerance, and the certificate must hold.
inline std::vector<InvariantCheck> replay_invariants(const Scenario& sc, const CongestionParams& params,
                                                     const MassProfile& rho, const SplitFractions& fractions,
                                                     double epsilon, double tol_fp,
                                                     const ArrivalSplits* stored_splits = nullptr) {
  const double dt = sc.grid.dt();
  const double tol = conservation_tolerance(sc.grid, sc.arrival);
  std::vector<InvariantCheck> out;

  double simplex = 0.0;
  for (Point p : kPoints)
    for (int k = 0; k < sc.grid.n_nodes(); ++k) {
      for (int i = 0; i < admissible(p).count; ++i) {
        const double f = fractions.f[index(p)][i][k];
        simplex = std::max({simplex, -f, f - 1.0, std::isfinite(f) ? 0.0 : kInf});
      }
    }

  const auto field = CongestionField::from_params(sc.grid, params, rho);
  const auto tables = build_value_tables(sc, field);
  auto splits = stored_splits ? *stored_splits : ArrivalSplits::none(sc.grid);
  for (const auto& c : splits.crossing)
    for (double l : c.late) simplex = std::max({simplex, -l, l - 1.0, std::isfinite(l) ? 0.0 : kInf});
  FlowState flows;
  try {
    refresh_arrival_options(sc, field, tables, splits);
    flows = propagate(sc, tables, fractions, &splits);
  } catch (const TransportError& e) {
    out.push_back({std::string("transport (") + e.what() + ")", 1.0, 0.0, false});
    return out;
  }
  for (Point p : kPoints)
    for (int k = 0; k < sc.grid.n_steps(); ++k)
      if (flows.inflow[index(p)][k] > 0) simplex = std::max(simplex, std::abs(fractions.sum(p, k) - 1.0));
  out.push_back(detail::at_most("split fractions on the simplex", simplex, 1e-9));

  const auto cons = check_conservation(sc.grid, sc.arrival, flows.exits);
  out.push_back(detail::at_most("conservation inequalities", cons.max_violation, tol));
  const double L = flow_lipschitz_bound(sc.arrival, flows.exits);
  const auto m = check_membership(sc.grid, sc.arrival, rho, L);
  out.push_back(detail::at_most("total mass identity", m.sum_identity_error, tol));
  out.push_back({"X membership", m.in_x(tol + 1e-12) ? 0.0 : 1.0, 0.0, m.in_x(tol + 1e-12)});
  double identity = 0.0, raw_identity = 0.0;
  for (const auto& c : flows.crossings) {
    identity = std::max(identity, c.map.identity_error());
    raw_identity = std::max(raw_identity, c.map.raw_identity_error());
  }
  out.push_back(detail::at_most("arrival identity at constructed nodes", identity, 1e-9 * sc.grid.horizon()));
  out.push_back(detail::at_most("arrival identity after repair", raw_identity, dt * (1 + 1e-9)));

  double gap = kInf;
  try {
    gap = x_norm_distance(branch_mass(sc.grid, sc.arrival, flows.exits), rho);
  } catch (const TransportError&) {
  }
  out.push_back(detail::at_most("fixed point", gap, 10 * tol_fp));
  const auto res = residual_gap(sc, tables, fractions, flows, &splits);
  out.push_back(detail::at_most("equilibrium residual", res.gap, epsilon + 10 * dt * L));
  return out;
}

}  // namespace mfgtour

#endif  // MFGTOUR_INVARIANTS_HPP_INCLUDED
