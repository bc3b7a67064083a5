#ifndef MFGTOUR_EQUILIBRIUM_HPP_INCLUDED
#define MFGTOUR_EQUILIBRIUM_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mfgtour/congestion.hpp"
#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"
#include "mfgtour/transport.hpp"
#include "mfgtour/value.hpp"

namespace mfgtour {

/// The 13 split-fraction functions: 3 at (theta_S,1,1), 3 at each of (theta_1,0,1)
/// and (theta_2,1,0), 2 at each (theta_i,0,0). Entry [point][slot][node].
struct SplitFractions {
  std::array<std::array<std::vector<double>, 3>, 5> f;

  static SplitFractions zeros(const TimeGrid& grid) {
    SplitFractions s;
    for (Point p : kPoints)
      for (int i = 0; i < admissible(p).count; ++i) s.f[index(p)][i].assign(grid.n_nodes(), 0.0);
    return s;
  }

  /// Pure (0/1) fractions of committed schedules.
  static SplitFractions from_schedules(const std::array<ChoiceSchedule, 5>& schedules, const TimeGrid& grid) {
    auto s = zeros(grid);
    for (Point p : kPoints)
      for (int k = 0; k < grid.n_nodes(); ++k) s.f[index(p)][*slot_of(p, schedules[index(p)].at(k))][k] = 1.0;
    return s;
  }

  std::vector<double>& of(Point p, ChoiceKind kind) { return f[index(p)].at(slot_of(p, kind).value()); }
  const std::vector<double>& of(Point p, ChoiceKind kind) const { return f[index(p)].at(slot_of(p, kind).value()); }

  double sum(Point p, int k) const {
    double s = 0.0;
    for (int i = 0; i < admissible(p).count; ++i) s += f[index(p)][i][k];
    return s;
  }

  /// Applies `fn(point, slot, values)` to each of the 13 components in the listed order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (Point p : kPoints)
      for (int i = 0; i < admissible(p).count; ++i) fn(p, i, f[index(p)][i]);
  }

  friend bool operator==(const SplitFractions&, const SplitFractions&) = default;
};

/// One crossing between two sites on a branch.
struct Crossing {
  Point from = Point::Station11;
  ChoiceKind kind = ChoiceKind::ToP1;
  ArrivalMap map;
};

/// Flows generated by the arrival flow under given split fractions.
struct FlowState {
  ExitFlows exits;
  std::array<std::vector<double>, 5> inflow;  // entering time density at every significant point
  std::vector<Crossing> crossings;
};

namespace detail {

inline constexpr std::array<std::pair<Point, ChoiceKind>, 4> kSwitchingCrossings{{
    {Point::Station11, ChoiceKind::ToP1},
    {Point::Station11, ChoiceKind::ToP2},
    {Point::P1_01, ChoiceKind::ToP2},
    {Point::P2_10, ChoiceKind::ToP1},
}};

inline constexpr std::array<Point, 4> kStationBound{Point::P1_01, Point::P2_10, Point::P1_00, Point::P2_00};

inline std::vector<char> active_mask(std::span<const double> entry, std::span<const double> fraction, int n_steps) {
  std::vector<char> m(entry.size(), 0);
  for (int k = 0; k < n_steps; ++k) m[k] = entry[k] * fraction[k] > 0;
  return m;
}

}  // namespace detail

/// Crossings whose arrival instant is chosen: station to P1, station to P2,
/// P1 to P2 and P2 to P1, in this order.
inline constexpr int kSwitchingCount = 4;

inline const char* crossing_name(int c) noexcept {
  switch (c) {
    case 0: return "S11->P1";
    case 1: return "S11->P2";
    case 2: return "P1_01->P2";
    case 3: return "P2_10->P1";
  }
  return "?";
}

/// Departures that split between two arrival windows. When the arrival cost of
/// a crossing has two separated local minima, agents leaving at the same node
/// may divide between an early arrival (nodes up to `divider`) and a late one.
/// `late` is the share of the crossing's flow taking the late window. The
/// option costs and arrival times are evaluated against the current tables.
struct ArrivalSplit {
  std::vector<int> divider;  // -1: one arrival
  std::vector<double> late;
  std::array<std::vector<double>, 2> cost;  // early, late
  std::array<std::vector<double>, 2> time;

  bool is_split(int k) const { return divider[k] >= 0; }
  int count() const { return static_cast<int>(std::count_if(divider.begin(), divider.end(), [](int d) { return d >= 0; })); }
};

struct ArrivalSplits {
  std::array<ArrivalSplit, kSwitchingCount> crossing;

  static ArrivalSplits none(const TimeGrid& grid) {
    ArrivalSplits s;
    for (auto& c : s.crossing) {
      c.divider.assign(grid.n_nodes(), -1);
      c.late.assign(grid.n_nodes(), 0.0);
      for (int o = 0; o < 2; ++o) {
        c.cost[o].assign(grid.n_nodes(), kInf);
        c.time[o].assign(grid.n_nodes(), kInf);
      }
    }
    return s;
  }

  int count() const {
    int n = 0;
    for (const auto& c : crossing) n += c.count();
    return n;
  }
  bool empty() const { return crossing[0].divider.empty() || count() == 0; }
};

/// Re-evaluates both windows of every split departure against `tables`. A
/// window that holds no admissible arrival gets an infinite cost and loses its share.
inline void refresh_arrival_options(const Scenario& sc, const CongestionField& field, const ValueTables& tables,
                                    ArrivalSplits& splits) {
  if (splits.empty()) return;
  const auto inv_lag = detail::inverse_lags(sc.grid);
  const int n = sc.grid.n_steps();
  for (int c = 0; c < kSwitchingCount; ++c) {
    auto& sp = splits.crossing[c];
    const auto [from, kind] = detail::kSwitchingCrossings[c];
    for (int k = 0; k < sc.grid.n_nodes(); ++k) {
      if (!sp.is_split(k)) continue;
      for (int o = 0; o < 2; ++o) sp.cost[o][k] = sp.time[o][k] = kInf;
      if (k >= n) continue;
      const auto prob = arrival_problem(sc, field, tables, from, kind, k, inv_lag);
      const auto early = prob.best_in(k + 1, sp.divider[k]);
      const auto late = prob.best_in(sp.divider[k] + 1, n);
      sp.cost[0][k] = early.value;
      sp.time[0][k] = early.time;
      sp.cost[1][k] = late.value;
      sp.time[1][k] = late.time;
      if (!std::isfinite(early.value)) sp.late[k] = 1.0;
      if (!std::isfinite(late.value)) sp.late[k] = 0.0;
    }
  }
}

namespace detail {

// Divider seen by every departure of a crossing: the divider of the last split
// node at or before it (the first one before any split). Split dividers are kept
// nondecreasing, so both windows grow with the departure and their optimal
// arrivals stay ordered.
inline std::vector<int> divider_profile(const ArrivalSplit& sp) {
  const int nn = static_cast<int>(sp.divider.size());
  const auto first = std::find_if(sp.divider.begin(), sp.divider.end(), [](int d) { return d >= 0; });
  std::vector<int> out(nn, first == sp.divider.end() ? -1 : *first);
  for (int k = 0, last = out.empty() ? -1 : out[0]; k < nn; ++k) {
    if (sp.is_split(k)) last = sp.divider[k];
    out[k] = last;
  }
  return out;
}

// Raises split dividers to their running maximum.
inline void make_monotone(ArrivalSplit& sp) {
  int last = -1;
  for (auto& d : sp.divider)
    if (d >= 0) last = d = std::max(d, last);
}

}  // namespace detail

/// Transports g through the network in dependency order: station exits, then the
/// (0,1)/(1,0) exits. Station-bound crossings are recorded for diagnostics only.
/// With arrival splits, a split crossing is carried by two monotone maps (early
/// and late windows) whose pushed flows add up.
inline FlowState propagate(const Scenario& sc, const ValueTables& tables, const SplitFractions& fractions,
                           const ArrivalSplits* splits = nullptr) {
  const auto& grid = sc.grid;
  const int nn = grid.n_nodes();
  FlowState fs;
  for (auto& v : fs.inflow) v.assign(nn, 0.0);
  fs.inflow[index(Point::Station11)] = sc.arrival.samples;
  for (int c = 0; c < kSwitchingCount; ++c) {
    const auto [from, kind] = detail::kSwitchingCrossings[c];
    const auto& entry = fs.inflow[index(from)];
    const auto& frac = fractions.of(from, kind);
    const int slot = *slot_of(from, kind);
    const double distance = sc.geometry.distance(site_of(from), destination(from, kind));
    auto& into = fs.inflow[index(*next_point(from, kind))];
    if (!splits || splits->crossing[c].count() == 0) {
      const auto mask = detail::active_mask(entry, frac, grid.n_steps());
      auto map = ArrivalMap::build(grid, distance, tables[from].arrival[slot], mask);
      into = push_flow(grid, entry, frac, map);
      fs.crossings.push_back({from, kind, std::move(map)});
      continue;
    }
    const auto& sp = splits->crossing[c];
    const auto divider = detail::divider_profile(sp);
    std::array<std::vector<double>, 2> arrival, share;
    for (int o = 0; o < 2; ++o) {
      arrival[o].assign(nn, kInf);
      share[o].assign(nn, 0.0);
    }
    for (int k = 0; k < nn; ++k) {
      if (sp.is_split(k)) {
        for (int o = 0; o < 2; ++o) arrival[o][k] = sp.time[o][k];
        share[0][k] = frac[k] * (1.0 - sp.late[k]);
        share[1][k] = frac[k] * sp.late[k];
      } else {
        const int o = tables[from].arrival_node[slot][k] > divider[k] ? 1 : 0;
        arrival[o][k] = tables[from].arrival[slot][k];
        share[o][k] = frac[k];
      }
    }
    into.assign(nn, 0.0);
    for (int o = 0; o < 2; ++o) {
      const auto mask = detail::active_mask(entry, share[o], grid.n_steps());
      auto map = ArrivalMap::build(grid, distance, arrival[o], mask);
      const auto pushed = push_flow(grid, entry, share[o], map);
      for (int k = 0; k < nn; ++k) into[k] += pushed[k];
      fs.crossings.push_back({from, kind, std::move(map)});
    }
  }
  for (Point from : detail::kStationBound) {
    const auto& entry = fs.inflow[index(from)];
    const auto& frac = fractions.of(from, ChoiceKind::ToStation);
    const auto mask = detail::active_mask(entry, frac, grid.n_steps());
    fs.crossings.push_back({from, ChoiceKind::ToStation,
                            ArrivalMap::build(grid, sc.geometry.distance(site_of(from), Site::Station),
                                              tables[from].arrival[*slot_of(from, ChoiceKind::ToStation)], mask)});
  }
  fs.exits.g01 = fs.inflow[index(Point::P1_01)];
  fs.exits.g10 = fs.inflow[index(Point::P2_10)];
  fs.exits.g12 = fs.inflow[index(Point::P2_00)];
  fs.exits.g21 = fs.inflow[index(Point::P1_00)];
  return fs;
}

/// Split fractions composed along the path from the station: the arriving
/// fraction times the departing fraction.
inline SplitFractions composed_fractions(const Scenario& sc, const ValueTables& tables,
                                         const SplitFractions& fractions) {
  const auto& grid = sc.grid;
  const int nn = grid.n_nodes();
  std::array<std::vector<double>, 5> actual, reference;
  actual[index(Point::Station11)] = reference[index(Point::Station11)] = sc.arrival.samples;
  std::vector<double> ones(nn, 1.0);
  ones.back() = 0.0;  // nobody departs at T
  for (const auto& [from, kind] : detail::kSwitchingCrossings) {
    const auto& ref = reference[index(from)];
    const auto mask = detail::active_mask(ref, ones, grid.n_steps());
    const auto map = ArrivalMap::build(grid, sc.geometry.distance(site_of(from), destination(from, kind)),
                                       tables[from].arrival[*slot_of(from, kind)], mask, /*strict=*/false);
    const Point to = *next_point(from, kind);
    reference[index(to)] = push_flow(grid, ref, ones, map);
    actual[index(to)] = push_flow(grid, actual[index(from)], fractions.of(from, kind), map);
  }
  SplitFractions out = SplitFractions::zeros(grid);
  for (Point p : kPoints) {
    for (int k = 0; k < nn; ++k) {
      const double r = reference[index(p)][k];
      const double arriving = r > 0 ? actual[index(p)][k] / r : 0.0;
      for (int i = 0; i < admissible(p).count; ++i) out.f[index(p)][i][k] = arriving * fractions.f[index(p)][i][k];
    }
  }
  return out;
}

/// Mixed strategies at selected nodes of the significant points. A mixed node
/// carries weights over the admissible kinds of its point (slot order) that
/// replace the committed kind of the schedule.
struct MixedFractions {
  std::array<std::vector<char>, 5> mixed;
  std::array<std::array<std::vector<double>, 3>, 5> weight;

  static MixedFractions none(const TimeGrid& grid) {
    MixedFractions m;
    for (Point p : kPoints) {
      m.mixed[index(p)].assign(grid.n_nodes(), 0);
      for (int i = 0; i < admissible(p).count; ++i) m.weight[index(p)][i].assign(grid.n_nodes(), 0.0);
    }
    return m;
  }

  bool is_mixed(Point p, int k) const { return mixed[index(p)][k] != 0; }

  int count(Point p) const {
    return static_cast<int>(std::count(mixed[index(p)].begin(), mixed[index(p)].end(), 1));
  }
  int count() const {
    int c = 0;
    for (Point p : kPoints) c += count(p);
    return c;
  }
};

struct PsiOutput {
  MassProfile rho;
  SplitFractions fractions;
  ArrivalSplits splits;  // arrival windows, evaluated against `tables`
  std::array<ChoiceSchedule, 5> schedules;
  CongestionField field;
  ValueTables tables;
  FlowState flows;
};

/// One application of the epsilon best-response map: value tables at rho,
/// epsilon schedules, transport of g, new branch masses.
inline PsiOutput apply_psi(const Scenario& sc, const CongestionParams& params, const MassProfile& rho, double epsilon,
                           const TieBreak& tie_break, const MixedFractions* mix = nullptr,
                           const ArrivalSplits* splits = nullptr) {
  PsiOutput out;
  out.field = CongestionField::from_params(sc.grid, params, rho);
  out.tables = build_value_tables(sc, out.field);
  out.schedules = build_choice_schedules(out.tables, epsilon, tie_break);
  out.fractions = SplitFractions::from_schedules(out.schedules, sc.grid);
  if (mix) {
    for (Point p : kPoints)
      for (int k = 0; k < sc.grid.n_nodes(); ++k)
        if (mix->is_mixed(p, k))
          for (int i = 0; i < admissible(p).count; ++i) out.fractions.f[index(p)][i][k] = mix->weight[index(p)][i][k];
  }
  out.splits = splits ? *splits : ArrivalSplits::none(sc.grid);
  refresh_arrival_options(sc, out.field, out.tables, out.splits);
  out.flows = propagate(sc, out.tables, out.fractions, &out.splits);
  out.rho = branch_mass(sc.grid, sc.arrival, out.flows.exits);
  return out;
}

struct ResidualReport {
  double gap = 0.0;
  Point point = Point::Station11;
  int node = -1;
  ChoiceKind kind = ChoiceKind::Stay;
};

inline constexpr double kActiveFraction = 1e-6;

/// Largest optimality gap (candidate - V) over nodes and choices that carry flow.
/// At a split departure each arrival window that carries flow is charged its own cost.
inline ResidualReport residual_gap(const Scenario& sc, const ValueTables& tables, const SplitFractions& fractions,
                                   const FlowState& flows, const ArrivalSplits* splits = nullptr) {
  ResidualReport r;
  const double flow_floor = kActiveFraction * sc.arrival.sup();
  const auto carries = [&](double inflow, double share) {
    return share > kActiveFraction && inflow * share > flow_floor;
  };
  for (Point p : kPoints) {
    const auto& t = tables[p];
    const auto& inflow = flows.inflow[index(p)];
    for (int k = 0; k < sc.grid.n_nodes(); ++k) {
      if (!(inflow[k] > 0)) continue;
      for (int i = 0; i < t.n_slots; ++i) {
        const double share = fractions.f[index(p)][i][k];
        if (!carries(inflow[k], share)) continue;
        const double gap = t.candidate[i][k] - t.value[k];
        if (gap > r.gap) r = {gap, p, k, t.kind(i)};
      }
    }
  }
  if (!splits || splits->empty()) return r;
  for (int c = 0; c < kSwitchingCount; ++c) {
    const auto [p, kind] = detail::kSwitchingCrossings[c];
    const auto& sp = splits->crossing[c];
    const auto& inflow = flows.inflow[index(p)];
    const auto& frac = fractions.of(p, kind);
    for (int k = 0; k < sc.grid.n_nodes(); ++k) {
      if (!sp.is_split(k) || !(inflow[k] > 0)) continue;
      for (int o = 0; o < 2; ++o) {
        const double share = frac[k] * (o == 0 ? 1.0 - sp.late[k] : sp.late[k]);
        if (!carries(inflow[k], share)) continue;
        const double gap = sp.cost[o][k] - tables[p].value[k];
        if (gap > r.gap) r = {gap, p, k, kind};
      }
    }
  }
  return r;
}

/// Equilibrium certificate: rebuilds the tables at rho, transports g under the
/// fractions (and arrival windows, when given) and returns the largest gap of an
/// active choice.
inline ResidualReport equilibrium_residual(const Scenario& sc, const CongestionParams& params, const MassProfile& rho,
                                           const SplitFractions& fractions, const ArrivalSplits* splits = nullptr) {
  const auto field = CongestionField::from_params(sc.grid, params, rho);
  const auto tables = build_value_tables(sc, field);
  std::optional<ArrivalSplits> fresh;
  if (splits && !splits->empty()) {
    fresh = *splits;
    refresh_arrival_options(sc, field, tables, *fresh);
  }
  const auto* sp = fresh ? &*fresh : nullptr;
  const auto flows = propagate(sc, tables, fractions, sp);
  return residual_gap(sc, tables, fractions, flows, sp);
}

struct SolverConfig {
  double epsilon = 1e-3;
  double gamma = 0.5;
  double tol_fp = 0.0;  // <= 0 selects 1e-4 * MassBound
  int max_iters = 500;
  std::vector<int> seeds{0};
  std::vector<double> epsilon_schedule;
  int max_pure_iters = 120;  // before a non-converging pure phase is treated as oscillating
  bool allow_split = true;
  double mix_step = 1.0;  // projected step on mixed weights per unit of cost excess

  double fixed_point_tolerance(double mass_bound) const {
    if (tol_fp > 0) return tol_fp;
    return mass_bound > 0 ? 1e-4 * mass_bound : 1e-12;
  }
};

inline void validate(const SolverConfig& c) {
  if (!(c.epsilon > 0)) throw std::invalid_argument("solver: epsilon must be > 0");
  if (!(c.gamma > 0 && c.gamma <= 1)) throw std::invalid_argument("solver: gamma must lie in (0, 1]");
  if (c.tol_fp < 0) throw std::invalid_argument("solver: tol_fp must be > 0");
  if (c.max_iters < 1) throw std::invalid_argument("solver: max_iters must be >= 1");
  if (!(c.mix_step > 0)) throw std::invalid_argument("solver: mix_step must be > 0");
  if (c.seeds.empty()) throw std::invalid_argument("solver: at least one tie-break seed is required");
}

/// Mixed nodes of one significant point in a split-phase result.
struct SplitInfo {
  Point point = Point::Station11;
  int contested_nodes = 0;     // nodes carrying mixed weights
  int interior_nodes = 0;      // of which more than one kind keeps a share
  int arrival_split_nodes = 0;  // departures divided between two arrival windows
  double max_violation = 0.0;  // largest cost excess of a kind or window that keeps a share
};

/// Invariant diagnostics collected over every solver iterate.
struct SolveDiagnostics {
  double max_sum_identity_error = 0.0;
  double max_conservation_violation = 0.0;
  double max_identity_error = 0.0;      // arrival identity at constructed nodes
  double max_raw_identity_error = 0.0;  // same, raw slowness vs repaired arrival
  double max_repair = 0.0;
  bool all_in_x = true;
  int iterates = 0;

  void record(const Scenario& sc, const PsiOutput& out) {
    ++iterates;
    const auto m = check_membership(sc.grid, sc.arrival, out.rho, flow_lipschitz_bound(sc.arrival, out.flows.exits));
    max_sum_identity_error = std::max(max_sum_identity_error, m.sum_identity_error);
    all_in_x = all_in_x && m.in_x(conservation_tolerance(sc.grid, sc.arrival) + 1e-12);
    max_conservation_violation =
        std::max(max_conservation_violation, check_conservation(sc.grid, sc.arrival, out.flows.exits).max_violation);
    for (const auto& c : out.flows.crossings) {
      max_identity_error = std::max(max_identity_error, c.map.identity_error());
      max_raw_identity_error = std::max(max_raw_identity_error, c.map.raw_identity_error());
      max_repair = std::max(max_repair, c.map.max_repair());
    }
  }
};

struct EquilibriumResult {
  MassProfile rho;
  SplitFractions fractions;
  std::array<ChoiceSchedule, 5> schedules;
  ValueTables tables;  // at rho
  FlowState flows;     // g transported under fractions with the tables at rho
  ResidualReport residual;
  double fixed_point_gap = 0.0;  // || masses generated by (rho, fractions) - rho ||_X
  double lipschitz = 0.0;        // L_emp of the generated flows
  int iterations = 0;
  double epsilon_used = 0.0;
  int seed_used = 0;
  std::vector<SplitInfo> splits;  // filled when the split phase produced the result
  ArrivalSplits arrival_splits;   // empty unless some departures divide between arrival windows
  SolveDiagnostics diagnostics;

  bool split_active() const noexcept { return !splits.empty(); }
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_step, MassProfile last, int iterations)
      : std::runtime_error(what), best_step_(best_step), last_(std::move(last)), iterations_(iterations) {}
  double best_step() const noexcept { return best_step_; }
  const MassProfile& last_iterate() const noexcept { return last_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double best_step_;
  MassProfile last_;
  int iterations_;
};

namespace detail {

inline EquilibriumResult finalize(const Scenario& sc, const CongestionParams& params, const PsiOutput& out,
                                  double epsilon, int seed, int iterations, SolveDiagnostics diag) {
  EquilibriumResult r;
  r.rho = out.rho;
  r.fractions = out.fractions;
  r.schedules = out.schedules;
  const auto field = CongestionField::from_params(sc.grid, params, r.rho);
  r.tables = build_value_tables(sc, field);
  r.arrival_splits = out.splits;
  refresh_arrival_options(sc, field, r.tables, r.arrival_splits);
  r.flows = propagate(sc, r.tables, r.fractions, &r.arrival_splits);
  r.residual = residual_gap(sc, r.tables, r.fractions, r.flows, &r.arrival_splits);
  r.fixed_point_gap = x_norm_distance(branch_mass(sc.grid, sc.arrival, r.flows.exits), r.rho);
  r.lipschitz = flow_lipschitz_bound(sc.arrival, r.flows.exits);
  r.iterations = iterations;
  r.epsilon_used = epsilon;
  r.seed_used = seed;
  r.diagnostics = diag;
  return r;
}

// Candidate excess over the best candidate for every slot at node k.
inline std::array<double, 3> excess(const PsiOutput& out, Point p, int k) {
  const auto& t = out.tables[p];
  std::array<double, 3> e{kInf, kInf, kInf};
  for (int i = 0; i < t.n_slots; ++i) e[i] = t.candidate[i][k] - t.value[k];
  return e;
}

// Euclidean projection of v (n entries, allowed[i] false pinned to 0) onto the simplex.
inline void project_simplex(std::array<double, 3>& v, const std::array<bool, 3>& allowed, int n) {
  std::array<double, 3> u{};
  int m = 0;
  for (int i = 0; i < n; ++i)
    if (allowed[i]) u[m++] = v[i];
  std::sort(u.begin(), u.begin() + m, std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (int j = 0; j < m; ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / (j + 1);
    if (u[j] - t > 0) theta = t;
  }
  for (int i = 0; i < n; ++i) v[i] = allowed[i] ? std::max(0.0, v[i] - theta) : 0.0;
}

template <typename Fn>
void for_each_live_mixed(const MixedFractions& mix, const PsiOutput& out, Fn&& fn) {
  for (Point p : kPoints) {
    const auto& inflow = out.flows.inflow[index(p)];
    for (std::size_t k = 0; k < inflow.size(); ++k)
      if (mix.mixed[index(p)][k] && inflow[k] > 0) fn(p, static_cast<int>(k));
  }
}

// Split departures whose crossing carries flow: fn(crossing, node).
template <typename Fn>
void for_each_live_split(const PsiOutput& out, Fn&& fn) {
  if (out.splits.empty()) return;
  for (int c = 0; c < kSwitchingCount; ++c) {
    const auto [p, kind] = kSwitchingCrossings[c];
    const auto& sp = out.splits.crossing[c];
    const auto& inflow = out.flows.inflow[index(p)];
    const auto& frac = out.fractions.of(p, kind);
    for (std::size_t k = 0; k < inflow.size(); ++k)
      if (sp.is_split(static_cast<int>(k)) && inflow[k] * frac[k] > 0) fn(c, static_cast<int>(k));
  }
}

// Largest excess of a kind (or arrival window) that keeps a share at a mixed
// node with inflow; `only` restricts the scan to one point.
inline double mix_violation(const MixedFractions& mix, const PsiOutput& out, std::optional<Point> only = std::nullopt) {
  double v = 0.0;
  for_each_live_mixed(mix, out, [&](Point p, int k) {
    if (only && p != *only) return;
    const auto e = excess(out, p, k);
    for (int i = 0; i < admissible(p).count; ++i)
      if (mix.weight[index(p)][i][k] > kActiveFraction) v = std::max(v, e[i]);
  });
  for_each_live_split(out, [&](int c, int k) {
    const Point p = kSwitchingCrossings[c].first;
    if (only && p != *only) return;
    const auto& sp = out.splits.crossing[c];
    const double base = out.tables[p].value[k];
    if (1.0 - sp.late[k] > kActiveFraction) v = std::max(v, sp.cost[0][k] - base);
    if (sp.late[k] > kActiveFraction) v = std::max(v, sp.cost[1][k] - base);
  });
  return v;
}

// Projected step: every share moves down by eta times its excess.
inline void update_mix(MixedFractions& mix, const PsiOutput& out, double eta) {
  for_each_live_mixed(mix, out, [&](Point p, int k) {
    const int n = admissible(p).count;
    const auto e = excess(out, p, k);
    std::array<double, 3> w{};
    std::array<bool, 3> allowed{};
    for (int i = 0; i < n; ++i) {
      allowed[i] = std::isfinite(e[i]);
      w[i] = mix.weight[index(p)][i][k] - (allowed[i] ? eta * e[i] : 0.0);
    }
    project_simplex(w, allowed, n);
    for (int i = 0; i < n; ++i) mix.weight[index(p)][i][k] = w[i];
  });
}

// The same projected step on the early/late shares of split departures.
inline void update_splits(ArrivalSplits& splits, const PsiOutput& out, double eta) {
  for_each_live_split(out, [&](int c, int k) {
    const auto& cur = out.splits.crossing[c];
    std::array<double, 3> w{1.0 - cur.late[k], cur.late[k], 0.0};
    std::array<bool, 3> allowed{std::isfinite(cur.cost[0][k]), std::isfinite(cur.cost[1][k]), false};
    for (int o = 0; o < 2; ++o)
      if (allowed[o]) w[o] -= eta * cur.cost[o][k];
    project_simplex(w, allowed, 2);
    splits.crossing[c].late[k] = w[1];
  });
}

// Nodes with inflow whose committed kind differs between two outputs become
// mixed, sharing equally between the two kinds. Returns the number of new nodes.
inline int absorb_flicker(MixedFractions& mix, const PsiOutput& prev, const PsiOutput& cur) {
  int added = 0;
  for (Point p : kPoints) {
    const auto& sa = prev.schedules[index(p)];
    const auto& sb = cur.schedules[index(p)];
    for (std::size_t k = 0; k < sa.kind_at_node.size(); ++k) {
      const int n = static_cast<int>(k);
      if (mix.mixed[index(p)][k] || sa.at(n) == sb.at(n)) continue;
      if (!(prev.flows.inflow[index(p)][k] > 0) && !(cur.flows.inflow[index(p)][k] > 0)) continue;
      mix.mixed[index(p)][k] = 1;
      for (int i = 0; i < admissible(p).count; ++i) mix.weight[index(p)][i][k] = 0.0;
      mix.weight[index(p)][*slot_of(p, sa.at(n))][k] += 0.5;
      mix.weight[index(p)][*slot_of(p, sb.at(n))][k] += 0.5;
      ++added;
    }
  }
  return added;
}

// Highest arrival cost strictly between nodes a < b, with its node.
inline std::pair<double, int> barrier(const ArrivalProblem& prob, int a, int b) {
  std::pair<double, int> top{-kInf, -1};
  for (int j = a + 1; j < b; ++j) top = std::max(top, {prob.cost(j), j});
  return top;
}

// Departures with flow whose optimal arrival jumps across a cost barrier between
// two outputs (two separated local minima) are divided equally between the
// windows on either side of the barrier peak. Returns the number of new splits.
inline int absorb_arrival_flicker(const Scenario& sc, ArrivalSplits& splits, const PsiOutput& prev,
                                  const PsiOutput& cur) {
  const auto inv_lag = inverse_lags(sc.grid);
  int added = 0;
  for (int c = 0; c < kSwitchingCount; ++c) {
    const auto [p, kind] = kSwitchingCrossings[c];
    const int slot = *slot_of(p, kind);
    auto& sp = splits.crossing[c];
    for (int k = 0; k < sc.grid.n_steps(); ++k) {
      if (sp.is_split(k)) continue;
      const bool flows = prev.flows.inflow[index(p)][k] * prev.fractions.of(p, kind)[k] > 0 ||
                         cur.flows.inflow[index(p)][k] * cur.fractions.of(p, kind)[k] > 0;
      if (!flows) continue;
      const int a = std::min(prev.tables[p].arrival_node[slot][k], cur.tables[p].arrival_node[slot][k]);
      const int b = std::max(prev.tables[p].arrival_node[slot][k], cur.tables[p].arrival_node[slot][k]);
      if (a < 0 || b - a < 2) continue;
      for (const PsiOutput* o : {&cur, &prev}) {
        const auto prob = arrival_problem(sc, o->field, o->tables, p, kind, k, inv_lag);
        const auto [peak, at] = barrier(prob, a, b);
        const double ends = std::max(prob.cost(a), prob.cost(b));
        if (at >= 0 && peak > ends + tie_tolerance(ends)) {
          sp.divider[k] = at;
          sp.late[k] = 0.5;
          ++added;
          break;
        }
      }
    }
    detail::make_monotone(sp);
  }
  return added;
}

inline std::vector<SplitInfo> summarize(const MixedFractions& mix, const PsiOutput& out) {
  std::vector<SplitInfo> infos;
  for (Point p : kPoints) {
    SplitInfo info;
    info.point = p;
    info.contested_nodes = mix.count(p);
    for (int c = 0; c < kSwitchingCount; ++c)
      if (kSwitchingCrossings[c].first == p && !out.splits.empty()) info.arrival_split_nodes += out.splits.crossing[c].count();
    if (!info.contested_nodes && !info.arrival_split_nodes) continue;
    for (std::size_t k = 0; k < mix.mixed[index(p)].size(); ++k) {
      if (!mix.mixed[index(p)][k]) continue;
      int active = 0;
      for (int i = 0; i < admissible(p).count; ++i) active += mix.weight[index(p)][i][k] > kActiveFraction;
      info.interior_nodes += active > 1;
    }
    info.max_violation = mix_violation(mix, out, p);
    infos.push_back(info);
  }
  return infos;
}

inline bool is_two_cycle(const std::vector<PsiOutput>& recent, double cycle_tol) {
  return recent.size() == 3 && x_norm_distance(recent[2].rho, recent[0].rho) <= cycle_tol &&
         x_norm_distance(recent[2].rho, recent[1].rho) > cycle_tol;
}

}  // namespace detail

/// Damped fixed-point iteration for an epsilon-equilibrium, starting from
/// `initial` (empty network when absent). A 2-cycle between pure outputs
/// triggers the next seed; when every seed oscillates, the nodes where the two
/// oscillating outputs disagree carry mixed weights: over the kinds where the
/// committed kind differs, over two arrival windows where the optimal arrival
/// jumps between separated local minima. The weights take projected steps
/// against the cost excess of each option, and nodes that keep flipping join
/// the mixed set, until the damped iteration is stationary and every option that
/// keeps a share is epsilon-optimal up to the grid slack.
// Split-phase iterations without a new smallest violation before the mix step is halved.
inline constexpr int kStallWindow = 50;
// Smallest damping the split phase falls back to when the masses keep oscillating.
inline constexpr double kMinGamma = 1.0 / 64;

inline EquilibriumResult solve_epsilon_equilibrium(const Scenario& sc, const CongestionParams& params,
                                                   const SolverConfig& cfg,
                                                   const std::optional<MassProfile>& initial = std::nullopt) {
  validate(cfg);
  params.validate(sc.costs.T);
  const double tol = cfg.fixed_point_tolerance(sc.mass_bound());
  const double cycle_tol = 10 * tol;
  MassProfile rho = initial ? *initial : MassProfile::zeros(sc.grid);
  int iterations = 0;
  double best_step = kInf;
  SolveDiagnostics diag;
  std::optional<std::pair<PsiOutput, PsiOutput>> oscillation;
  int seed_used = cfg.seeds.front();

  const auto out_of_budget = [&](const char* phase) {
    return ConvergenceError(std::string("fixed-point iteration did not converge (") + phase + ")", best_step, rho,
                            iterations);
  };

  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    seed_used = cfg.seeds[si];
    const auto tie = TieBreak::from_seed(seed_used);
    std::vector<PsiOutput> recent;
    oscillation.reset();
    for (int it = 0;; ++it) {
      if (iterations >= cfg.max_iters) throw out_of_budget("pure phase");
      auto out = apply_psi(sc, params, rho, cfg.epsilon, tie);
      ++iterations;
      diag.record(sc, out);
      // the initial guess is not an iterate, and a repeated output is a fixed point
      const bool settled = !recent.empty() && x_norm_distance(out.rho, recent.back().rho) <= 0.5 * tol;
      const double gamma = ((it == 0 && si == 0) || settled) ? 1.0 : cfg.gamma;
      auto next = blend(rho, out.rho, gamma);
      const double step = x_norm_distance(next, rho);
      best_step = std::min(best_step, step);
      if (step <= tol) return detail::finalize(sc, params, out, cfg.epsilon, seed_used, iterations, diag);
      rho = std::move(next);
      recent.push_back(std::move(out));
      if (recent.size() > 3) recent.erase(recent.begin());
      if (detail::is_two_cycle(recent, cycle_tol)) {
        oscillation.emplace(recent[1], recent[2]);
        break;
      }
      if (it + 1 >= cfg.max_pure_iters) {
        oscillation.emplace(recent[recent.size() - 2], recent.back());
        break;
      }
    }
  }

  if (!cfg.allow_split) throw out_of_budget("oscillation without split");
  auto mix = MixedFractions::none(sc.grid);
  auto splits = ArrivalSplits::none(sc.grid);
  // with nothing contested this is the damped iteration under adaptive damping
  detail::absorb_flicker(mix, oscillation->first, oscillation->second);
  detail::absorb_arrival_flicker(sc, splits, oscillation->first, oscillation->second);

  const auto tie = TieBreak::from_seed(seed_used);
  std::optional<PsiOutput> prev;
  double mix_step = cfg.mix_step;
  double gamma = cfg.gamma;
  double best_violation = kInf, best_split_step = kInf;
  int since_best = 0, since_best_step = 0;
  for (;;) {
    if (iterations >= cfg.max_iters) throw out_of_budget("split phase");
    auto out = apply_psi(sc, params, rho, cfg.epsilon, tie, &mix, &splits);
    ++iterations;
    diag.record(sc, out);
    auto next = blend(rho, out.rho, gamma);
    const double step = x_norm_distance(next, rho);
    best_step = std::min(best_step, step);
    const double violation = detail::mix_violation(mix, out);
    // discretization slack of the certificate: 10 dt L_emp
    const double slack = 10.0 * sc.grid.dt() * flow_lipschitz_bound(sc.arrival, out.flows.exits);
    if (step <= tol && violation <= cfg.epsilon + 0.25 * slack) {
      auto result = detail::finalize(sc, params, out, cfg.epsilon, seed_used, iterations, diag);
      result.splits = detail::summarize(mix, out);
      return result;
    }
    rho = std::move(next);
    if (step < 0.9 * best_split_step) {
      best_split_step = step;
      since_best_step = 0;
    } else if (++since_best_step >= kStallWindow && gamma > kMinGamma) {
      gamma *= 0.5;
      best_split_step = kInf;
      since_best_step = 0;
    }
    if (violation <= cfg.epsilon + 0.25 * slack) {
      // certified weights stay put while the masses settle
      prev = std::move(out);
      continue;
    }
    if (violation < best_violation) {
      best_violation = violation;
      since_best = 0;
    } else if (++since_best >= kStallWindow) {
      mix_step *= 0.5;
      since_best = 0;
    }
    detail::update_mix(mix, out, mix_step);
    detail::update_splits(splits, out, mix_step);
    if (prev) {
      detail::absorb_flicker(mix, *prev, out);
      detail::absorb_arrival_flicker(sc, splits, *prev, out);
    }
    prev = std::move(out);
  }
}

/// max over the 13 components of sup_t | int_0^t (a - b) |.
inline double weak_star_distance(const SplitFractions& a, const SplitFractions& b, const TimeGrid& grid) {
  double d = 0.0;
  a.for_each([&](Point p, int slot, const std::vector<double>& va) {
    const auto& vb = b.f[index(p)][slot];
    std::vector<double> diff(va.size());
    for (std::size_t k = 0; k < va.size(); ++k) diff[k] = va[k] - vb[k];
    for (double c : cumulative_trapezoid(diff, grid.dt())) d = std::max(d, std::abs(c));
  });
  return d;
}

struct RefineResult {
  EquilibriumResult last;
  std::vector<double> epsilons;
  std::vector<double> residuals;
  std::vector<double> weak_star;  // between successive epsilons
};

/// Solves along a strictly decreasing epsilon schedule, warm-starting each solve.
inline RefineResult refine_epsilon(const Scenario& sc, const CongestionParams& params, const SolverConfig& cfg) {
  std::vector<double> schedule = cfg.epsilon_schedule.empty() ? std::vector<double>{cfg.epsilon} : cfg.epsilon_schedule;
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (!(schedule[i] < schedule[i - 1])) throw std::invalid_argument("epsilon schedule must be strictly decreasing");
  RefineResult out;
  std::optional<MassProfile> warm;
  std::optional<SplitFractions> previous;
  for (double eps : schedule) {
    SolverConfig c = cfg;
    c.epsilon = eps;
    auto r = solve_epsilon_equilibrium(sc, params, c, warm);
    out.epsilons.push_back(eps);
    out.residuals.push_back(r.residual.gap);
    if (previous) out.weak_star.push_back(weak_star_distance(*previous, r.fractions, sc.grid));
    previous = r.fractions;
    warm = r.rho;
    out.last = std::move(r);
  }
  return out;
}

}  // namespace mfgtour

#endif  // MFGTOUR_EQUILIBRIUM_HPP_INCLUDED
