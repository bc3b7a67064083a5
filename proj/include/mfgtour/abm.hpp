#ifndef MFGTOUR_ABM_HPP_INCLUDED
#define MFGTOUR_ABM_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "mfgtour/congestion.hpp"
#include "mfgtour/equilibrium.hpp"
#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"
#include "mfgtour/parallel.hpp"
#include "mfgtour/value.hpp"

namespace mfgtour {

enum class EventKind { Enter, Depart, Switch, Stay, StationArrival };

inline const char* event_name(EventKind e) noexcept {
  switch (e) {
    case EventKind::Enter: return "enter";
    case EventKind::Depart: return "depart";
    case EventKind::Switch: return "switch";
    case EventKind::Stay: return "stay";
    case EventKind::StationArrival: return "station_arrival";
  }
  return "?";
}

struct AgentEvent {
  int agent = 0;
  double time = 0.0;
  EventKind kind = EventKind::Enter;
  Branch branch = Branch::B11;  // branch the agent is on right after the event
};

/// One decision taken at a significant point.
struct Decision {
  Point point = Point::Station11;
  double time = 0.0;
  ChoiceKind kind = ChoiceKind::Stay;
};

struct Agent {
  int id = 0;
  double entry_time = 0.0;
  std::vector<Decision> decisions;
  std::vector<AgentEvent> events;
  // time the agent entered each branch; NaN if never
  std::array<double, 4> branch_entry{kNaN, kNaN, kNaN, kNaN};
  double realized_cost = 0.0;
  double value_at_entry = 0.0;

  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  /// Branch occupied at time t (nullopt before entry).
  std::optional<Branch> branch_at(double t) const {
    std::optional<Branch> b;
    double latest = -kInf;
    for (Branch w : kBranches) {
      const double e = branch_entry[index(w)];
      if (!std::isnan(e) && e <= t && e >= latest) {
        latest = e;
        b = w;
      }
    }
    return b;
  }

  double excess() const noexcept { return realized_cost - value_at_entry; }
};

struct SimulationTrace {
  TimeGrid grid;
  int n_agents = 0;
  double mass_bound = 0.0;
  std::vector<Agent> agents;

  /// All events ordered by agent, then time.
  std::vector<AgentEvent> events() const {
    std::vector<AgentEvent> all;
    for (const auto& a : agents) all.insert(all.end(), a.events.begin(), a.events.end());
    return all;
  }

  double max_excess() const noexcept {
    double m = -kInf;
    for (const auto& a : agents) m = std::max(m, a.excess());
    return agents.empty() ? 0.0 : m;
  }
};

struct AbmConfig {
  int n_agents = 10000;
  std::uint64_t seed = 0;
  double epsilon = 1e-3;
  int tie_seed = 0;
  unsigned threads = 0;
};

namespace detail {

// Inverse of the cumulative trapezoid of g, with g linear between nodes.
class EntrySampler {
 public:
  EntrySampler(const TimeGrid& grid, const ArrivalFlow& g)
      : grid_(grid), g_(g.samples), cum_(cumulative_trapezoid(g.samples, grid.dt())) {}

  double total() const noexcept { return cum_.empty() ? 0.0 : cum_.back(); }

  /// Time at which the cumulative arrivals reach u * total, u in [0, 1).
  double quantile(double u) const {
    const double target = u * total();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
    int k = static_cast<int>(it - cum_.begin()) - 1;
    k = std::clamp(k, 0, grid_.n_steps() - 1);
    const double r = target - cum_[k];
    const double dt = grid_.dt();
    const double a = 0.5 * (g_[k + 1] - g_[k]) / dt;
    const double b = g_[k];
    double x;
    if (r <= 0) {
      x = 0.0;
    } else if (std::abs(a) * dt < 1e-14 * std::max(1.0, b)) {
      x = b > 0 ? r / b : 0.0;
    } else {
      // root of a x^2 + b x = r in the stable form
      x = 2 * r / (b + std::sqrt(std::max(0.0, b * b + 4 * a * r)));
    }
    return std::min(grid_.t(k) + std::clamp(x, 0.0, dt), grid_.horizon());
  }

 private:
  TimeGrid grid_;
  std::vector<double> g_;
  std::vector<double> cum_;
};

struct OffGridArrival {
  double time = kInf;
  double cost = kInf;  // kinetic + congestion on the current branch
};

// Arrival window of a split departure: s in (after, until].
struct Window {
  double after = -kInf;
  double until = kInf;
};

// min over s in (t, T] within the window of d2/(2(s-t)) + int_t^s F_b + V(s),
// grid scan then golden section.
inline OffGridArrival search_off_grid(const TimeGrid& grid, const CongestionField& f, Branch b, double branch_entry,
                                      double distance, std::span<const double> target, double t,
                                      Window w = {}) {
  const auto objective = [&](double s) {
    const double v = interpolate(target, grid, s);
    return 0.5 * distance * distance / (s - t) + f.integral(b, branch_entry, t, s) + v;
  };
  int best_j = -1;
  double best = kInf;
  for (int j = grid.node_below(t) + 1; j <= grid.n_steps(); ++j) {
    if (!(grid.t(j) > t) || !(grid.t(j) > w.after) || grid.t(j) > w.until) continue;
    const double c = objective(grid.t(j));
    if (c < best) {
      best = c;
      best_j = j;
    }
  }
  if (best_j < 0) return {};
  double lo = std::max({t + 1e-3 * grid.dt(), grid.t(std::max(best_j - 1, 0)), w.after + 1e-3 * grid.dt()});
  double hi = std::min(grid.t(std::min(best_j + 1, grid.n_steps())), w.until);
  double s_best = grid.t(best_j);
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
  double f1 = objective(x1), f2 = objective(x2);
  for (int it = 0; it < 40 && hi - lo > 1e-9 * grid.dt(); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = objective(x2);
    }
  }
  const double s_golden = f1 <= f2 ? x1 : x2;
  if (std::min(f1, f2) < best) s_best = s_golden;
  const double v = interpolate(target, grid, s_best);
  return {s_best, objective(s_best) - v};
}

inline ChoiceKind draw_kind(const SplitFractions& fr, Point p, int k, std::mt19937_64& rng) {
  const auto a = admissible(p);
  double total = 0.0;
  for (int i = 0; i < a.count; ++i) total += fr.f[index(p)][i][k];
  if (!(total > 0)) return ChoiceKind::Stay;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (int i = 0; i < a.count; ++i) {
    const double w = fr.f[index(p)][i][k];
    if (w <= 0) continue;
    if (u < w) return a.kinds[i];
    u -= w;
  }
  for (int i = a.count - 1; i >= 0; --i)
    if (fr.f[index(p)][i][k] > 0) return a.kinds[i];
  return ChoiceKind::Stay;
}

inline double unvisited_cost(const CostParams& c, BranchLabel l) noexcept {
  return (l.w1 ? c.c1 : 0.0) + (l.w2 ? c.c2 : 0.0);
}

// Window drawn for a departure at node k on a crossing whose departures split
// between an early and a late arrival; unrestricted elsewhere.
inline Window draw_window(const ArrivalSplits* splits, Point p, ChoiceKind kind, int k, const TimeGrid& grid,
                          std::mt19937_64& rng) {
  if (!splits || splits->empty()) return {};
  for (int c = 0; c < kSwitchingCount; ++c) {
    if (kSwitchingCrossings[c] != std::pair{p, kind}) continue;
    const auto& sp = splits->crossing[c];
    if (!sp.is_split(k)) return {};
    const double cut = grid.t(sp.divider[k]);
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < sp.late[k]) return {cut, kInf};
    return {-kInf, cut};
  }
  return {};
}

inline void simulate_agent(const Scenario& sc, const CongestionField& field, const ValueTables& vt,
                           const SplitFractions& fractions, const ArrivalSplits* splits, Agent& agent,
                           std::mt19937_64& rng) {
  const auto& grid = sc.grid;
  const double T = grid.horizon();
  Point p = Point::Station11;
  double t = agent.entry_time;
  double branch_start = t;
  agent.branch_entry[index(Branch::B11)] = t;
  agent.value_at_entry = interpolate(vt[Point::Station11].value, grid, t);
  agent.events.push_back({agent.id, t, EventKind::Enter, Branch::B11});

  for (;;) {
    const Branch b = branch_of(p);
    const Site here = site_of(p);
    const double terminal = unvisited_cost(sc.costs, label_of(b));
    const int k = grid.nearest_node(t);
    ChoiceKind kind = draw_kind(fractions, p, k, rng);
    if (t >= T) kind = ChoiceKind::Stay;

    std::optional<OffGridArrival> move;
    if (const auto np = next_point(p, kind)) {
      const auto window = draw_window(splits, p, kind, k, grid, rng);
      const auto found = search_off_grid(grid, field, b, branch_start, sc.geometry.distance(here, destination(p, kind)),
                                         vt[*np].value, t, window);
      if (std::isfinite(found.time)) move = found;
      else kind = ChoiceKind::Stay;
    }
    agent.decisions.push_back({p, t, kind});

    if (kind == ChoiceKind::Stay) {
      agent.realized_cost += field.integral(b, branch_start, t, T) + terminal + (here == Site::Station ? 0.0 : sc.costs.cS);
      agent.events.push_back({agent.id, t, EventKind::Stay, b});
      return;
    }
    if (kind == ChoiceKind::ToStation) {
      const double d = sc.geometry.distance(here, Site::Station);
      agent.realized_cost += 0.5 * d * d / (T - t) + field.integral(b, branch_start, t, T) + terminal;
      agent.events.push_back({agent.id, t, EventKind::Depart, b});
      agent.events.push_back({agent.id, T, EventKind::StationArrival, b});
      return;
    }
    agent.realized_cost += move->cost;
    agent.events.push_back({agent.id, t, EventKind::Depart, b});
    p = *next_point(p, kind);
    t = move->time;
    branch_start = t;
    agent.branch_entry[index(branch_of(p))] = t;
    agent.events.push_back({agent.id, t, EventKind::Switch, branch_of(p)});
  }
}

}  // namespace detail

/// Samples N entry times from g (stratified inverse CDF) and lets every agent
/// best-respond to the frozen mass profile rho. Decisions follow `fractions`
/// when given (drawing at mixed nodes), otherwise the committed epsilon
/// schedules at rho. Arrival instants are searched off the grid; at departures
/// listed in `splits` the agent first draws the early or the late window.
inline SimulationTrace simulate_best_response(const Scenario& sc, const CongestionParams& params,
                                              const MassProfile& rho, const AbmConfig& cfg,
                                              const SplitFractions* fractions = nullptr,
                                              const ArrivalSplits* splits = nullptr) {
  if (cfg.n_agents < 0) throw std::invalid_argument("agent count must be >= 0");
  SimulationTrace trace;
  trace.grid = sc.grid;
  trace.n_agents = cfg.n_agents;
  trace.mass_bound = sc.mass_bound();
  const detail::EntrySampler sampler(sc.grid, sc.arrival);
  if (cfg.n_agents == 0 || !(sampler.total() > 0)) return trace;

  const auto field = CongestionField::from_params(sc.grid, params, rho);
  const auto vt = build_value_tables(sc, field);
  SplitFractions own;
  if (!fractions) {
    own = SplitFractions::from_schedules(build_choice_schedules(vt, cfg.epsilon, TieBreak::from_seed(cfg.tie_seed)),
                                         sc.grid);
    fractions = &own;
  }

  trace.agents.resize(cfg.n_agents);
  detail::parallel_for(cfg.n_agents, cfg.threads, [&](int i) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    auto& a = trace.agents[i];
    a.id = i;
    const double u = (i + std::uniform_real_distribution<double>(0.0, 1.0)(rng)) / cfg.n_agents;
    a.entry_time = sampler.quantile(std::min(u, std::nextafter(1.0, 0.0)));
    detail::simulate_agent(sc, field, vt, *fractions, splits, a, rng);
  });
  return trace;
}

/// Per node: (number of agents on the branch) * MassBound / N.
inline MassProfile empirical_mass(const SimulationTrace& trace) {
  const auto& grid = trace.grid;
  MassProfile m = MassProfile::zeros(grid);
  if (trace.n_agents == 0) return m;
  const double weight = trace.mass_bound / trace.n_agents;
  // first node with t_k >= time
  const auto first_node = [&](double time) {
    int k = static_cast<int>(std::ceil(time / grid.dt() - 1e-9));
    k = std::max(k, 0);
    while (k <= grid.n_steps() && grid.t(k) < time) ++k;
    while (k > 0 && grid.t(k - 1) >= time) --k;
    return k;
  };
  std::array<std::vector<double>, 4> diff;
  for (auto& d : diff) d.assign(grid.n_nodes() + 1, 0.0);
  for (const auto& a : trace.agents) {
    std::vector<std::pair<double, Branch>> spans;
    for (Branch w : kBranches)
      if (!std::isnan(a.branch_entry[index(w)])) spans.push_back({a.branch_entry[index(w)], w});
    std::sort(spans.begin(), spans.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t s = 0; s < spans.size(); ++s) {
      const int from = first_node(spans[s].first);
      const int to = s + 1 < spans.size() ? first_node(spans[s + 1].first) : grid.n_nodes();
      if (from >= to) continue;
      diff[index(spans[s].second)][from] += weight;
      diff[index(spans[s].second)][to] -= weight;
    }
  }
  for (int w = 0; w < 4; ++w) {
    double acc = 0.0;
    for (int k = 0; k < grid.n_nodes(); ++k) {
      acc += diff[w][k];
      m.rho[w][k] = std::max(0.0, acc);
    }
  }
  return m;
}

}  // namespace mfgtour

#endif  // MFGTOUR_ABM_HPP_INCLUDED
