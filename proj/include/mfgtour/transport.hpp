#ifndef MFGTOUR_TRANSPORT_HPP_INCLUDED
#define MFGTOUR_TRANSPORT_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"
#include "mfgtour/value.hpp"

namespace mfgtour {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Departure-time -> arrival-time map of one crossing along a branch.
///
/// Only active departures (nodes that actually send mass) are required to be
/// monotone; they are repaired by a running-max clamp and a repair larger than
/// one grid cell is reported as crossing trajectories.
class ArrivalMap {
 public:
  ArrivalMap() = default;

  /// `raw_arrival[k]` is the arrival time of a departure at node k (non-finite: no move).
  /// An empty `active` mask marks every node with a finite arrival as active.
  /// With `strict` false, crossings are clamped without raising.
  static ArrivalMap build(const TimeGrid& grid, double distance, std::span<const double> raw_arrival,
                          std::span<const char> active = {}, bool strict = true) {
    if (!(distance > 0)) throw std::invalid_argument("arrival map needs a positive distance");
    if (static_cast<int>(raw_arrival.size()) != grid.n_nodes())
      throw std::invalid_argument("arrival map needs one arrival per grid node");
    ArrivalMap m;
    m.grid_ = grid;
    m.distance_ = distance;
    m.raw_.assign(raw_arrival.begin(), raw_arrival.end());
    m.arrival_ = m.raw_;
    const double dt = grid.dt();
    double running = -kInf;
    for (int k = 0; k < grid.n_nodes(); ++k) {
      const bool finite = std::isfinite(m.raw_[k]);
      const bool act = finite && (active.empty() || active[k]);
      if (!active.empty() && active[k] && !finite)
        throw TransportError("active departure at node " + std::to_string(k) + " has no arrival");
      if (!act) continue;
      if (m.raw_[k] <= grid.t(k))
        throw TransportError("arrival precedes departure at node " + std::to_string(k));
      m.active_nodes_.push_back(k);
      if (m.raw_[k] < running) {
        const double repair = running - m.raw_[k];
        m.max_repair_ = std::max(m.max_repair_, repair);
        if (strict && repair > dt * (1 + 1e-9)) throw TransportError("crossing trajectories at node " + std::to_string(k));
        m.arrival_[k] = running;
      }
      running = m.arrival_[k];
    }
    return m;
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  double distance() const noexcept { return distance_; }
  const std::vector<int>& active_nodes() const noexcept { return active_nodes_; }
  double max_repair() const noexcept { return max_repair_; }

  double arrival(int k) const { return arrival_.at(k); }
  double raw_arrival(int k) const { return raw_.at(k); }
  double departure(int k) const { return grid_.t(k); }
  /// Slowness 1/|u| of the constant-speed move started at node k.
  double slowness(int k) const { return (arrival_.at(k) - grid_.t(k)) / distance_; }

  /// Position-dependent passing time t_k + slowness_k * theta of departure k.
  double passing_time(int k, double theta) const { return grid_.t(k) + slowness(k) * theta; }

  /// Departure time of the agent found at distance `theta` from the origin at time t.
  std::optional<double> departure_time(double theta, double t) const {
    const auto b = bracket(theta, t);
    if (!b) return std::nullopt;
    return b->departure;
  }
  std::optional<double> departure_time(double t) const { return departure_time(distance_, t); }

  /// dLambda/dt at (theta, t); nullopt where no active departure passes.
  std::optional<double> departure_rate(double theta, double t) const {
    const auto b = bracket(theta, t);
    if (!b) return std::nullopt;
    return b->rate;
  }

  /// Departure time, dLambda/dt and slowness of the agents passing theta at time t.
  struct Passage {
    double departure;
    double rate;
    double slowness;
  };
  std::optional<Passage> passage(double theta, double t) const { return bracket(theta, t); }

  /// max |Lambda + slowness(Lambda) d - t| over active constructed nodes, using repaired arrivals.
  double identity_error() const {
    double e = 0.0;
    for (int k : active_nodes_) e = std::max(e, std::abs(grid_.t(k) + slowness(k) * distance_ - arrival_[k]));
    return e;
  }

  /// Same identity with the raw (pre-repair) slowness against the repaired arrival.
  double raw_identity_error() const {
    double e = 0.0;
    for (int k : active_nodes_) {
      const double raw_slowness = (raw_[k] - grid_.t(k)) / distance_;
      e = std::max(e, std::abs(grid_.t(k) + raw_slowness * distance_ - arrival_[k]));
    }
    return e;
  }

 private:
  using Bracket = Passage;

  // Interpolates between consecutive grid nodes that are both active.
  std::optional<Bracket> bracket(double theta, double t) const {
    if (active_nodes_.empty() || theta < 0 || theta > distance_) return std::nullopt;
    const auto h = [&](std::size_t i) { return passing_time(active_nodes_[i], theta); };
    if (active_nodes_.size() == 1) {
      if (std::abs(h(0) - t) > 1e-12) return std::nullopt;
      return Bracket{grid_.t(active_nodes_[0]), 0.0, slowness(active_nodes_[0])};
    }
    std::size_t lo = 0, hi = active_nodes_.size() - 1;
    if (t < h(lo) || t > h(hi)) return std::nullopt;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (h(mid) <= t) lo = mid;
      else hi = mid;
    }
    const int k0 = active_nodes_[lo], k1 = active_nodes_[hi];
    if (k1 != k0 + 1) {
      // gap in departures: only the end points carry agents
      if (std::abs(t - h(lo)) <= 1e-12) return Bracket{grid_.t(k0), 0.0, slowness(k0)};
      if (std::abs(t - h(hi)) <= 1e-12) return Bracket{grid_.t(k1), 0.0, slowness(k1)};
      return std::nullopt;
    }
    const double span = h(hi) - h(lo);
    if (span <= 0) return Bracket{grid_.t(k0), kInf, slowness(k0)};
    const double w = (t - h(lo)) / span;
    return Bracket{grid_.t(k0) + w * (grid_.t(k1) - grid_.t(k0)), (grid_.t(k1) - grid_.t(k0)) / span,
                   (1 - w) * slowness(k0) + w * slowness(k1)};
  }

  TimeGrid grid_;
  double distance_ = 1.0;
  std::vector<double> raw_;
  std::vector<double> arrival_;
  std::vector<int> active_nodes_;
  double max_repair_ = 0.0;
};

/// Arrival map of departures from `point` that commit to `kind` under `schedule`.
inline ArrivalMap arrival_time_map(const Scenario& sc, Point point, ChoiceKind kind, const ChoiceSchedule& schedule,
                                   const ValueTables& tables) {
  const auto slot = slot_of(point, kind);
  if (!slot || !is_moving(kind)) throw std::invalid_argument("arrival map needs a moving choice admissible at the point");
  std::vector<char> active(sc.grid.n_nodes(), 0);
  for (int k = 0; k < sc.grid.n_nodes(); ++k) active[k] = schedule.at(k) == kind && k < sc.grid.n_steps();
  return ArrivalMap::build(sc.grid, sc.geometry.distance(site_of(point), destination(point, kind)),
                           tables[point].arrival[*slot], active);
}

/// Conservative binning of entry_flow * fraction through the map. Each node's
/// trapezoid mass is deposited at its arrival time, split linearly between the
/// two neighbouring nodes, then divided by the node weight. Arrivals after T
/// stay on the branch.
inline std::vector<double> push_flow(const TimeGrid& grid, std::span<const double> entry_flow,
                                     std::span<const double> fraction, const ArrivalMap& map) {
  const int nn = grid.n_nodes();
  if (static_cast<int>(entry_flow.size()) != nn || static_cast<int>(fraction.size()) != nn)
    throw std::invalid_argument("push_flow inputs must cover every grid node");
  std::vector<double> deposit(nn, 0.0);
  const double dt = grid.dt();
  for (int k = 0; k < nn; ++k) {
    const double mass = grid.weight(k) * entry_flow[k] * fraction[k];
    if (mass <= 0) continue;
    const double a = map.arrival(k);
    if (!std::isfinite(a)) throw TransportError("flow leaves node " + std::to_string(k) + " without an arrival");
    if (a > grid.horizon() * (1 + 1e-12)) continue;
    const double x = std::min(a, grid.horizon()) / dt;
    const int j = std::min(static_cast<int>(x), grid.n_steps());
    const double w = (j == grid.n_steps()) ? 0.0 : x - j;
    deposit[j] += (1 - w) * mass;
    if (w > 0) deposit[j + 1] += w * mass;
  }
  for (int j = 0; j < nn; ++j) deposit[j] /= grid.weight(j);
  return deposit;
}

/// Arrival flows at the switching points: g01 at (theta_1,0,1), g10 at (theta_2,1,0),
/// g12 at (theta_2,0,0) and g21 at (theta_1,0,0).
struct ExitFlows {
  std::vector<double> g01, g10, g12, g21;

  static ExitFlows zeros(const TimeGrid& grid) {
    ExitFlows e;
    e.g01.assign(grid.n_nodes(), 0.0);
    e.g10 = e.g12 = e.g21 = e.g01;
    return e;
  }
};

/// Conservation tolerance 10 dt sup g.
inline double conservation_tolerance(const TimeGrid& grid, const ArrivalFlow& g) {
  return 10 * grid.dt() * g.sup();
}

struct ConservationReport {
  double max_violation = 0.0;
  int node = -1;
  int inequality = -1;  // 0: g vs g01+g10, 1: g01 vs g12, 2: g10 vs g21
  bool ok(double tol) const noexcept { return max_violation <= tol; }
};

/// Checks the cumulative inequalities int g >= int g01 + int g10, int g01 >= int g12,
/// int g10 >= int g21 at every node.
inline ConservationReport check_conservation(const TimeGrid& grid, const ArrivalFlow& g, const ExitFlows& e) {
  const double dt = grid.dt();
  const auto cg = cumulative_trapezoid(g.samples, dt);
  const auto c01 = cumulative_trapezoid(e.g01, dt), c10 = cumulative_trapezoid(e.g10, dt);
  const auto c12 = cumulative_trapezoid(e.g12, dt), c21 = cumulative_trapezoid(e.g21, dt);
  ConservationReport r;
  for (int k = 0; k < grid.n_nodes(); ++k) {
    const std::array<double, 3> excess{c01[k] + c10[k] - cg[k], c12[k] - c01[k], c21[k] - c10[k]};
    for (int i = 0; i < 3; ++i)
      if (excess[i] > r.max_violation) r = {excess[i], k, i};
  }
  return r;
}

/// Branch masses from cumulative flows; negative masses beyond the conservation
/// tolerance are an error, rounding-level ones are clamped to zero.
inline MassProfile branch_mass(const TimeGrid& grid, const ArrivalFlow& g, const ExitFlows& e) {
  const double dt = grid.dt();
  const auto cg = cumulative_trapezoid(g.samples, dt);
  const auto c01 = cumulative_trapezoid(e.g01, dt), c10 = cumulative_trapezoid(e.g10, dt);
  const auto c12 = cumulative_trapezoid(e.g12, dt), c21 = cumulative_trapezoid(e.g21, dt);
  const double tol = conservation_tolerance(grid, g) + 1e-12;
  MassProfile m = MassProfile::zeros(grid);
  for (int k = 0; k < grid.n_nodes(); ++k) {
    const std::array<double, 4> r{cg[k] - c01[k] - c10[k], c01[k] - c12[k], c10[k] - c21[k], c12[k] + c21[k]};
    for (int w = 0; w < 4; ++w) {
      if (r[w] < -tol)
        throw TransportError("conservation violated on branch " + std::string(branch_name(kBranches[w])) + " at node " +
                             std::to_string(k));
      m.rho[w][k] = std::max(0.0, r[w]);
    }
  }
  return m;
}

/// Largest instantaneous in+out flow over branches and nodes.
inline double flow_lipschitz_bound(const ArrivalFlow& g, const ExitFlows& e) {
  double L = 0.0;
  for (std::size_t k = 0; k < g.samples.size(); ++k) {
    L = std::max({L, g.samples[k] + e.g01[k] + e.g10[k], e.g01[k] + e.g12[k], e.g10[k] + e.g21[k],
                  e.g12[k] + e.g21[k]});
  }
  return L;
}

struct MembershipReport {
  double sum_identity_error = 0.0;  // max_k |sum_w rho^w - int_0^t g|
  double bound_violation = 0.0;     // max excess below 0 or above K
  double lipschitz = 0.0;           // empirical max |rho_{k+1} - rho_k| / dt
  double lipschitz_bound = 0.0;
  bool in_x(double tol) const noexcept {
    return sum_identity_error <= tol && bound_violation <= tol && lipschitz <= lipschitz_bound * (1 + 1e-9) + 1e-12;
  }
};

/// Membership of a mass profile in X: bounds, total-mass identity and Lipschitz constant.
inline MembershipReport check_membership(const TimeGrid& grid, const ArrivalFlow& g, const MassProfile& rho,
                                         double lipschitz_bound) {
  MembershipReport r;
  const auto cg = cumulative_trapezoid(g.samples, grid.dt());
  const double K = cg.back();
  r.lipschitz_bound = lipschitz_bound;
  for (int k = 0; k < grid.n_nodes(); ++k) {
    r.sum_identity_error = std::max(r.sum_identity_error, std::abs(rho.total(k) - cg[k]));
    for (int w = 0; w < 4; ++w) {
      const double v = rho.rho[w][k];
      r.bound_violation = std::max({r.bound_violation, -v, v - K});
      if (k > 0) r.lipschitz = std::max(r.lipschitz, std::abs(v - rho.rho[w][k - 1]) / grid.dt());
    }
  }
  return r;
}

/// Spatial density m(theta, t) = entry(Lambda) fraction(Lambda) (-Lambda_theta) of a crossing.
inline double spatial_density(const ArrivalMap& map, std::span<const double> entry_flow,
                              std::span<const double> fraction, double theta, double t) {
  const auto p = map.passage(theta, t);
  if (!p || !std::isfinite(p->rate)) return 0.0;
  // -Lambda_theta = slowness(Lambda) * Lambda_t
  return interpolate(entry_flow, map.grid(), p->departure) * interpolate(fraction, map.grid(), p->departure) *
         p->slowness * p->rate;
}

}  // namespace mfgtour

#endif  // MFGTOUR_TRANSPORT_HPP_INCLUDED
