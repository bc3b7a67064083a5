#ifndef MFGTOUR_NETWORK_HPP_INCLUDED
#define MFGTOUR_NETWORK_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfgtour {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Error raised when a scenario violates one of its typed invariants.
/// `field()` names the offending configuration entry.
class ScenarioError : public std::invalid_argument {
 public:
  ScenarioError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Length of the minimal path between two angles on the unit-radius circle.
inline double arc_distance(double a, double b) noexcept {
  const double d = std::abs(a - b);
  return std::min(d, kTwoPi - d);
}

// Branch order is the mass-profile order (rho11, rho01, rho10, rho00).
enum class Branch : int { B11 = 0, B01 = 1, B10 = 2, B00 = 3 };
inline constexpr std::array<Branch, 4> kBranches{Branch::B11, Branch::B01, Branch::B10, Branch::B00};

inline constexpr int index(Branch b) noexcept { return static_cast<int>(b); }

struct BranchLabel {
  int w1 = 1;
  int w2 = 1;
  friend bool operator==(const BranchLabel&, const BranchLabel&) = default;
};

inline constexpr BranchLabel label_of(Branch b) noexcept {
  switch (b) {
    case Branch::B11: return {1, 1};
    case Branch::B01: return {0, 1};
    case Branch::B10: return {1, 0};
    case Branch::B00: return {0, 0};
  }
  return {0, 0};
}

inline Branch branch_of(BranchLabel l) {
  if (l.w1 < 0 || l.w1 > 1 || l.w2 < 0 || l.w2 > 1) throw std::invalid_argument("branch label bits must be 0 or 1");
  if (l.w1 == 1) return l.w2 == 1 ? Branch::B11 : Branch::B10;
  return l.w2 == 1 ? Branch::B01 : Branch::B00;
}

/// A label may only lose bits over time (an attraction, once visited, stays visited).
inline bool is_admissible_switch(BranchLabel from, BranchLabel to) noexcept {
  return to.w1 <= from.w1 && to.w2 <= from.w2 && !(from == to);
}

inline const char* branch_name(Branch b) noexcept {
  switch (b) {
    case Branch::B11: return "11";
    case Branch::B01: return "01";
    case Branch::B10: return "10";
    case Branch::B00: return "00";
  }
  return "?";
}

// The five (position, label) pairs where agents decide.
enum class Point : int { Station11 = 0, P1_01 = 1, P2_10 = 2, P1_00 = 3, P2_00 = 4 };
inline constexpr std::array<Point, 5> kPoints{Point::Station11, Point::P1_01, Point::P2_10, Point::P1_00,
                                              Point::P2_00};

inline constexpr int index(Point p) noexcept { return static_cast<int>(p); }

inline constexpr Branch branch_of(Point p) noexcept {
  switch (p) {
    case Point::Station11: return Branch::B11;
    case Point::P1_01: return Branch::B01;
    case Point::P2_10: return Branch::B10;
    case Point::P1_00:
    case Point::P2_00: return Branch::B00;
  }
  return Branch::B00;
}

inline const char* point_name(Point p) noexcept {
  switch (p) {
    case Point::Station11: return "S11";
    case Point::P1_01: return "P1_01";
    case Point::P2_10: return "P2_10";
    case Point::P1_00: return "P1_00";
    case Point::P2_00: return "P2_00";
  }
  return "?";
}

enum class Site { Station, P1, P2 };

inline constexpr Site site_of(Point p) noexcept {
  switch (p) {
    case Point::Station11: return Site::Station;
    case Point::P1_01:
    case Point::P1_00: return Site::P1;
    case Point::P2_10:
    case Point::P2_00: return Site::P2;
  }
  return Site::Station;
}

struct CityGeometry {
  double theta_S = 0.0;
  double theta_1 = std::numbers::pi / 2;
  double theta_2 = 3 * std::numbers::pi / 2;

  double angle(Site s) const noexcept {
    switch (s) {
      case Site::Station: return theta_S;
      case Site::P1: return theta_1;
      case Site::P2: return theta_2;
    }
    return theta_S;
  }
  double distance(Site a, Site b) const noexcept { return arc_distance(angle(a), angle(b)); }
  double circumference() const noexcept { return kTwoPi; }
};

struct CostParams {
  double c1 = 3.0;
  double c2 = 3.0;
  double cS = 4.0;
  double T = 2.0;
};

/// Uniform grid t_k = k * dt, k = 0..n_steps, over [0, T].
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, int n_steps) : horizon_(horizon), n_(n_steps) {
    if (!(horizon > 0)) throw ScenarioError("costs.T", "horizon must be > 0");
    if (n_steps < 2) throw ScenarioError("grid.n_steps", "must be >= 2");
  }

  int n_steps() const noexcept { return n_; }
  int n_nodes() const noexcept { return n_ + 1; }
  double horizon() const noexcept { return horizon_; }
  double dt() const noexcept { return horizon_ / n_; }
  double t(int k) const noexcept { return k == n_ ? horizon_ : k * dt(); }

  /// Trapezoid quadrature weight of node k.
  double weight(int k) const noexcept { return (k == 0 || k == n_) ? 0.5 * dt() : dt(); }

  int nearest_node(double time) const noexcept {
    const long k = std::lround(time / dt());
    return static_cast<int>(std::clamp<long>(k, 0, n_));
  }
  int node_below(double time) const noexcept {
    const auto k = static_cast<long>(std::floor(time / dt() + 1e-12));
    return static_cast<int>(std::clamp<long>(k, 0, n_));
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
    return a.n_ == b.n_ && a.horizon_ == b.horizon_;
  }

 private:
  double horizon_ = 1.0;
  int n_ = 2;
};

/// Cumulative trapezoid integral: out[k] = int_0^{t_k} f.
inline std::vector<double> cumulative_trapezoid(std::span<const double> f, double dt) {
  std::vector<double> out(f.size(), 0.0);
  for (std::size_t k = 1; k < f.size(); ++k) out[k] = out[k - 1] + 0.5 * (f[k - 1] + f[k]) * dt;
  return out;
}

/// Linear interpolation of node samples at an arbitrary time (clamped to [0, T]).
inline double interpolate(std::span<const double> f, const TimeGrid& grid, double time) {
  if (time <= 0) return f.front();
  if (time >= grid.horizon()) return f.back();
  const double x = time / grid.dt();
  const int k = std::min(static_cast<int>(x), grid.n_steps() - 1);
  const double w = x - k;
  return (1 - w) * f[k] + w * f[k + 1];
}

/// External arrival flow at the station, sampled on the grid (agents per unit time).
struct ArrivalFlow {
  std::vector<double> samples;

  double sup() const noexcept {
    return samples.empty() ? 0.0 : *std::max_element(samples.begin(), samples.end());
  }
};

/// Total mass bound K = int_0^T g (trapezoid rule on the grid).
inline double total_mass_bound(const ArrivalFlow& g, const TimeGrid& grid) {
  const auto c = cumulative_trapezoid(g.samples, grid.dt());
  return c.empty() ? 0.0 : c.back();
}

/// Samples g = value on [start, end] and 0 elsewhere.
inline ArrivalFlow constant_on_interval(const TimeGrid& grid, double value, double start, double end) {
  ArrivalFlow g;
  g.samples.assign(grid.n_nodes(), 0.0);
  const double slack = 1e-9 * grid.dt();
  for (int k = 0; k <= grid.n_steps(); ++k) {
    const double t = grid.t(k);
    if (t >= start - slack && t <= end + slack) g.samples[k] = value;
  }
  return g;
}

struct Scenario {
  CityGeometry geometry;
  CostParams costs;
  TimeGrid grid;
  ArrivalFlow arrival;

  double mass_bound() const { return total_mass_bound(arrival, grid); }
};

/// Unchecked configuration as read from a file.
struct RawScenario {
  double theta_S = 0.0;
  double theta_1 = std::numbers::pi / 2;
  double theta_2 = 3 * std::numbers::pi / 2;
  double c1 = 3.0, c2 = 3.0, cS = 4.0, T = 2.0;
  int n_steps = 2000;

  enum class ArrivalKind { ConstantOnInterval, Samples };
  ArrivalKind arrival_kind = ArrivalKind::ConstantOnInterval;
  double arrival_value = 1.0;
  double arrival_start = 0.0;
  double arrival_end = 0.5;
  std::vector<double> arrival_samples;
};

/// Checks every typed invariant and builds the scenario. Throws ScenarioError naming the field.
inline Scenario validate_scenario(const RawScenario& raw) {
  const auto check_angle = [](double a, const char* field) {
    if (!std::isfinite(a) || a < 0.0 || a >= kTwoPi) throw ScenarioError(field, "angle must lie in [0, 2*pi)");
  };
  check_angle(raw.theta_S, "geometry.theta_S");
  check_angle(raw.theta_1, "geometry.theta_1");
  check_angle(raw.theta_2, "geometry.theta_2");
  constexpr double kAngleTol = 1e-12;
  if (arc_distance(raw.theta_S, raw.theta_1) < kAngleTol)
    throw ScenarioError("geometry.theta_1", "coincident angles (theta_S, theta_1)");
  if (arc_distance(raw.theta_S, raw.theta_2) < kAngleTol)
    throw ScenarioError("geometry.theta_2", "coincident angles (theta_S, theta_2)");
  if (arc_distance(raw.theta_1, raw.theta_2) < kAngleTol)
    throw ScenarioError("geometry.theta_2", "coincident angles (theta_1, theta_2)");

  if (!(raw.T > 0) || !std::isfinite(raw.T)) throw ScenarioError("costs.T", "horizon must be > 0");
  const std::array<std::pair<double, const char*>, 3> costs{
      {{raw.c1, "costs.c1"}, {raw.c2, "costs.c2"}, {raw.cS, "costs.cS"}}};
  for (const auto& [c, field] : costs) {
    if (!std::isfinite(c) || c < 0) throw ScenarioError(field, "negative cost");
    if (c == 0) throw ScenarioError(field, "cost must be > 0");
  }
  if (raw.n_steps < 2) throw ScenarioError("grid.n_steps", "must be >= 2");

  Scenario s;
  s.geometry = {raw.theta_S, raw.theta_1, raw.theta_2};
  s.costs = {raw.c1, raw.c2, raw.cS, raw.T};
  s.grid = TimeGrid(raw.T, raw.n_steps);

  if (raw.arrival_kind == RawScenario::ArrivalKind::ConstantOnInterval) {
    if (!std::isfinite(raw.arrival_value) || raw.arrival_value < 0)
      throw ScenarioError("arrival.value", "negative flow");
    if (raw.arrival_end < raw.arrival_start)
      throw ScenarioError("arrival.end", "interval end precedes start");
    s.arrival = constant_on_interval(s.grid, raw.arrival_value, raw.arrival_start, raw.arrival_end);
  } else {
    if (static_cast<int>(raw.arrival_samples.size()) != s.grid.n_nodes())
      throw ScenarioError("arrival.samples", "expected n_steps + 1 = " + std::to_string(s.grid.n_nodes()) +
                                                 " samples, got " + std::to_string(raw.arrival_samples.size()));
    for (std::size_t k = 0; k < raw.arrival_samples.size(); ++k) {
      const double v = raw.arrival_samples[k];
      if (!std::isfinite(v) || v < 0)
        throw ScenarioError("arrival.samples", "negative flow at sample " + std::to_string(k));
    }
    s.arrival.samples = raw.arrival_samples;
  }
  return s;
}

/// The desk scenario used throughout the documentation and tests.
inline RawScenario canonical_raw_scenario(int n_steps = 2000) {
  RawScenario r;
  r.n_steps = n_steps;
  return r;
}

inline Scenario canonical_scenario(int n_steps = 2000) { return validate_scenario(canonical_raw_scenario(n_steps)); }

}  // namespace mfgtour

#endif  // MFGTOUR_NETWORK_HPP_INCLUDED
