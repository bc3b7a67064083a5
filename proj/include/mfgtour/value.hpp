#ifndef MFGTOUR_VALUE_HPP_INCLUDED
#define MFGTOUR_VALUE_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfgtour/congestion.hpp"
#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"

namespace mfgtour {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Kinds are named by destination; "stay" means remain at the current site until T.
enum class ChoiceKind : int { Stay = 0, ToStation = 1, ToP1 = 2, ToP2 = 3 };

inline const char* kind_name(ChoiceKind k) noexcept {
  switch (k) {
    case ChoiceKind::Stay: return "stay";
    case ChoiceKind::ToStation: return "to_station";
    case ChoiceKind::ToP1: return "to_P1";
    case ChoiceKind::ToP2: return "to_P2";
  }
  return "?";
}

/// Admissible kinds at a point, in slot order. Slot i corresponds to split fraction i+1.
struct Admissible {
  std::array<ChoiceKind, 3> kinds{};
  int count = 0;
  std::span<const ChoiceKind> span() const noexcept { return {kinds.data(), static_cast<std::size_t>(count)}; }
};

inline constexpr Admissible admissible(Point p) noexcept {
  switch (p) {
    case Point::Station11: return {{ChoiceKind::Stay, ChoiceKind::ToP1, ChoiceKind::ToP2}, 3};
    case Point::P1_01: return {{ChoiceKind::Stay, ChoiceKind::ToStation, ChoiceKind::ToP2}, 3};
    case Point::P2_10: return {{ChoiceKind::Stay, ChoiceKind::ToStation, ChoiceKind::ToP1}, 3};
    case Point::P1_00:
    case Point::P2_00: return {{ChoiceKind::Stay, ChoiceKind::ToStation, ChoiceKind::Stay}, 2};
  }
  return {};
}

inline std::optional<int> slot_of(Point p, ChoiceKind k) noexcept {
  const auto a = admissible(p);
  for (int i = 0; i < a.count; ++i)
    if (a.kinds[i] == k) return i;
  return std::nullopt;
}

inline bool is_moving(ChoiceKind k) noexcept { return k != ChoiceKind::Stay; }

inline Site destination(Point p, ChoiceKind k) noexcept {
  switch (k) {
    case ChoiceKind::Stay: return site_of(p);
    case ChoiceKind::ToStation: return Site::Station;
    case ChoiceKind::ToP1: return Site::P1;
    case ChoiceKind::ToP2: return Site::P2;
  }
  return site_of(p);
}

/// Point reached when leaving `p` with a move to an attraction, if any.
inline std::optional<Point> next_point(Point p, ChoiceKind k) noexcept {
  if (p == Point::Station11 && k == ChoiceKind::ToP1) return Point::P1_01;
  if (p == Point::Station11 && k == ChoiceKind::ToP2) return Point::P2_10;
  if (p == Point::P1_01 && k == ChoiceKind::ToP2) return Point::P2_00;
  if (p == Point::P2_10 && k == ChoiceKind::ToP1) return Point::P1_00;
  return std::nullopt;
}

/// Fixed preference permutation used to break exact ties between candidate kinds.
struct TieBreak {
  std::array<ChoiceKind, 4> order{ChoiceKind::Stay, ChoiceKind::ToStation, ChoiceKind::ToP1, ChoiceKind::ToP2};

  /// Seed s selects the (s mod 24)-th lexicographic permutation; seed 0 prefers P1 over P2.
  static TieBreak from_seed(int seed) {
    TieBreak t;
    std::array<int, 4> perm{0, 1, 2, 3};
    const int steps = ((seed % 24) + 24) % 24;
    for (int i = 0; i < steps; ++i) std::next_permutation(perm.begin(), perm.end());
    for (int i = 0; i < 4; ++i) t.order[i] = static_cast<ChoiceKind>(perm[i]);
    return t;
  }
  static TieBreak prefer_p1() { return from_seed(0); }
  static TieBreak prefer_p2() { return from_seed(1); }

  int rank(ChoiceKind k) const noexcept {
    for (int i = 0; i < 4; ++i)
      if (order[i] == k) return i;
    return 4;
  }
};

/// Tie tolerance for detecting exact multiplicity of optimal choices.
inline double tie_tolerance(double value) noexcept { return 1e-9 * std::max(1.0, std::abs(value)); }

/// Candidate values and optimizing arrivals of every admissible choice at one node.
struct PointEval {
  double value = kInf;
  int n_slots = 0;
  std::array<double, 3> candidate{kInf, kInf, kInf};
  std::array<double, 3> arrival{kInf, kInf, kInf};   // NaN for stay
  std::array<int, 3> arrival_node{-1, -1, -1};
  std::vector<ChoiceKind> optimal;                     // kinds within tie tolerance of value
};

namespace detail {

struct ArrivalSearch {
  double value = kInf;
  int node = -1;
  double time = kInf;
};

inline std::vector<double> inverse_lags(const TimeGrid& grid) {
  std::vector<double> inv(grid.n_nodes(), kInf);
  for (int m = 1; m < grid.n_nodes(); ++m) inv[m] = 1.0 / (m * grid.dt());
  return inv;
}

// min over nodes j in (k, n] of  half_d2/(t_j - t_k) + prefix[j] - prefix[k] + target[j].
// The smallest minimizing node is kept; the arrival time is refined by a 3-point parabola.
inline double arrival_cost(double half_d2, const double* lag, const double* p, const double* v, int k, int j) {
  return half_d2 * lag[j - k] + p[j] + v[j];
}

inline ArrivalSearch refine_arrival(double half_d2, std::span<const double> inv_lag, std::span<const double> prefix,
                                    std::span<const double> target, int k, int bj, double best,
                                    const TimeGrid& grid) {
  ArrivalSearch r;
  if (bj < 0) return r;
  const int n = grid.n_steps();
  r.value = best - prefix[k];
  r.node = bj;
  r.time = grid.t(bj);
  if (bj > k + 1 && bj < n) {
    const double fm = arrival_cost(half_d2, inv_lag.data(), prefix.data(), target.data(), k, bj - 1);
    const double fp = arrival_cost(half_d2, inv_lag.data(), prefix.data(), target.data(), k, bj + 1);
    const double denom = fm - 2 * best + fp;
    if (denom > 0 && std::isfinite(denom)) {
      const double shift = std::clamp(0.5 * (fm - fp) / denom, -0.5, 0.5);
      r.time = grid.t(bj) + shift * grid.dt();
    }
  }
  return r;
}

inline ArrivalSearch search_arrival(double half_d2, std::span<const double> inv_lag, std::span<const double> prefix,
                                    std::span<const double> target, int k, const TimeGrid& grid) {
  const int n = grid.n_steps();
  if (k >= n) return {};
  double best = kInf;
  int bj = -1;
  for (int j = k + 1; j <= n; ++j) {
    const double c = arrival_cost(half_d2, inv_lag.data(), prefix.data(), target.data(), k, j);
    if (c < best) {
      best = c;
      bj = j;
    }
  }
  return refine_arrival(half_d2, inv_lag, prefix, target, k, bj, best, grid);
}

// The same search for every node in [k_begin, k_end) sharing one prefix table.
// The lag term half_d2 / (t_j - t_k) has negative mixed differences in (j, k),
// so the smallest minimizer is nondecreasing in k and divide and conquer over k
// needs O(n log n) evaluations.
inline void search_arrivals(double half_d2, std::span<const double> inv_lag, std::span<const double> prefix,
                            std::span<const double> target, int k_begin, int k_end, const TimeGrid& grid,
                            std::vector<ArrivalSearch>& out) {
  const int n = grid.n_steps();
  k_end = std::min(k_end, n);
  const auto solve = [&](auto&& self, int lo, int hi, int opt_lo, int opt_hi) -> void {
    if (lo >= hi) return;
    const int k = lo + (hi - lo) / 2;
    double best = kInf;
    int bj = -1;
    for (int j = std::max(opt_lo, k + 1); j <= opt_hi; ++j) {
      const double c = arrival_cost(half_d2, inv_lag.data(), prefix.data(), target.data(), k, j);
      if (c < best) {
        best = c;
        bj = j;
      }
    }
    out[k] = refine_arrival(half_d2, inv_lag, prefix, target, k, bj, best, grid);
    self(self, lo, k, opt_lo, bj < 0 ? opt_hi : bj);
    self(self, k + 1, hi, bj < 0 ? opt_lo : bj, opt_hi);
  };
  solve(solve, k_begin, k_end, k_begin + 1, n);
}

// search_arrivals over the whole grid, one run per coefficient interval of the entry node.
inline std::vector<ArrivalSearch> all_arrivals(double half_d2, std::span<const double> inv_lag,
                                               const CongestionField& f, Branch b, std::span<const double> target,
                                               const TimeGrid& grid) {
  std::vector<ArrivalSearch> out(grid.n_nodes());
  for (int begin = 0; begin < grid.n_nodes();) {
    const int piece = f.piece_of_node(begin);
    int end = begin + 1;
    while (end < grid.n_nodes() && f.piece_of_node(end) == piece) ++end;
    search_arrivals(half_d2, inv_lag, f.prefix(b, piece), target, begin, end, grid, out);
    begin = end;
  }
  return out;
}

inline void finish(PointEval& e, Point p) {
  const auto a = admissible(p);
  e.n_slots = a.count;
  e.value = kInf;
  for (int i = 0; i < a.count; ++i) e.value = std::min(e.value, e.candidate[i]);
  e.optimal.clear();
  if (!std::isfinite(e.value)) return;
  const double tol = tie_tolerance(e.value);
  for (int i = 0; i < a.count; ++i)
    if (e.candidate[i] <= e.value + tol) e.optimal.push_back(a.kinds[i]);
}

inline double kinetic_to_horizon(double distance, int k, const TimeGrid& grid) {
  if (k >= grid.n_steps()) return kInf;
  return 0.5 * distance * distance / (grid.horizon() - grid.t(k));
}

inline PointEval eval_00(const Scenario& sc, const CongestionField& f, Point p, int k) {
  const int n = sc.grid.n_steps();
  const double congestion = f.integral_nodes(Branch::B00, k, k, n);
  PointEval e;
  e.candidate[0] = sc.costs.cS + congestion;
  e.arrival[0] = std::numeric_limits<double>::quiet_NaN();
  const double d = sc.geometry.distance(site_of(p), Site::Station);
  e.candidate[1] = kinetic_to_horizon(d, k, sc.grid) + congestion;
  if (k < n) {
    e.arrival[1] = sc.grid.horizon();
    e.arrival_node[1] = n;
  }
  finish(e, p);
  return e;
}

inline PointEval eval_0110(const Scenario& sc, const CongestionField& f, Point p, int k,
                           std::span<const double> v00_target, std::span<const double> inv_lag,
                           const ArrivalSearch* found = nullptr) {
  const int n = sc.grid.n_steps();
  const Branch b = branch_of(p);
  const bool at_p1 = p == Point::P1_01;
  const double unvisited_cost = at_p1 ? sc.costs.c2 : sc.costs.c1;
  const Site here = site_of(p);
  const Site other = at_p1 ? Site::P2 : Site::P1;
  const double congestion = f.integral_nodes(b, k, k, n);
  PointEval e;
  e.candidate[0] = unvisited_cost + sc.costs.cS + congestion;
  e.arrival[0] = std::numeric_limits<double>::quiet_NaN();
  e.candidate[1] =
      unvisited_cost + kinetic_to_horizon(sc.geometry.distance(here, Site::Station), k, sc.grid) + congestion;
  if (k < n) {
    e.arrival[1] = sc.grid.horizon();
    e.arrival_node[1] = n;
  }
  const double d = sc.geometry.distance(here, other);
  const auto s = found ? *found : search_arrival(0.5 * d * d, inv_lag, f.prefix(b, f.piece_of_node(k)), v00_target, k, sc.grid);
  e.candidate[2] = s.value;
  e.arrival[2] = s.time;
  e.arrival_node[2] = s.node;
  finish(e, p);
  return e;
}

inline PointEval eval_11(const Scenario& sc, const CongestionField& f, int k, std::span<const double> v01,
                         std::span<const double> v10, std::span<const double> inv_lag,
                         const ArrivalSearch* found1 = nullptr, const ArrivalSearch* found2 = nullptr) {
  const int n = sc.grid.n_steps();
  PointEval e;
  e.candidate[0] = sc.costs.c1 + sc.costs.c2 + f.integral_nodes(Branch::B11, k, k, n);
  e.arrival[0] = std::numeric_limits<double>::quiet_NaN();
  const auto prefix = f.prefix(Branch::B11, f.piece_of_node(k));
  const double d1 = sc.geometry.distance(Site::Station, Site::P1);
  const double d2 = sc.geometry.distance(Site::Station, Site::P2);
  const auto s1 = found1 ? *found1 : search_arrival(0.5 * d1 * d1, inv_lag, prefix, v01, k, sc.grid);
  const auto s2 = found2 ? *found2 : search_arrival(0.5 * d2 * d2, inv_lag, prefix, v10, k, sc.grid);
  e.candidate[1] = s1.value;
  e.arrival[1] = s1.time;
  e.arrival_node[1] = s1.node;
  e.candidate[2] = s2.value;
  e.arrival[2] = s2.time;
  e.arrival_node[2] = s2.node;
  finish(e, Point::Station11);
  return e;
}

}  // namespace detail

/// V at (theta_i, t_k, 0, 0): stay (pay cS) or walk back to reach the station exactly at T.
inline PointEval value_00(const Scenario& sc, const CongestionField& f, Point p, int k) {
  if (p != Point::P1_00 && p != Point::P2_00) throw std::invalid_argument("value_00 needs a (theta_i, 0, 0) point");
  return detail::eval_00(sc, f, p, k);
}

/// V at (theta_1, t_k, 0, 1) or (theta_2, t_k, 1, 0); `v00_target` is V at the other attraction with label (0,0).
inline PointEval value_0110(const Scenario& sc, const CongestionField& f, Point p, int k,
                            std::span<const double> v00_target) {
  if (p != Point::P1_01 && p != Point::P2_10) throw std::invalid_argument("value_0110 needs a (0,1) or (1,0) point");
  return detail::eval_0110(sc, f, p, k, v00_target, detail::inverse_lags(sc.grid));
}

/// V at (theta_S, t_k, 1, 1) given V on the (0,1) and (1,0) attraction points.
inline PointEval value_11(const Scenario& sc, const CongestionField& f, int k, std::span<const double> v01,
                          std::span<const double> v10) {
  return detail::eval_11(sc, f, k, v01, v10, detail::inverse_lags(sc.grid));
}

/// Full tables of one significant point over the grid.
struct PointTable {
  Point point = Point::Station11;
  int n_slots = 0;
  std::vector<double> value;
  std::array<std::vector<double>, 3> candidate;
  std::array<std::vector<double>, 3> arrival;
  std::array<std::vector<int>, 3> arrival_node;

  ChoiceKind kind(int slot) const { return admissible(point).kinds.at(slot); }

  PointEval at(int k) const {
    PointEval e;
    e.n_slots = n_slots;
    e.value = value[k];
    for (int i = 0; i < n_slots; ++i) {
      e.candidate[i] = candidate[i][k];
      e.arrival[i] = arrival[i][k];
      e.arrival_node[i] = arrival_node[i][k];
    }
    detail::finish(e, point);
    return e;
  }
};

struct ValueTables {
  TimeGrid grid;
  std::array<PointTable, 5> points;

  const PointTable& operator[](Point p) const { return points[index(p)]; }
  PointTable& operator[](Point p) { return points[index(p)]; }
};

namespace detail {

inline void store(PointTable& t, int k, const PointEval& e) {
  t.value[k] = e.value;
  for (int i = 0; i < t.n_slots; ++i) {
    t.candidate[i][k] = e.candidate[i];
    t.arrival[i][k] = e.arrival[i];
    t.arrival_node[i][k] = e.arrival_node[i];
  }
}

inline PointTable make_table(Point p, int n_nodes) {
  PointTable t;
  t.point = p;
  t.n_slots = admissible(p).count;
  t.value.assign(n_nodes, kInf);
  for (int i = 0; i < t.n_slots; ++i) {
    t.candidate[i].assign(n_nodes, kInf);
    t.arrival[i].assign(n_nodes, kInf);
    t.arrival_node[i].assign(n_nodes, -1);
  }
  return t;
}

}  // namespace detail

/// Backward dynamic programming over the significant points, in dependency
/// order (0,0) -> {(0,1),(1,0)} -> (1,1).
inline ValueTables build_value_tables(const Scenario& sc, const CongestionField& f) {
  const int nn = sc.grid.n_nodes();
  const auto inv_lag = detail::inverse_lags(sc.grid);
  ValueTables vt;
  vt.grid = sc.grid;
  for (Point p : kPoints) vt[p] = detail::make_table(p, nn);

  for (Point p : {Point::P1_00, Point::P2_00})
    for (int k = 0; k < nn; ++k) detail::store(vt[p], k, detail::eval_00(sc, f, p, k));

  const double d12 = sc.geometry.distance(Site::P1, Site::P2);
  const auto to_p2 = detail::all_arrivals(0.5 * d12 * d12, inv_lag, f, Branch::B01, vt[Point::P2_00].value, sc.grid);
  const auto to_p1 = detail::all_arrivals(0.5 * d12 * d12, inv_lag, f, Branch::B10, vt[Point::P1_00].value, sc.grid);
  for (int k = 0; k < nn; ++k) {
    detail::store(vt[Point::P1_01], k,
                  detail::eval_0110(sc, f, Point::P1_01, k, vt[Point::P2_00].value, inv_lag, &to_p2[k]));
    detail::store(vt[Point::P2_10], k,
                  detail::eval_0110(sc, f, Point::P2_10, k, vt[Point::P1_00].value, inv_lag, &to_p1[k]));
  }

  const double d1 = sc.geometry.distance(Site::Station, Site::P1);
  const double d2 = sc.geometry.distance(Site::Station, Site::P2);
  const auto s1 = detail::all_arrivals(0.5 * d1 * d1, inv_lag, f, Branch::B11, vt[Point::P1_01].value, sc.grid);
  const auto s2 = detail::all_arrivals(0.5 * d2 * d2, inv_lag, f, Branch::B11, vt[Point::P2_10].value, sc.grid);
  for (int k = 0; k < nn; ++k)
    detail::store(vt[Point::Station11], k,
                  detail::eval_11(sc, f, k, vt[Point::P1_01].value, vt[Point::P2_10].value, inv_lag, &s1[k], &s2[k]));
  return vt;
}

inline ValueTables build_value_tables(const Scenario& sc, const CongestionParams& params, const MassProfile& rho) {
  return build_value_tables(sc, CongestionField::from_params(sc.grid, params, rho));
}

/// Cost of a moving choice between attractions (or from the station) as a
/// function of the arrival node, for one departure node k:
/// d^2 / (2 (t_j - t_k)) + int_{t_k}^{t_j} F + V(next point, t_j).
struct ArrivalProblem {
  TimeGrid grid;
  double half_d2 = 0.0;
  std::span<const double> prefix;
  std::span<const double> target;
  std::span<const double> inv_lag;
  int k = 0;

  double cost(int j) const {
    if (j <= k || j > grid.n_steps()) return kInf;
    return detail::arrival_cost(half_d2, inv_lag.data(), prefix.data(), target.data(), k, j) - prefix[k];
  }

  /// Best arrival among the nodes in [lo, hi] (clipped to (k, n]).
  detail::ArrivalSearch best_in(int lo, int hi) const {
    lo = std::max(lo, k + 1);
    hi = std::min(hi, grid.n_steps());
    double best = kInf;
    int bj = -1;
    for (int j = lo; j <= hi; ++j) {
      const double c = detail::arrival_cost(half_d2, inv_lag.data(), prefix.data(), target.data(), k, j);
      if (c < best) {
        best = c;
        bj = j;
      }
    }
    return detail::refine_arrival(half_d2, inv_lag, prefix, target, k, bj, best, grid);
  }
};

/// The arrival problem of `kind` at `from` for departures at node k. `inv_lag`
/// must come from detail::inverse_lags(grid) and outlive the result.
inline ArrivalProblem arrival_problem(const Scenario& sc, const CongestionField& f, const ValueTables& vt, Point from,
                                      ChoiceKind kind, int k, std::span<const double> inv_lag) {
  const auto to = next_point(from, kind);
  if (!to) throw std::invalid_argument("arrival problem needs a choice that reaches another significant point");
  const double d = sc.geometry.distance(site_of(from), destination(from, kind));
  const Branch b = branch_of(from);
  return {sc.grid, 0.5 * d * d, f.prefix(b, f.piece_of_node(k)), vt[*to].value, inv_lag, k};
}

/// Sub-interval [begin, end) of grid nodes carrying one committed choice.
struct Segment {
  int begin = 0;
  int end = 0;
  ChoiceKind kind = ChoiceKind::Stay;
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Hysteretic epsilon-optimal choice assignment at one significant point.
struct ChoiceSchedule {
  Point point = Point::Station11;
  double epsilon = 0.0;
  std::vector<Segment> segments;
  std::vector<ChoiceKind> kind_at_node;

  ChoiceKind at(int k) const { return kind_at_node.at(k); }
  friend bool operator==(const ChoiceSchedule& a, const ChoiceSchedule& b) {
    return a.point == b.point && a.segments == b.segments;
  }
};

/// Left-to-right sweep over candidate tables. A committed kind is held while
/// its gap to the running minimum stays below epsilon; at the first node where
/// the gap reaches epsilon a new argmin (never the dropped kind) is committed.
/// `candidates[i]` holds the values of `kinds[i]` at every node.
inline ChoiceSchedule build_choice_schedule(Point point, std::span<const std::vector<double>> candidates,
                                            std::span<const ChoiceKind> kinds, double epsilon,
                                            const TieBreak& tie_break) {
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  if (candidates.empty() || candidates.size() != kinds.size())
    throw std::invalid_argument("one candidate table per kind is required");
  const int nn = static_cast<int>(candidates[0].size());
  const int ns = static_cast<int>(kinds.size());

  ChoiceSchedule s;
  s.point = point;
  s.epsilon = epsilon;
  s.kind_at_node.resize(nn);

  const auto pick = [&](int k, int excluded) {
    double v = kInf;
    for (int i = 0; i < ns; ++i) v = std::min(v, candidates[i][k]);
    const double tol = tie_tolerance(v);
    int best = -1;
    for (int i = 0; i < ns; ++i) {
      if (i == excluded || !(candidates[i][k] <= v + tol)) continue;
      if (best < 0 || tie_break.rank(kinds[i]) < tie_break.rank(kinds[best])) best = i;
    }
    if (best < 0) {
      // only the excluded kind is within tolerance; fall back to the best remaining one
      for (int i = 0; i < ns; ++i)
        if (i != excluded && (best < 0 || candidates[i][k] < candidates[best][k])) best = i;
    }
    return best < 0 ? excluded : best;
  };

  int committed = pick(0, -1);
  s.segments.push_back({0, nn, kinds[committed]});
  for (int k = 0; k < nn; ++k) {
    double v = kInf;
    for (int i = 0; i < ns; ++i) v = std::min(v, candidates[i][k]);
    const double gap = candidates[committed][k] - v;
    if (!(gap < epsilon)) {
      const int next = pick(k, committed);
      if (next != committed) {
        s.segments.back().end = k;
        committed = next;
        s.segments.push_back({k, nn, kinds[committed]});
      }
    }
    s.kind_at_node[k] = kinds[committed];
  }
  return s;
}

inline ChoiceSchedule build_choice_schedule(const PointTable& table, double epsilon, const TieBreak& tie_break) {
  const auto a = admissible(table.point);
  return build_choice_schedule(table.point, std::span<const std::vector<double>>(table.candidate.data(), a.count),
                               a.span(), epsilon, tie_break);
}

inline std::array<ChoiceSchedule, 5> build_choice_schedules(const ValueTables& vt, double epsilon,
                                                            const TieBreak& tie_break) {
  std::array<ChoiceSchedule, 5> out;
  for (Point p : kPoints) out[index(p)] = build_choice_schedule(vt[p], epsilon, tie_break);
  return out;
}

}  // namespace mfgtour

#endif  // MFGTOUR_VALUE_HPP_INCLUDED
