#ifndef MFGTOUR_CONGESTION_HPP_INCLUDED
#define MFGTOUR_CONGESTION_HPP_INCLUDED

#include <algorithm>
#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"

namespace mfgtour {

/// Linear congestion coefficients F^w = alpha_w * rho^w + beta_w, indexed by Branch.
struct Coefficients {
  std::array<double, 4> alpha{};
  std::array<double, 4> beta{};
  friend bool operator==(const Coefficients&, const Coefficients&) = default;
};

/// The controller's decision variables, constant or piecewise constant in time.
///
/// In piecewise mode an agent experiences, for its whole stay on a branch, the
/// coefficients in force at the instant it entered that branch.
class CongestionParams {
 public:
  enum class Mode { Constant, Piecewise };

  CongestionParams() : pieces_(1) {}

  static CongestionParams constant(const Coefficients& c) {
    CongestionParams p;
    p.pieces_ = {c};
    p.check_nonnegative();
    return p;
  }

  /// `breakpoints` is t_0 = 0 < t_1 < ... < t_N = T; `pieces[i]` applies on [t_i, t_{i+1}).
  static CongestionParams piecewise(std::vector<double> breakpoints, std::vector<Coefficients> pieces) {
    if (breakpoints.size() < 2) throw std::invalid_argument("piecewise congestion needs at least two breakpoints");
    if (pieces.size() + 1 != breakpoints.size())
      throw std::invalid_argument("piecewise congestion needs one coefficient set per interval");
    if (breakpoints.front() != 0.0) throw std::invalid_argument("first breakpoint must be 0");
    for (std::size_t i = 1; i < breakpoints.size(); ++i)
      if (!(breakpoints[i] > breakpoints[i - 1])) throw std::invalid_argument("breakpoints must be strictly increasing");
    CongestionParams p;
    p.mode_ = Mode::Piecewise;
    p.breakpoints_ = std::move(breakpoints);
    p.pieces_ = std::move(pieces);
    p.check_nonnegative();
    return p;
  }

  Mode mode() const noexcept { return mode_; }
  int n_pieces() const noexcept { return static_cast<int>(pieces_.size()); }
  const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
  const std::vector<Coefficients>& pieces() const noexcept { return pieces_; }
  const Coefficients& piece(int i) const { return pieces_.at(i); }

  /// Index of the interval containing `entry_time` (the last interval is closed at T).
  int piece_at(double entry_time) const noexcept {
    if (mode_ == Mode::Constant || pieces_.size() == 1) return 0;
    const auto it = std::upper_bound(breakpoints_.begin() + 1, breakpoints_.end() - 1, entry_time);
    return static_cast<int>(it - (breakpoints_.begin() + 1));
  }

  void validate(double horizon) const {
    check_nonnegative();
    if (mode_ == Mode::Piecewise && std::abs(breakpoints_.back() - horizon) > 1e-12 * std::max(1.0, horizon))
      throw std::invalid_argument("last breakpoint must equal the horizon T");
  }

  friend bool operator==(const CongestionParams&, const CongestionParams&) = default;

 private:
  void check_nonnegative() const {
    for (const auto& c : pieces_)
      for (int w = 0; w < 4; ++w)
        if (!(c.alpha[w] >= 0) || !(c.beta[w] >= 0))
          throw std::invalid_argument("congestion coefficients must be nonnegative");
  }

  Mode mode_ = Mode::Constant;
  std::vector<double> breakpoints_;
  std::vector<Coefficients> pieces_;
};

/// Per-branch congestion cost sampled on the grid, with trapezoid prefix sums.
///
/// One sample set is stored per coefficient interval; interval integrals pick
/// the set selected by the entry instant.
class CongestionField {
 public:
  CongestionField() = default;

  /// Field given directly by samples (one coefficient interval).
  static CongestionField from_samples(const TimeGrid& grid, const std::array<std::vector<double>, 4>& samples) {
    CongestionField f;
    f.grid_ = grid;
    f.params_ = CongestionParams{};
    for (int w = 0; w < 4; ++w) {
      if (static_cast<int>(samples[w].size()) != grid.n_nodes())
        throw std::invalid_argument("congestion samples must cover every grid node");
      f.samples_[w] = {samples[w]};
      f.prefix_[w] = {cumulative_trapezoid(samples[w], grid.dt())};
    }
    f.piece_of_node_.assign(grid.n_nodes(), 0);
    return f;
  }

  static CongestionField uniform(const TimeGrid& grid, double value) {
    std::array<std::vector<double>, 4> s;
    for (auto& v : s) v.assign(grid.n_nodes(), value);
    return from_samples(grid, s);
  }

  /// F^w(s) = alpha^i_w rho^w(s) + beta^i_w for each coefficient interval i.
  static CongestionField from_params(const TimeGrid& grid, const CongestionParams& params, const MassProfile& rho) {
    if (rho.n_nodes() != grid.n_nodes()) throw std::invalid_argument("mass profile does not match the grid");
    CongestionField f;
    f.grid_ = grid;
    f.params_ = params;
    for (int w = 0; w < 4; ++w) {
      f.samples_[w].resize(params.n_pieces());
      f.prefix_[w].resize(params.n_pieces());
      for (int i = 0; i < params.n_pieces(); ++i) {
        const auto& c = params.piece(i);
        auto& s = f.samples_[w][i];
        s.resize(grid.n_nodes());
        for (int k = 0; k < grid.n_nodes(); ++k) s[k] = c.alpha[w] * rho.rho[w][k] + c.beta[w];
        f.prefix_[w][i] = cumulative_trapezoid(s, grid.dt());
      }
    }
    f.piece_of_node_.resize(grid.n_nodes());
    for (int k = 0; k < grid.n_nodes(); ++k) f.piece_of_node_[k] = params.piece_at(grid.t(k));
    return f;
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  int n_pieces() const noexcept { return static_cast<int>(samples_[0].size()); }
  int piece_of_node(int k) const noexcept { return piece_of_node_[k]; }
  int piece_at(double entry_time) const noexcept { return params_.piece_at(entry_time); }

  std::span<const double> samples(Branch b, int piece = 0) const { return samples_[index(b)].at(piece); }
  std::span<const double> prefix(Branch b, int piece = 0) const { return prefix_[index(b)].at(piece); }

  /// int_{t_from}^{t_to} F^b for an agent that entered branch b at node `entry`.
  double integral_nodes(Branch b, int entry, int from, int to) const noexcept {
    const auto& p = prefix_[index(b)][piece_of_node_[entry]];
    return p[to] - p[from];
  }

  /// int_t^s F^b for an agent entering b at `entry_time`; off-grid ends interpolate the prefix sums.
  double integral(Branch b, double entry_time, double t, double s) const {
    if (t > s) throw std::invalid_argument("congestion integral needs t <= s");
    const auto p = prefix(b, piece_at(entry_time));
    return interpolate(p, grid_, s) - interpolate(p, grid_, t);
  }

 private:
  TimeGrid grid_;
  CongestionParams params_;
  std::array<std::vector<std::vector<double>>, 4> samples_;
  std::array<std::vector<std::vector<double>>, 4> prefix_;
  std::vector<int> piece_of_node_;
};

/// int_t^s F^branch with the coefficients in force at t.
inline double congestion_integral(const CongestionField& field, Branch branch, double t, double s) {
  return field.integral(branch, t, t, s);
}

/// The field an agent entering at `entry_time` experiences for its whole stay:
/// F(s) = alpha^i rho(s) + beta^i with i the interval containing the entry instant.
inline CongestionField frozen_congestion_field(const TimeGrid& grid, const CongestionParams& params,
                                               const MassProfile& rho, double entry_time) {
  if (entry_time < 0 || entry_time > grid.horizon()) throw std::invalid_argument("entry time outside [0, T]");
  return CongestionField::from_params(grid, CongestionParams::constant(params.piece(params.piece_at(entry_time))), rho);
}

}  // namespace mfgtour

#endif  // MFGTOUR_CONGESTION_HPP_INCLUDED
