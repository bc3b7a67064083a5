#ifndef MFGTOUR_MASS_HPP_INCLUDED
#define MFGTOUR_MASS_HPP_INCLUDED

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mfgtour/network.hpp"

namespace mfgtour {

/// Per-branch total mass over time, in the order (rho11, rho01, rho10, rho00).
struct MassProfile {
  std::array<std::vector<double>, 4> rho;

  static MassProfile zeros(const TimeGrid& grid) {
    MassProfile m;
    for (auto& r : m.rho) r.assign(grid.n_nodes(), 0.0);
    return m;
  }

  std::vector<double>& operator[](Branch b) { return rho[index(b)]; }
  const std::vector<double>& operator[](Branch b) const { return rho[index(b)]; }

  int n_nodes() const noexcept { return static_cast<int>(rho[0].size()); }

  double total(int k) const { return rho[0][k] + rho[1][k] + rho[2][k] + rho[3][k]; }

  friend bool operator==(const MassProfile&, const MassProfile&) = default;
};

/// Sup over branches and nodes of |a - b|: the X norm of the difference.
inline double x_norm_distance(const MassProfile& a, const MassProfile& b) {
  double d = 0.0;
  for (int w = 0; w < 4; ++w) {
    if (a.rho[w].size() != b.rho[w].size()) throw std::invalid_argument("mass profiles live on different grids");
    for (std::size_t k = 0; k < a.rho[w].size(); ++k) d = std::max(d, std::abs(a.rho[w][k] - b.rho[w][k]));
  }
  return d;
}

/// (1 - gamma) * a + gamma * b, componentwise.
inline MassProfile blend(const MassProfile& a, const MassProfile& b, double gamma) {
  MassProfile out = a;
  for (int w = 0; w < 4; ++w)
    for (std::size_t k = 0; k < out.rho[w].size(); ++k) out.rho[w][k] = (1 - gamma) * a.rho[w][k] + gamma * b.rho[w][k];
  return out;
}

}  // namespace mfgtour

#endif  // MFGTOUR_MASS_HPP_INCLUDED
