#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfgtour/equilibrium.hpp"

using namespace mfgtour;

namespace {

Scenario canonical_with_flow(int n, double flow) {
  auto r = canonical_raw_scenario(n);
  r.arrival_value = flow;
  return validate_scenario(r);
}

CongestionParams symmetric(double a) {
  Coefficients c;
  c.alpha = {0, a, a, 0};
  return CongestionParams::constant(c);
}

int slot(Point p, ChoiceKind k) { return *slot_of(p, k); }

double final_mass(const MassProfile& m, Branch b) { return m[b].back(); }

TEST(Solver, NoArrivalsMeansNoMass) {
  const auto sc = canonical_with_flow(200, 0.0);
  const auto r = solve_epsilon_equilibrium(sc, symmetric(2.0), SolverConfig{});
  EXPECT_EQ(r.iterations, 1);
  for (Branch b : kBranches)
    for (double v : r.rho[b]) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.residual.gap, 0.0);
}

TEST(Psi, IndependentOfMassWithoutCongestion) {
  const auto sc = canonical_scenario(400);
  const CongestionParams free{};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 0.1);
  auto rho = MassProfile::zeros(sc.grid);
  for (Branch b : kBranches)
    for (auto& v : rho[b]) v = u(rng);
  const auto a = apply_psi(sc, free, MassProfile::zeros(sc.grid), 1e-3, TieBreak::prefer_p1());
  const auto b = apply_psi(sc, free, rho, 1e-3, TieBreak::prefer_p1());
  EXPECT_EQ(a.fractions, b.fractions);
  for (Branch w : kBranches) EXPECT_EQ(a.rho[w], b.rho[w]);
}

class CanonicalFree : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    sc_ = new Scenario(canonical_scenario(2000));
    result_ = new EquilibriumResult(solve_epsilon_equilibrium(*sc_, CongestionParams{}, SolverConfig{}));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete sc_;
  }
  static Scenario* sc_;
  static EquilibriumResult* result_;
};

Scenario* CanonicalFree::sc_ = nullptr;
EquilibriumResult* CanonicalFree::result_ = nullptr;

TEST_F(CanonicalFree, EarlyEntriesTourTheFirstAttractionAndLateOnesStay) {
  // oracle: touring pays off while 2 - t > pi^2 / (2 (3 + eps)), i.e. up to t* = 0.35561
  const auto& r = *result_;
  const double dt = sc_->grid.dt();
  EXPECT_LE(r.iterations, 2);
  EXPECT_NEAR(final_mass(r.rho, Branch::B01), 0.3555, 3 * dt);
  EXPECT_NEAR(final_mass(r.rho, Branch::B11), 0.5005 - 0.3555, 3 * dt);
  EXPECT_EQ(final_mass(r.rho, Branch::B10), 0.0);
  EXPECT_EQ(final_mass(r.rho, Branch::B00), 0.0);
  EXPECT_LE(r.residual.gap, 1e-3 + 2 * dt * r.lipschitz);
  EXPECT_LE(r.fixed_point_gap, SolverConfig{}.fixed_point_tolerance(sc_->mass_bound()));
}

TEST_F(CanonicalFree, FractionsSumToOne) {
  const auto& r = *result_;
  for (Point p : kPoints) {
    const auto& f = r.fractions.f[index(p)];
    for (int k = 0; k < sc_->grid.n_nodes(); ++k) {
      double s = 0.0;
      for (const auto& slot_values : f)
        if (!slot_values.empty()) s += slot_values[k];
      EXPECT_NEAR(s, 1.0, 1e-12) << point_name(p) << " node " << k;
    }
  }
}

TEST_F(CanonicalFree, ShiftingMassToStayingShowsTheForgoneGain) {
  // oracle at t = 0: staying costs c1 + c2 = 6, touring 3 + pi^2/4 = 5.4674
  auto f = result_->fractions;
  auto& st = f.f[index(Point::Station11)];
  const int tour = slot(Point::Station11, ChoiceKind::ToP1), stay = slot(Point::Station11, ChoiceKind::Stay);
  for (int k = 0; k < sc_->grid.n_nodes(); ++k) {
    const double moved = 0.1 * st[tour][k];
    st[tour][k] -= moved;
    st[stay][k] += moved;
  }
  const auto gap = equilibrium_residual(*sc_, CongestionParams{}, result_->rho, f);
  EXPECT_NEAR(gap.gap, 6.0 - 5.46740110027234, 2e-3);
  EXPECT_EQ(gap.point, Point::Station11);
  EXPECT_EQ(gap.kind, ChoiceKind::Stay);
}

TEST_F(CanonicalFree, ResidualOfTheResultIsSmall) {
  const auto again = equilibrium_residual(*sc_, CongestionParams{}, result_->rho, result_->fractions);
  EXPECT_NEAR(again.gap, result_->residual.gap, 1e-12);
  EXPECT_LE(again.gap, 1e-3 + 2 * sc_->grid.dt() * result_->lipschitz);
}

TEST(Residual, ZeroWithoutArrivals) {
  const auto sc = canonical_with_flow(200, 0.0);
  const auto out = apply_psi(sc, symmetric(1.0), MassProfile::zeros(sc.grid), 1e-3, TieBreak::prefer_p1());
  EXPECT_EQ(equilibrium_residual(sc, symmetric(1.0), out.rho, out.fractions).gap, 0.0);
}

TEST(Solver, SymmetricCongestionSplitsTheStationEvenly) {
  const auto sc = canonical_scenario(500);
  const auto r = solve_epsilon_equilibrium(sc, symmetric(2.0), SolverConfig{});
  const auto& inflow = r.flows.inflow[index(Point::Station11)];
  const auto& f = r.fractions.f[index(Point::Station11)];
  const int s1 = slot(Point::Station11, ChoiceKind::ToP1), s2 = slot(Point::Station11, ChoiceKind::ToP2);
  int nodes = 0;
  for (int k = 0; k < sc.grid.n_nodes(); ++k) {
    if (!(inflow[k] * (f[s1][k] + f[s2][k]) > 0)) continue;
    ++nodes;
    EXPECT_LE(std::abs(f[s1][k] - f[s2][k]), 0.05) << "node " << k;
  }
  EXPECT_GT(nodes, 0);
  EXPECT_NEAR(final_mass(r.rho, Branch::B01), final_mass(r.rho, Branch::B10), 0.05 * sc.mass_bound());
}

TEST(Solver, ArrivalWindowsAreWellFormed) {
  const auto sc = canonical_scenario(500);
  Coefficients c;
  c.alpha = {0.5, 1.5, 2.5, 1.0};
  c.beta = {0.2, 0.3, 0.1, 0.4};
  const auto r = solve_epsilon_equilibrium(sc, CongestionParams::constant(c), SolverConfig{});
  for (const auto& sp : r.arrival_splits.crossing) {
    for (double v : sp.late) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    int last = -1;
    for (std::size_t k = 0; k < sp.divider.size(); ++k) {
      if (sp.divider[k] < 0) continue;
      EXPECT_GT(sp.divider[k], static_cast<int>(k));
      EXPECT_GE(sp.divider[k], last);
      last = sp.divider[k];
    }
  }
  EXPECT_LE(r.diagnostics.max_conservation_violation, conservation_tolerance(sc.grid, sc.arrival));
  EXPECT_TRUE(r.diagnostics.all_in_x);
}

TEST(Solver, ThrowsWhenTheIterationBudgetIsTooSmall) {
  const auto sc = canonical_scenario(200);
  SolverConfig cfg;
  cfg.max_iters = 1;
  try {
    solve_epsilon_equilibrium(sc, symmetric(2.0), cfg);
    FAIL() << "converged in one iteration";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.iterations(), 1);
    EXPECT_GT(e.best_step(), 0.0);
    EXPECT_EQ(e.last_iterate()[Branch::B11].size(), static_cast<std::size_t>(sc.grid.n_nodes()));
  }
}

TEST(SolverConfig, RejectsInvalidSettings) {
  const auto sc = canonical_scenario(50);
  const auto bad = [&](auto edit) {
    SolverConfig cfg;
    edit(cfg);
    EXPECT_THROW(solve_epsilon_equilibrium(sc, CongestionParams{}, cfg), std::invalid_argument);
  };
  bad([](SolverConfig& c) { c.epsilon = 0; });
  bad([](SolverConfig& c) { c.gamma = 1.5; });
  bad([](SolverConfig& c) { c.max_iters = 0; });
  bad([](SolverConfig& c) { c.seeds.clear(); });
}

TEST(RefineEpsilon, SingleEntryMatchesOneSolve) {
  const auto sc = canonical_scenario(400);
  SolverConfig cfg;
  cfg.epsilon_schedule = {1e-3};
  const auto refined = refine_epsilon(sc, symmetric(1.0), cfg);
  const auto direct = solve_epsilon_equilibrium(sc, symmetric(1.0), cfg);
  ASSERT_EQ(refined.residuals.size(), 1u);
  EXPECT_TRUE(refined.weak_star.empty());
  for (Branch b : kBranches) EXPECT_EQ(refined.last.rho[b], direct.rho[b]);
}

TEST(RefineEpsilon, FreeFlowFractionsBarelyMove) {
  // the touring threshold moves by about 0.005 between eps = 1e-2 and 1e-3
  const auto sc = canonical_scenario(1000);
  SolverConfig cfg;
  cfg.epsilon_schedule = {1e-2, 1e-3};
  const auto refined = refine_epsilon(sc, CongestionParams{}, cfg);
  ASSERT_EQ(refined.weak_star.size(), 1u);
  EXPECT_LE(refined.weak_star[0], 0.01);
  SolverConfig increasing = cfg;
  increasing.epsilon_schedule = {1e-3, 1e-2};
  EXPECT_THROW(refine_epsilon(sc, CongestionParams{}, increasing), std::invalid_argument);
}

}  // namespace
