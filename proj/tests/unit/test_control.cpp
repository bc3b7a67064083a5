#include <gtest/gtest.h>

#include <cmath>

#include "mfgtour/control.hpp"

using namespace mfgtour;

namespace {

CongestionParams symmetric(double a) {
  Coefficients c;
  c.alpha = {0, a, a, 0};
  return CongestionParams::constant(c);
}

MassProfile constant_mass(const TimeGrid& grid, Branch b, double v) {
  auto m = MassProfile::zeros(grid);
  for (auto& x : m[b]) x = v;
  return m;
}

TEST(XNormDistance, Examples) {
  const TimeGrid grid(1.0, 10);
  const auto zero = MassProfile::zeros(grid);
  EXPECT_EQ(x_norm_distance(zero, zero), 0.0);
  auto peak = zero;
  peak[Branch::B10][4] = 0.7;
  EXPECT_DOUBLE_EQ(x_norm_distance(zero, peak), 0.7);
  EXPECT_NEAR(x_norm_distance(constant_mass(grid, Branch::B01, 0.3), constant_mass(grid, Branch::B01, 0.4)), 0.1,
              1e-15);
  EXPECT_THROW(x_norm_distance(zero, MassProfile::zeros(TimeGrid(1.0, 11))), std::invalid_argument);
}

TEST(ReferenceMass, RejectsNegativeOrMismatchedProfiles) {
  const TimeGrid grid(1.0, 10);
  EXPECT_NO_THROW(ReferenceMass::checked(MassProfile::zeros(grid), grid));
  EXPECT_THROW(ReferenceMass::checked(MassProfile::zeros(TimeGrid(1.0, 20)), grid), std::invalid_argument);
  EXPECT_THROW(ReferenceMass::checked(constant_mass(grid, Branch::B00, -1.0), grid), std::invalid_argument);
}

TEST(ParamBox, Validation) {
  EXPECT_NO_THROW(ParamBox::uniform(0.0, 4.0).validate());
  EXPECT_NO_THROW(ParamBox::uniform(1.0, 1.0).validate());
  EXPECT_THROW(ParamBox::uniform(2.0, 1.0).validate(), std::invalid_argument);
  EXPECT_THROW(ParamBox::uniform(-1.0, 1.0).validate(), std::invalid_argument);
  EXPECT_THROW(ParamBox{}.validate(), std::invalid_argument);
  auto b = ParamBox::uniform(0.0, 1.0);
  b.breakpoints = {0.0, 1.0, 2.0};
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(ParamBox, VectorRoundTrip) {
  Coefficients c;
  c.alpha = {0.5, 1.5, 2.5, 1.0};
  c.beta = {0.2, 0.3, 0.1, 0.4};
  const auto p = CongestionParams::constant(c);
  const auto box = ParamBox::around(p, 0.5);
  EXPECT_EQ(box.dimension(), 8);
  EXPECT_EQ(box.component(4).lo, 0.0);
  const auto x = box.to_vector(p);
  EXPECT_EQ(box.to_params(x).piece(0).alpha, c.alpha);
  EXPECT_EQ(box.to_params(x).piece(0).beta, c.beta);
  EXPECT_EQ(box.clamp(std::vector<double>(8, 10.0))[0], 1.0);
}

TEST(Objective, NoArrivalsGivesTheNormOfTheReference) {
  auto r = canonical_raw_scenario(200);
  r.arrival_value = 0.0;
  const auto sc = validate_scenario(r);
  const auto ref = ReferenceMass::checked(constant_mass(sc.grid, Branch::B01, 0.25), sc.grid);
  EXPECT_DOUBLE_EQ(objective(sc, symmetric(1.0), ref, SolverConfig{}), 0.25);
}

TEST(Objective, SelfConsistentReferenceScoresNearZero) {
  const auto sc = canonical_scenario(400);
  Coefficients c;
  c.alpha = {0.5, 1.5, 2.5, 1.0};
  c.beta = {0.2, 0.3, 0.1, 0.4};
  const auto p = CongestionParams::constant(c);
  SolverConfig cfg;
  cfg.seeds = {0, 1};
  const auto ref = ReferenceMass::checked(solve_epsilon_equilibrium(sc, p, cfg).rho, sc.grid);
  const auto rep = evaluate_objective(sc, p, ref, cfg);
  EXPECT_LE(rep.best, 10 * cfg.fixed_point_tolerance(sc.mass_bound()));
  EXPECT_GE(rep.worst, rep.best);
  EXPECT_GE(rep.discovered, 1);
  EXPECT_EQ(rep.seeds.size(), 2u);
  EXPECT_GE(worst_case_objective(sc, p, ref, cfg), objective(sc, p, ref, cfg));
}

TEST(Optimize, CollapsedBoxEvaluatesOnePoint) {
  const auto sc = canonical_scenario(200);
  const auto ref = ReferenceMass::checked(MassProfile::zeros(sc.grid), sc.grid);
  OptimizerConfig oc;
  oc.budget = 10;
  const auto res = optimize(sc, ParamBox::uniform(1.0, 1.0), ref, SolverConfig{}, oc);
  ASSERT_FALSE(res.log.empty());
  for (double v : res.best_x) EXPECT_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(res.best_objective, objective(sc, ParamBox::uniform(1.0, 1.0).to_params(res.best_x), ref, {}));
}

TEST(Optimize, BudgetOfOneReturnsTheSweepSample) {
  const auto sc = canonical_scenario(200);
  const auto ref = ReferenceMass::checked(MassProfile::zeros(sc.grid), sc.grid);
  OptimizerConfig oc;
  oc.budget = 1;
  const auto box = ParamBox::uniform(0.0, 2.0);
  const auto res = optimize(sc, box, ref, SolverConfig{}, oc);
  ASSERT_EQ(res.log.size(), 1u);
  EXPECT_EQ(res.log[0].phase, "sweep");
  EXPECT_EQ(res.best_x, res.log[0].x);
  EXPECT_EQ(res.best_objective, res.log[0].objective);
  EXPECT_THROW(optimize(sc, box, ref, SolverConfig{}, OptimizerConfig{.budget = 0}), std::invalid_argument);
}

TEST(Optimize, DeterministicForAFixedSeed) {
  const auto sc = canonical_scenario(200);
  const auto ref = ReferenceMass::checked(solve_epsilon_equilibrium(sc, symmetric(1.0), {}).rho, sc.grid);
  OptimizerConfig oc;
  oc.budget = 12;
  oc.seed = 3;
  const auto a = optimize(sc, ParamBox::uniform(0.0, 2.0), ref, SolverConfig{}, oc);
  oc.threads = 1;
  const auto b = optimize(sc, ParamBox::uniform(0.0, 2.0), ref, SolverConfig{}, oc);
  EXPECT_EQ(a.best_x, b.best_x);
  EXPECT_EQ(a.best_objective, b.best_objective);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].objective, b.log[i].objective);
  EXPECT_LE(a.log.size(), 12u);
}

TEST(FrozenField, UsesTheCoefficientsInForceAtEntry) {
  const TimeGrid grid(2.0, 200);
  Coefficients early, late;
  early.beta.fill(0.2);
  late.alpha.fill(1.0);
  const auto p = CongestionParams::piecewise({0.0, 1.0, 2.0}, {early, late});
  auto rho = MassProfile::zeros(grid);
  for (Branch b : kBranches)
    for (auto& v : rho[b]) v = 0.3;
  const auto frozen = frozen_congestion_field(grid, p, rho, 0.5);
  EXPECT_NEAR(frozen.samples(Branch::B01)[grid.nearest_node(1.5)], 0.2, 1e-15);
  const auto later = frozen_congestion_field(grid, p, rho, 1.5);
  EXPECT_NEAR(later.samples(Branch::B01)[grid.nearest_node(1.5)], 0.3, 1e-15);
  EXPECT_THROW(frozen_congestion_field(grid, p, rho, 2.5), std::invalid_argument);
}

TEST(FrozenField, SingleIntervalMatchesConstantCoefficients) {
  const TimeGrid grid(2.0, 100);
  Coefficients c;
  c.alpha = {0.5, 1.5, 2.5, 1.0};
  c.beta = {0.2, 0.3, 0.1, 0.4};
  auto rho = MassProfile::zeros(grid);
  for (Branch b : kBranches)
    for (int k = 0; k < grid.n_nodes(); ++k) rho[b][k] = 0.01 * k;
  const auto a = CongestionField::from_params(grid, CongestionParams::constant(c), rho);
  const auto b = CongestionField::from_params(grid, CongestionParams::piecewise({0.0, 2.0}, {c}), rho);
  for (Branch w : kBranches)
    for (int k = 0; k < grid.n_nodes(); ++k) {
      EXPECT_EQ(a.samples(w)[k], b.samples(w)[k]);
      EXPECT_EQ(a.prefix(w)[k], b.prefix(w)[k]);
    }
}

}  // namespace
