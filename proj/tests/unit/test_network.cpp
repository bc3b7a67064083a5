#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "mfgtour/network.hpp"

using namespace mfgtour;

namespace {

constexpr double kPi = std::numbers::pi;

TEST(ArcDistance, QuarterTurn) { EXPECT_DOUBLE_EQ(arc_distance(0.0, kPi / 2), kPi / 2); }

TEST(ArcDistance, WrapsAroundTheShortWay) { EXPECT_DOUBLE_EQ(arc_distance(0.0, 3 * kPi / 2), kPi / 2); }

TEST(ArcDistance, ZeroOnTheDiagonal) {
  for (double x : {0.0, 1.0, 3.0, 6.2}) EXPECT_EQ(arc_distance(x, x), 0.0);
}

TEST(ArcDistance, IsAMetricOnRandomTriples) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  for (int i = 0; i < 2000; ++i) {
    const double a = angle(rng), b = angle(rng), c = angle(rng);
    EXPECT_DOUBLE_EQ(arc_distance(a, b), arc_distance(b, a));
    EXPECT_LE(arc_distance(a, c), arc_distance(a, b) + arc_distance(b, c) + 1e-12);
    EXPECT_LE(arc_distance(a, b), kPi + 1e-12);
    EXPECT_GE(arc_distance(a, b), 0.0);
    if (a != b) {
      EXPECT_GT(arc_distance(a, b), 0.0);
    }
  }
}

TEST(BranchLabel, OnlyFourLabelsAndBitsOnlyDrop) {
  for (Branch b : kBranches) EXPECT_EQ(branch_of(label_of(b)), b);
  EXPECT_TRUE(is_admissible_switch({1, 1}, {0, 1}));
  EXPECT_TRUE(is_admissible_switch({0, 1}, {0, 0}));
  EXPECT_FALSE(is_admissible_switch({0, 1}, {1, 1}));
  EXPECT_FALSE(is_admissible_switch({0, 1}, {1, 0}));
  EXPECT_FALSE(is_admissible_switch({1, 0}, {1, 0}));
  EXPECT_THROW(branch_of(BranchLabel{2, 0}), std::invalid_argument);
}

TEST(SignificantPoints, CarryTheirBranchAndSite) {
  EXPECT_EQ(branch_of(Point::Station11), Branch::B11);
  EXPECT_EQ(branch_of(Point::P1_01), Branch::B01);
  EXPECT_EQ(branch_of(Point::P2_10), Branch::B10);
  EXPECT_EQ(branch_of(Point::P1_00), Branch::B00);
  EXPECT_EQ(branch_of(Point::P2_00), Branch::B00);
  EXPECT_EQ(site_of(Point::Station11), Site::Station);
  EXPECT_EQ(site_of(Point::P1_00), Site::P1);
  EXPECT_EQ(site_of(Point::P2_10), Site::P2);
}

TEST(ValidateScenario, AcceptsTheCanonicalScenario) {
  const auto sc = canonical_scenario();
  EXPECT_EQ(sc.grid.n_steps(), 2000);
  EXPECT_DOUBLE_EQ(sc.grid.dt(), 0.001);
  EXPECT_DOUBLE_EQ(sc.geometry.distance(Site::Station, Site::P1), kPi / 2);
  EXPECT_DOUBLE_EQ(sc.geometry.distance(Site::P1, Site::P2), kPi);
}

TEST(ValidateScenario, RejectsCoincidentAngles) {
  auto r = canonical_raw_scenario();
  r.theta_1 = r.theta_S;
  try {
    validate_scenario(r);
    FAIL() << "coincident angles accepted";
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.field(), "geometry.theta_1");
    EXPECT_NE(std::string(e.what()).find("coincident angles"), std::string::npos);
  }
}

TEST(ValidateScenario, RejectsNegativeFlowSample) {
  auto r = canonical_raw_scenario(10);
  r.arrival_kind = RawScenario::ArrivalKind::Samples;
  r.arrival_samples.assign(11, 1.0);
  r.arrival_samples[4] = -1.0;
  try {
    validate_scenario(r);
    FAIL() << "negative flow accepted";
  } catch (const ScenarioError& e) {
    EXPECT_EQ(e.field(), "arrival.samples");
    EXPECT_NE(std::string(e.what()).find("negative flow"), std::string::npos);
  }
}

TEST(ValidateScenario, NamesTheFieldOfEveryOtherViolation) {
  const auto field_of = [](RawScenario r) {
    try {
      validate_scenario(r);
    } catch (const ScenarioError& e) {
      return e.field();
    }
    return std::string("accepted");
  };
  auto r = canonical_raw_scenario();
  r.T = 0;
  EXPECT_EQ(field_of(r), "costs.T");
  r = canonical_raw_scenario();
  r.c2 = -1;
  EXPECT_EQ(field_of(r), "costs.c2");
  r = canonical_raw_scenario();
  r.cS = 0;
  EXPECT_EQ(field_of(r), "costs.cS");
  r = canonical_raw_scenario();
  r.n_steps = 1;
  EXPECT_EQ(field_of(r), "grid.n_steps");
  r = canonical_raw_scenario();
  r.theta_2 = kTwoPi;
  EXPECT_EQ(field_of(r), "geometry.theta_2");
  r = canonical_raw_scenario();
  r.arrival_kind = RawScenario::ArrivalKind::Samples;
  r.arrival_samples.assign(5, 1.0);
  EXPECT_EQ(field_of(r), "arrival.samples");
}

TEST(ValidateScenario, AcceptsRandomValidConfigurations) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    RawScenario r;
    r.n_steps = 2 + static_cast<int>(u(rng) * 50);
    r.theta_S = u(rng) * 2;
    r.theta_1 = 2.1 + u(rng) * 2;
    r.theta_2 = 4.2 + u(rng) * 2;
    r.c1 = 0.01 + u(rng);
    r.c2 = 0.01 + u(rng);
    r.cS = 0.01 + u(rng);
    r.T = 0.1 + u(rng);
    r.arrival_end = r.T * u(rng);
    EXPECT_NO_THROW(validate_scenario(r));
  }
}

TEST(TotalMassBound, ZeroFlowHasNoMass) {
  auto r = canonical_raw_scenario();
  r.arrival_value = 0.0;
  EXPECT_EQ(validate_scenario(r).mass_bound(), 0.0);
}

TEST(TotalMassBound, CanonicalCohortWithinOneCell) {
  // oracle: trapezoid rule over g = 1 on [0, 0.5] with 2000 cells on [0, 2]
  const auto sc = canonical_scenario();
  EXPECT_NEAR(sc.mass_bound(), 0.5005, 1e-12);
  EXPECT_NEAR(sc.mass_bound(), 0.5, sc.grid.dt());
}

TEST(TotalMassBound, ConstantFlowIsARectangle) {
  const TimeGrid grid(2.0, 400);
  EXPECT_NEAR(total_mass_bound(constant_on_interval(grid, 0.7, 0.0, 2.0), grid), 1.4, 1e-12);
}

TEST(TotalMassBound, MonotoneInTheFlow) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const TimeGrid grid(1.5, 300);
  for (int i = 0; i < 100; ++i) {
    ArrivalFlow a, b;
    for (int k = 0; k < grid.n_nodes(); ++k) {
      a.samples.push_back(u(rng));
      b.samples.push_back(a.samples.back() + u(rng) * (u(rng) < 0.3));
    }
    EXPECT_LE(total_mass_bound(a, grid), total_mass_bound(b, grid));
  }
}

TEST(TimeGrid, UniformNodesEndExactlyAtTheHorizon) {
  const TimeGrid grid(2.0, 3);
  EXPECT_EQ(grid.n_nodes(), 4);
  EXPECT_DOUBLE_EQ(grid.t(1), 2.0 / 3);
  EXPECT_EQ(grid.t(3), 2.0);
  EXPECT_EQ(grid.nearest_node(1.9), 3);
  EXPECT_EQ(grid.node_below(1.9), 2);
  EXPECT_THROW(TimeGrid(2.0, 1), ScenarioError);
}

TEST(Interpolate, LinearBetweenNodesAndClampedOutside) {
  const TimeGrid grid(1.0, 2);
  const std::vector<double> f{0.0, 1.0, 4.0};
  EXPECT_DOUBLE_EQ(interpolate(f, grid, 0.25), 0.5);
  EXPECT_DOUBLE_EQ(interpolate(f, grid, 0.75), 2.5);
  EXPECT_DOUBLE_EQ(interpolate(f, grid, -1.0), 0.0);
  EXPECT_DOUBLE_EQ(interpolate(f, grid, 3.0), 4.0);
}

}  // namespace
