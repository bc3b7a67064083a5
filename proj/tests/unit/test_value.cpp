#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mfgtour/congestion.hpp"
#include "mfgtour/value.hpp"

using namespace mfgtour;

namespace {

constexpr double kPi = std::numbers::pi;

ValueTables zero_field_tables(const Scenario& sc) { return build_value_tables(sc, CongestionField::uniform(sc.grid, 0.0)); }

bool has(const std::vector<ChoiceKind>& v, ChoiceKind k) { return std::find(v.begin(), v.end(), k) != v.end(); }

double slot_value(const PointEval& e, Point p, ChoiceKind k) { return e.candidate[*slot_of(p, k)]; }

TEST(CongestionIntegral, ZeroField) {
  const TimeGrid grid(2.0, 200);
  const auto f = CongestionField::uniform(grid, 0.0);
  EXPECT_EQ(congestion_integral(f, Branch::B01, 0.3, 1.7), 0.0);
}

TEST(CongestionIntegral, ConstantFieldRectangle) {
  const TimeGrid grid(2.0, 200);
  EXPECT_NEAR(congestion_integral(CongestionField::uniform(grid, 0.5), Branch::B11, 1.0, 2.0), 0.5, 1e-12);
}

TEST(CongestionIntegral, LinearMassIsIntegratedExactly) {
  // F = 1 * rho + 0 with rho(t) = t on [0, 1]: oracle value 0.5
  const TimeGrid grid(1.0, 1000);
  auto rho = MassProfile::zeros(grid);
  for (int k = 0; k < grid.n_nodes(); ++k) rho.rho[0][k] = grid.t(k);
  Coefficients c;
  c.alpha = {1, 0, 0, 0};
  const auto f = CongestionField::from_params(grid, CongestionParams::constant(c), rho);
  EXPECT_NEAR(congestion_integral(f, Branch::B11, 0.0, 1.0), 0.5, 1e-12);
}

TEST(CongestionIntegral, AdditiveAndRejectsReversedBounds) {
  const TimeGrid grid(2.0, 100);
  std::array<std::vector<double>, 4> s;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (auto& v : s)
    for (int k = 0; k < grid.n_nodes(); ++k) v.push_back(u(rng));
  const auto f = CongestionField::from_samples(grid, s);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 3> t{u(rng) * 2 / 3, u(rng) * 2 / 3, u(rng) * 2 / 3};
    std::sort(t.begin(), t.end());
    EXPECT_NEAR(congestion_integral(f, Branch::B10, t[0], t[1]) + congestion_integral(f, Branch::B10, t[1], t[2]),
                congestion_integral(f, Branch::B10, t[0], t[2]), 1e-12);
  }
  EXPECT_THROW(congestion_integral(f, Branch::B00, 1.0, 0.5), std::invalid_argument);
}

TEST(Value00, WalkBackAtTimeOne) {
  const auto sc = canonical_scenario();
  const auto e = value_00(sc, CongestionField::uniform(sc.grid, 0.0), Point::P1_00, 1000);
  EXPECT_NEAR(e.value, kPi * kPi / 8, 1e-12);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::ToStation});
  EXPECT_DOUBLE_EQ(e.arrival[*slot_of(Point::P1_00, ChoiceKind::ToStation)], 2.0);
}

TEST(Value00, CongestionAddsItsIntegral) {
  const auto sc = canonical_scenario();
  const auto e = value_00(sc, CongestionField::uniform(sc.grid, 0.5), Point::P2_00, 1000);
  EXPECT_NEAR(e.value, kPi * kPi / 8 + 0.5, 1e-12);
}

TEST(Value00, StayIsForcedNearTheHorizon) {
  const auto sc = canonical_scenario();
  const auto f = CongestionField::uniform(sc.grid, 0.0);
  const auto e = value_00(sc, f, Point::P1_00, sc.grid.n_steps() - 1);
  EXPECT_NEAR(e.value, sc.costs.cS, 1e-12);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::Stay});
  const auto end = value_00(sc, f, Point::P1_00, sc.grid.n_steps());
  EXPECT_EQ(end.value, sc.costs.cS);
  EXPECT_TRUE(std::isinf(slot_value(end, Point::P1_00, ChoiceKind::ToStation)));
}

TEST(Value0110, CanonicalCandidatesAtTimeZero) {
  // oracle: stay 7, return 3 + pi^2/16, continue min over the grid 5.551653 at tau = 1.333
  const auto sc = canonical_scenario();
  const auto f = CongestionField::uniform(sc.grid, 0.0);
  const auto vt = zero_field_tables(sc);
  const auto e = value_0110(sc, f, Point::P1_01, 0, vt[Point::P2_00].value);
  EXPECT_NEAR(slot_value(e, Point::P1_01, ChoiceKind::Stay), 7.0, 1e-12);
  EXPECT_NEAR(slot_value(e, Point::P1_01, ChoiceKind::ToStation), 3.616850275068085, 1e-12);
  EXPECT_NEAR(slot_value(e, Point::P1_01, ChoiceKind::ToP2), 5.551653169395964, 1e-5);
  EXPECT_NEAR(e.arrival[*slot_of(Point::P1_01, ChoiceKind::ToP2)], 1.333, 2e-3);
  EXPECT_NEAR(e.value, 3.616850275068085, 1e-12);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::ToStation});
}

TEST(Value0110, StayWinsJustBeforeTheHorizon) {
  const auto sc = canonical_scenario();
  const auto f = CongestionField::uniform(sc.grid, 0.0);
  const auto vt = zero_field_tables(sc);
  const auto e = value_0110(sc, f, Point::P2_10, sc.grid.n_steps() - 1, vt[Point::P1_00].value);
  EXPECT_NEAR(e.value, sc.costs.c1 + sc.costs.cS, 1e-12);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::Stay});
}

TEST(Value0110, ContinuingWinsWhenUnvisitedAndStationCostsAreHuge) {
  // oracle with c2 = cS = 1000: continue 5.551653 at interior tau = 1.333 beats stay 2000 and return 1000.6
  auto r = canonical_raw_scenario();
  r.c2 = 1000;
  r.cS = 1000;
  const auto sc = validate_scenario(r);
  const auto vt = zero_field_tables(sc);
  const auto e = value_0110(sc, CongestionField::uniform(sc.grid, 0.0), Point::P1_01, 0, vt[Point::P2_00].value);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::ToP2});
  const double tau = e.arrival[*slot_of(Point::P1_01, ChoiceKind::ToP2)];
  EXPECT_GT(tau, 0.1);
  EXPECT_LT(tau, 1.9);
  EXPECT_NEAR(e.value, 5.551653169395964, 1e-5);
}

TEST(Value11, SymmetricTieBetweenTheTwoTours) {
  const auto sc = canonical_scenario();
  const auto vt = zero_field_tables(sc);
  const auto e = value_11(sc, CongestionField::uniform(sc.grid, 0.0), 0, vt[Point::P1_01].value, vt[Point::P2_10].value);
  EXPECT_NEAR(e.value, kPi * kPi / 4 + 3, 1e-9);
  EXPECT_NEAR(slot_value(e, Point::Station11, ChoiceKind::Stay), 6.0, 1e-12);
  EXPECT_TRUE(has(e.optimal, ChoiceKind::ToP1));
  EXPECT_TRUE(has(e.optimal, ChoiceKind::ToP2));
  EXPECT_FALSE(has(e.optimal, ChoiceKind::Stay));
  EXPECT_NEAR(e.arrival[*slot_of(Point::Station11, ChoiceKind::ToP1)], 1.0, 1e-9);
}

TEST(Value11, StayForcedNearTheHorizon) {
  const auto sc = canonical_scenario();
  const auto vt = zero_field_tables(sc);
  const auto e = vt[Point::Station11].at(sc.grid.n_steps() - 1);
  EXPECT_NEAR(e.value, sc.costs.c1 + sc.costs.c2, 1e-12);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::Stay});
}

TEST(Value11, CheapAttractionsAreSkipped) {
  auto r = canonical_raw_scenario();
  r.c1 = r.c2 = 0.1;
  const auto sc = validate_scenario(r);
  const auto e = zero_field_tables(sc)[Point::Station11].at(0);
  EXPECT_NEAR(e.value, 0.2, 1e-12);
  EXPECT_EQ(e.optimal, std::vector<ChoiceKind>{ChoiceKind::Stay});
}

TEST(ValueTables, ZeroMassMatchesTheZeroField) {
  const auto sc = canonical_scenario(400);
  Coefficients c;
  c.alpha = {2, 2, 2, 2};
  const auto a = build_value_tables(sc, CongestionParams::constant(c), MassProfile::zeros(sc.grid));
  const auto b = zero_field_tables(sc);
  for (Point p : kPoints) EXPECT_EQ(a[p].value, b[p].value);
}

TEST(ValueTables, MassIsIrrelevantWithoutAlpha) {
  const auto sc = canonical_scenario(400);
  Coefficients c;
  c.beta = {0.1, 0.2, 0.3, 0.4};
  auto rho = MassProfile::zeros(sc.grid);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (auto& comp : rho.rho)
    for (double& v : comp) v = u(rng);
  const auto a = build_value_tables(sc, CongestionParams::constant(c), rho);
  const auto b = build_value_tables(sc, CongestionParams::constant(c), MassProfile::zeros(sc.grid));
  for (Point p : kPoints) EXPECT_EQ(a[p].value, b[p].value);
}

TEST(ValueTables, CongestionNeverLowersAValue) {
  const auto sc = canonical_scenario(400);
  Coefficients c;
  c.alpha = {1, 1, 1, 1};
  auto rho = MassProfile::zeros(sc.grid);
  for (auto& comp : rho.rho) std::fill(comp.begin(), comp.end(), 0.1);
  const auto loaded = build_value_tables(sc, CongestionParams::constant(c), rho);
  const auto free = zero_field_tables(sc);
  for (Point p : kPoints)
    for (int k = 0; k < sc.grid.n_nodes(); ++k) EXPECT_GE(loaded[p].value[k], free[p].value[k] - 1e-12);
}

TEST(ValueTables, PropertiesOnRandomFields) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    auto r = canonical_raw_scenario(200);
    r.c1 = 0.5 + 4 * u(rng);
    r.c2 = 0.5 + 4 * u(rng);
    r.cS = 0.5 + 4 * u(rng);
    const auto sc = validate_scenario(r);
    std::array<std::vector<double>, 4> s, bigger;
    for (int w = 0; w < 4; ++w)
      for (int k = 0; k < sc.grid.n_nodes(); ++k) {
        s[w].push_back(u(rng));
        bigger[w].push_back(s[w].back() + 0.5 * u(rng));
      }
    const auto f = CongestionField::from_samples(sc.grid, s);
    const auto vt = build_value_tables(sc, f);
    const auto up = build_value_tables(sc, CongestionField::from_samples(sc.grid, bigger));
    const double T = sc.grid.horizon();
    for (int k = 0; k < sc.grid.n_nodes(); ++k) {
      const double t = sc.grid.t(k);
      for (Point p : kPoints) {
        const auto e = vt[p].at(k);
        EXPECT_GE(e.value, 0.0);
        EXPECT_GE(up[p].value[k], e.value - 1e-12);
        double best = kInf;
        for (int i = 0; i < e.n_slots; ++i) {
          best = std::min(best, e.candidate[i]);
          if (std::isfinite(e.arrival[i])) {
            EXPECT_GT(e.arrival[i], t);
            EXPECT_LE(e.arrival[i], T);
          }
        }
        EXPECT_DOUBLE_EQ(e.value, best);
      }
      EXPECT_LE(vt[Point::Station11].value[k], r.c1 + r.c2 + f.integral_nodes(Branch::B11, k, k, sc.grid.n_steps()) + 1e-12);
      EXPECT_LE(vt[Point::P1_01].value[k], r.c2 + r.cS + f.integral_nodes(Branch::B01, k, k, sc.grid.n_steps()) + 1e-12);
      EXPECT_LE(vt[Point::P1_00].value[k], r.cS + f.integral_nodes(Branch::B00, k, k, sc.grid.n_steps()) + 1e-12);
    }
  }
}

TEST(ValueTables, RefinementIsFirstOrder) {
  const auto v = [](int n) { return zero_field_tables(canonical_scenario(n)); };
  const auto a = v(250), b = v(500), c = v(1000);
  double d1 = 0.0, d2 = 0.0;
  for (Point p : kPoints)
    for (int k = 0; k < 250; ++k) {
      d1 = std::max(d1, std::abs(a[p].value[k] - b[p].value[2 * k]));
      d2 = std::max(d2, std::abs(b[p].value[2 * k] - c[p].value[4 * k]));
    }
  EXPECT_LT(d1, 0.05);
  EXPECT_LE(d2, 0.75 * d1 + 1e-9);
}

TEST(ChoiceSchedule, AttractionHeadsHomeThenStaysNearTheEnd) {
  const auto sc = canonical_scenario();
  const auto s = build_choice_schedule(zero_field_tables(sc)[Point::P1_01], 1e-3, TieBreak::prefer_p1());
  ASSERT_LE(s.segments.size(), 2u);
  EXPECT_EQ(s.segments.front().begin, 0);
  EXPECT_EQ(s.segments.front().kind, ChoiceKind::ToStation);
  EXPECT_EQ(s.segments.back().kind, ChoiceKind::Stay);
  EXPECT_GT(s.segments.back().begin, sc.grid.n_steps() / 2);
}

TEST(ChoiceSchedule, StrictUniqueMinimizerGivesOneSegment) {
  const std::vector<std::vector<double>> cand{std::vector<double>(50, 1.0), std::vector<double>(50, 2.0)};
  const std::array<ChoiceKind, 2> kinds{ChoiceKind::Stay, ChoiceKind::ToStation};
  const auto s = build_choice_schedule(Point::P1_00, cand, kinds, 0.1, TieBreak::prefer_p1());
  ASSERT_EQ(s.segments.size(), 1u);
  EXPECT_EQ(s.segments[0].kind, ChoiceKind::Stay);
}

TEST(ChoiceSchedule, TieBreakSeedPicksTheTour) {
  const auto sc = canonical_scenario(400);
  const auto vt = zero_field_tables(sc);
  EXPECT_EQ(build_choice_schedule(vt[Point::Station11], 1e-3, TieBreak::prefer_p1()).at(0), ChoiceKind::ToP1);
  EXPECT_EQ(build_choice_schedule(vt[Point::Station11], 1e-3, TieBreak::prefer_p2()).at(0), ChoiceKind::ToP2);
}

TEST(ChoiceSchedule, HysteresisSpacingAndSoundness) {
  // two candidates with slope difference at most Lp: boundaries at least eps / Lp apart
  const TimeGrid grid(2.0, 4000);
  const double eps = 0.05, Lp = 3.0;
  std::vector<std::vector<double>> cand(2, std::vector<double>(grid.n_nodes()));
  for (int k = 0; k < grid.n_nodes(); ++k) {
    cand[0][k] = 1.0;
    cand[1][k] = 1.0 + 0.3 * std::sin(10.0 * grid.t(k));
  }
  const std::array<ChoiceKind, 2> kinds{ChoiceKind::Stay, ChoiceKind::ToStation};
  const auto s = build_choice_schedule(Point::P1_00, cand, kinds, eps, TieBreak::prefer_p1());
  ASSERT_GT(s.segments.size(), 3u);
  for (std::size_t i = 1; i < s.segments.size(); ++i) {
    EXPECT_GE((s.segments[i].begin - s.segments[i - 1].begin) * grid.dt(), eps / Lp - grid.dt());
  }
  for (const auto& seg : s.segments) {
    const int slot = seg.kind == ChoiceKind::Stay ? 0 : 1;
    for (int k = seg.begin; k < seg.end; ++k) {
      const double gap = cand[slot][k] - std::min(cand[0][k], cand[1][k]);
      EXPECT_LT(gap, eps);
    }
    if (seg.begin > 0) {
      const int prev = 1 - slot;
      EXPECT_GE(cand[prev][seg.begin] - std::min(cand[0][seg.begin], cand[1][seg.begin]), eps - grid.dt() * Lp);
    }
  }
}

TEST(ChoiceSchedule, RejectsNonPositiveEpsilon) {
  const auto sc = canonical_scenario(100);
  EXPECT_THROW(build_choice_schedule(zero_field_tables(sc)[Point::P1_00], 0.0, TieBreak::prefer_p1()),
               std::invalid_argument);
}

}  // namespace
