#include <gtest/gtest.h>

#include <cmath>

#include "surge/metrics.hpp"

using namespace surge;
using namespace surge::metrics;

namespace {

OutageEvent make_event(Minutes start, double duration_h) {
  OutageEvent e;
  e.event_id = 1;
  e.feeder_id = 1;
  e.start = start;
  e.duration_h = duration_h;
  e.n_customers_affected = 100;
  return e;
}

// Trace with flat baseline rows and a single post-restoration level.
EventTrace flat_trace(const OutageEvent& e, TraceRow base, TraceRow post, int post_rows = 9) {
  EventTrace tr;
  for (Minutes t : baseline_times(e, SurgeWindow{})) {
    TraceRow r = base;
    r.t = t;
    tr.rows.push_back(r);
  }
  for (int k = 0; k < post_rows; ++k) {
    TraceRow r = post;
    r.t = e.restoration() + k * kStepMinutes;
    tr.rows.push_back(r);
  }
  std::sort(tr.rows.begin(), tr.rows.end(),
            [](const TraceRow& a, const TraceRow& b) { return a.t < b.t; });
  return tr;
}

// Independent truncated-normal density and trapezoid rule.
double tn_pdf(double x, double mu, double sigma, double lo) {
  if (x < lo) return 0.0;
  double z = 0.5 * std::erfc((lo - mu) / (sigma * std::sqrt(2.0)));
  return std::exp(-0.5 * std::pow((x - mu) / sigma, 2)) / (sigma * std::sqrt(2 * M_PI) * z);
}

double trapezoid_missing(const std::function<double(double)>& c, double mu, double sigma,
                         double lo, double window) {
  if (lo >= window) return c(0.0);
  const int n = 200000;
  double h = (window - lo) / n, s = 0.0;
  for (int i = 0; i <= n; ++i) {
    double x = lo + i * h;
    double w = (i == 0 || i == n) ? 0.5 : 1.0;
    s += w * c(x) * tn_pdf(x, mu, sigma, lo);
  }
  return c(0.0) - s * h;
}

const Minutes kT0 = 30 * kDayMinutes + 14 * 60;

}  // namespace

TEST(SurgeRatios, IdentityGivesZero) {
  auto e = make_event(kT0, 1.0);
  TraceRow b{0, 1000, 100, 200, 0};
  auto s = surge_ratios(e, flat_trace(e, b, b), SurgeWindow{}, DerDelayModel{});
  EXPECT_EQ(s.s_tot, 0.0);
  EXPECT_EQ(s.s_ev, 0.0);
  EXPECT_EQ(s.s_hp, 0.0);
  EXPECT_EQ(s.s_der, 0.0);
  EXPECT_EQ(s.s_oth, 0.0);
}

TEST(SurgeRatios, HandEvaluation) {
  auto e = make_event(kT0, 2.0);
  auto s = surge_ratios(e, flat_trace(e, {0, 1000, 100, 200, 0}, {0, 1500, 300, 400, 0}),
                        SurgeWindow{}, DerDelayModel{});
  EXPECT_NEAR(s.s_tot, 0.5, 1e-15);
  EXPECT_NEAR(s.s_ev, 0.2, 1e-15);
  EXPECT_NEAR(s.s_hp, 0.2, 1e-15);
  EXPECT_EQ(s.s_der, 0.0);
  EXPECT_NEAR(s.s_oth, 0.1, 1e-15);
}

TEST(SurgeRatios, DecompositionAndScaleInvarianceRandomized) {
  Rng rng = make_rng(42, 0);
  for (int c = 0; c < 100; ++c) {
    auto e = make_event(kT0 + static_cast<Minutes>(uniform01(rng) * 96) * 15,
                        0.25 * (1 + static_cast<int>(uniform01(rng) * 40)));
    EventTrace tr = flat_trace(e, {}, {});
    for (auto& r : tr.rows) {
      r.total_kw = 500 + 2000 * uniform01(rng);
      r.ev_kw = 300 * uniform01(rng);
      r.hp_kw = 600 * uniform01(rng);
      r.der_kw = 400 * uniform01(rng);
    }
    auto s = surge_ratios(e, tr, SurgeWindow{}, DerDelayModel{});
    ASSERT_NEAR(s.s_tot, s.s_ev + s.s_hp + s.s_der + s.s_oth, 1e-12);
    const double k = 0.1 + 10 * uniform01(rng);
    for (auto& r : tr.rows) {
      r.total_kw *= k;
      r.ev_kw *= k;
      r.hp_kw *= k;
      r.der_kw *= k;
    }
    auto s2 = surge_ratios(e, tr, SurgeWindow{}, DerDelayModel{});
    ASSERT_NEAR(s2.s_tot, s.s_tot, 1e-12);
    ASSERT_NEAR(s2.s_ev, s.s_ev, 1e-12);
    ASSERT_NEAR(s2.s_hp, s.s_hp, 1e-12);
    ASSERT_NEAR(s2.s_der, s.s_der, 1e-12);
    ASSERT_NEAR(s2.s_oth, s.s_oth, 1e-12);
  }
}

TEST(SurgeRatios, DegenerateBaseline) {
  auto e = make_event(kT0, 1.0);
  try {
    surge_ratios(e, flat_trace(e, {0, 0, 0, 0, 0}, {0, 10, 0, 0, 0}), SurgeWindow{},
                 DerDelayModel{});
    FAIL();
  } catch (const Error& err) {
    EXPECT_NE(std::string(err.what()).find("degenerate baseline"), std::string::npos);
  }
}

TEST(SurgeRatios, MissingRowsThrow) {
  auto e = make_event(kT0, 1.0);
  EventTrace tr = flat_trace(e, {0, 1000, 0, 0, 0}, {0, 1000, 0, 0, 0});
  tr.rows.erase(tr.rows.begin());
  EXPECT_THROW(surge_ratios(e, tr, SurgeWindow{}, DerDelayModel{}), Error);
  EventTrace tr2 = flat_trace(e, {0, 1000, 0, 0, 0}, {0, 1000, 0, 0, 0}, 0);
  EXPECT_THROW(surge_ratios(e, tr2, SurgeWindow{}, DerDelayModel{}), Error);
}

TEST(Baseline, SameClockTimeSevenDays) {
  auto e = make_event(kT0, 3.0);
  auto times = baseline_times(e, SurgeWindow{});
  ASSERT_EQ(times.size(), 7u);
  for (std::size_t d = 0; d < 7; ++d) {
    EXPECT_EQ(times[d], e.restoration() - static_cast<Minutes>(d + 1) * kDayMinutes);
    EXPECT_LT(times[d] + 15, e.start + 1);
  }
  // An outage longer than a day pushes the reference days back.
  auto long_e = make_event(kT0, 30.0);
  EXPECT_LE(baseline_times(long_e, SurgeWindow{}).front() + 15, long_e.start);
}

TEST(Penetration, HandCases) {
  auto r = penetration(EventCounts{1000, 250, 400, 2000, 8000});
  EXPECT_DOUBLE_EQ(r.r_ev, 0.25);
  EXPECT_DOUBLE_EQ(r.r_hp, 0.40);
  EXPECT_DOUBLE_EQ(r.r_der, 0.25);
  EXPECT_EQ(penetration(EventCounts{1000, 0, 0, 0, 10}).r_ev, 0.0);
  EXPECT_EQ(penetration(EventCounts{1000, 1000, 0, 0, 10}).r_ev, 1.0);
  EXPECT_THROW(penetration(EventCounts{0, 0, 0, 0, 10}), Error);
  EXPECT_THROW(penetration(EventCounts{10, 0, 0, 0, 0}), Error);
}

TEST(Penetration, EventCountsScaleByAffectedShare) {
  FeederTemplate f;
  f.n_smart_meters = 1000;
  f.n_ev_submeters = 200;
  f.n_hp_submeters = 500;
  f.der_capacity_kw = 300;
  f.daily_peak_kw = 1500;
  OutageEvent e = make_event(kT0, 1);
  e.n_customers_affected = 500;
  auto c = event_counts(e, f);
  EXPECT_EQ(c.n_ev, 100);
  EXPECT_EQ(c.n_hp, 250);
  EXPECT_DOUBLE_EQ(c.der_capacity_kw, 150);
  auto r = penetration(e, f);
  EXPECT_DOUBLE_EQ(r.r_ev, 0.2);
  EXPECT_DOUBLE_EQ(r.r_der, 0.2);
}

TEST(DerMissing, ZeroGeneration) {
  auto m = der_missing_power([](double) { return 0.0; }, DerDelayModel{}, SurgeWindow{});
  EXPECT_EQ(m.kw, 0.0);
}

TEST(DerMissing, ConstantClosedForm) {
  for (auto model : {DerDelayModel{}, DerDelayModel{20, 5, 5}, DerDelayModel{12, 4, 2}}) {
    const double c = 123.4;
    auto m = der_missing_power([c](double) { return c; }, model, SurgeWindow{});
    auto d = DelayDensity::from(model);
    double q = d.mass(d.lo, 15.0);
    EXPECT_NEAR(m.kw, c * (1.0 - q), 1e-8 * c);
    EXPECT_NEAR(m.captured_mass, q, 1e-15);
    EXPECT_NEAR(m.kw, trapezoid_missing([c](double) { return c; }, model.mu, model.sigma,
                                        model.tau_min, 15.0),
                1e-6 * c);
  }
}

TEST(DerMissing, MatchesTrapezoidOnRandomProfiles) {
  Rng rng = make_rng(3, 0);
  for (int k = 0; k < 50; ++k) {
    double a = 50 + 500 * uniform01(rng), b = -5 + 10 * uniform01(rng),
           w = 0.05 + 0.2 * uniform01(rng);
    auto c = [=](double t) { return a + b * t + 20 * std::sin(w * t); };
    DerDelayModel m{2 + 25 * uniform01(rng), 0.5 + 6 * uniform01(rng), 12 * uniform01(rng)};
    double got = der_missing_power(c, m, SurgeWindow{}).kw;
    double want = trapezoid_missing(c, m.mu, m.sigma, m.tau_min, 15.0);
    ASSERT_NEAR(got, want, 1e-6 * std::abs(want) + 1e-9) << k;
  }
}

TEST(DerMissing, NoMassInWindowIsFlagged) {
  auto m = der_missing_power([](double) { return 50.0; }, DerDelayModel{25, 3, 20},
                             SurgeWindow{});
  EXPECT_EQ(m.kw, 50.0);
  EXPECT_TRUE(m.no_reconnect_in_window);
}

TEST(DerMissing, NonIncreasingInCapturedMass) {
  double prev = -1.0, prev_q = 2.0;
  for (double mu = 40; mu >= 0; mu -= 2) {
    auto m = der_missing_power([](double) { return 10.0; }, DerDelayModel{mu, 3, 1},
                               SurgeWindow{});
    ASSERT_LE(m.captured_mass, 1.0);
    if (prev >= 0.0 && m.captured_mass >= prev_q) EXPECT_LE(m.kw, prev + 1e-12);
    prev = m.kw;
    prev_q = m.captured_mass;
  }
}

TEST(DelayDensity, IntegratesToOne) {
  for (auto d : {DelayDensity::from(DerDelayModel{}), DelayDensity::from({20, 5, 5}),
                 DelayDensity::uniform(0.5, 15)}) {
    double hi = std::isfinite(d.hi) ? d.hi : d.mu + 12 * d.sigma;
    const int n = 100000;
    double h = (hi - d.lo) / n, s = 0;
    for (int i = 0; i <= n; ++i) s += ((i == 0 || i == n) ? 0.5 : 1.0) * d.pdf(d.lo + i * h);
    EXPECT_NEAR(s * h, 1.0, 1e-6);
  }
}

TEST(DerDelayModel, Validation) {
  EXPECT_THROW(DerDelayModel({5, 0, 1}).validate(), Error);
  EXPECT_THROW(DerDelayModel({5, 1, -1}).validate(), Error);
}
