#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "surge/synth.hpp"

using namespace surge;
using namespace surge::synth;

namespace {

GroundTruthParams quiet() {
  GroundTruthParams p;
  p.noise_sd = 0.0;
  p.weather_days = 60;
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  GroundTruthParams params = quiet();
  WeatherTrace weather = gen_weather(60, 11);
  std::vector<FeederTemplate> feeders = gen_feeders(1, params, 11);

  OutageEvent event(Minutes restoration, double duration_h, double temp, double ghi) const {
    OutageEvent e;
    e.event_id = 1;
    e.feeder_id = 1;
    e.duration_h = duration_h;
    e.start = restoration - static_cast<Minutes>(duration_h * 60);
    e.n_customers_affected = feeders[0].n_smart_meters;
    e.weather_at_restoration = {temp, ghi, 10.0};
    return e;
  }
};

}  // namespace

TEST(Synth, NightMildRestorationHasNoHpOrDer) {
  Fixture f;
  auto e = f.event(30 * kDayMinutes + 3 * 60, 1.0, 20.0, 0.0);
  ASSERT_EQ(f.weather.ghi[f.weather.index(e.restoration())], 0.0);
  auto p = plant_surge(e, f.feeders[0], f.weather, f.params, 5);
  EXPECT_LT(std::abs(p.record.truth.s_hp), 0.01);
  EXPECT_EQ(p.record.truth.s_der, 0.0);
}

TEST(Synth, EvSurgeGrowsWithDuration) {
  Fixture f;
  Minutes tau0 = 30 * kDayMinutes + 19 * 60;
  auto a = plant_surge(f.event(tau0, 1.0, 10, 0), f.feeders[0], f.weather, f.params, 5);
  auto b = plant_surge(f.event(tau0, 4.0, 10, 0), f.feeders[0], f.weather, f.params, 5);
  ASSERT_GT(a.record.n_deferred_ev, 0);
  EXPECT_GT(b.record.truth.s_ev, a.record.truth.s_ev);
}

TEST(Synth, StripHeatStepBelowThreshold) {
  Fixture f;
  Minutes tau0 = 30 * kDayMinutes + 9 * 60;
  auto cold = plant_surge(f.event(tau0, 2.0, -10, 0), f.feeders[0], f.weather, f.params, 5);
  auto mild = plant_surge(f.event(tau0, 2.0, 10, 0), f.feeders[0], f.weather, f.params, 5);
  EXPECT_GT(cold.record.truth.s_hp, 5.0 * mild.record.truth.s_hp);
}

TEST(Synth, OutsideWeatherCoverage) {
  Fixture f;
  auto e = f.event(2 * kDayMinutes, 1.0, 10, 0);
  EXPECT_THROW(plant_surge(e, f.feeders[0], f.weather, f.params, 5), Error);
}

TEST(Synth, RoundTripNoiseFree) {
  auto ds = gen_city(5, 300, quiet(), 21, 2);
  for (std::size_t i = 0; i < ds.events.size(); ++i) {
    const auto& t = ds.truth[i].truth;
    auto s = metrics::surge_ratios(ds.events[i], ds.traces[i], metrics::SurgeWindow{},
                                   ds.params.der_delay());
    ASSERT_NEAR(s.s_ev, t.s_ev, 1e-9);
    ASSERT_NEAR(s.s_hp, t.s_hp, 1e-9);
    ASSERT_NEAR(s.s_der, t.s_der, 1e-9);
    ASSERT_NEAR(s.s_oth, t.s_oth, 1e-9);
    ASSERT_NEAR(s.s_tot, t.s_tot, 1e-9);
  }
}

TEST(Synth, NoisyTracesEncodeObserved) {
  auto p = quiet();
  p.noise_sd = 0.05;
  auto ds = gen_city(3, 200, p, 22);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < ds.events.size(); ++i) {
    auto s = metrics::surge_ratios(ds.events[i], ds.traces[i], metrics::SurgeWindow{},
                                   ds.params.der_delay());
    ASSERT_NEAR(s.s_der, ds.truth[i].observed.s_der, 1e-9);
    double d = s.s_ev - ds.truth[i].truth.s_ev;
    sum += d;
    sum2 += d * d;
  }
  EXPECT_NEAR(sum / 200, 0.0, 0.015);
  EXPECT_NEAR(std::sqrt(sum2 / 200), 0.05, 0.01);
}

TEST(Synth, ZeroEvPenetration) {
  auto p = quiet();
  p.ev_penetration = {0.0, 0.0, 1.0};
  auto ds = gen_city(4, 100, p, 3);
  for (const auto& t : ds.truth) EXPECT_EQ(t.truth.s_ev, 0.0);
}

TEST(Synth, GhiZeroMeansNoDerSurge) {
  auto ds = gen_city(4, 400, quiet(), 8);
  int dark = 0;
  for (std::size_t i = 0; i < ds.events.size(); ++i)
    if (ds.events[i].weather_at_restoration.ghi == 0.0) {
      ++dark;
      EXPECT_EQ(ds.truth[i].truth.s_der, 0.0);
    }
  EXPECT_GT(dark, 20);
}

TEST(Synth, PlantedMonotonicities) {
  GroundTruthParams p;
  for (double d = 0.25; d < 12; d += 0.25)
    ASSERT_GE(ev_duration_gain(p, d + 0.25), ev_duration_gain(p, d));
  for (double d : {0.5, 1.0, 3.0, 8.0})
    for (double t = -25; t < p.hp_comfort_low_c; t += 0.5)
      ASSERT_GE(hp_increment_kw(p, t, d), hp_increment_kw(p, t + 0.5, d)) << t << " " << d;
}

// Expected mean of planted s_ev from an independent evaluation of the
// deferral propensity at each event's restoration hour.
TEST(Synth, EvMeanMatchesPropensityIntegral) {
  GroundTruthParams p;
  p.noise_sd = 0.0;
  auto ds = gen_city(20, 2000, p, 1, 4);
  auto propensity = [&](double h) {
    auto bump = [](double x, double c, double w) {
      double d = std::fmod(std::abs(x - c), 24.0);
      d = std::min(d, 24.0 - d) / w;
      return std::exp(-0.5 * d * d);
    };
    double c = 0.5 * (p.ev_evening_start_h + p.ev_evening_end_h);
    double w = 0.5 * (p.ev_evening_end_h - p.ev_evening_start_h);
    return std::clamp(p.ev_base_propensity + p.ev_peak_propensity * bump(h, c, w) +
                          p.ev_midday_propensity * bump(h, 12.5, 1.5),
                      0.0, 1.0);
  };
  double expected = 0.0, observed = 0.0;
  for (std::size_t i = 0; i < ds.events.size(); ++i) {
    const auto& e = ds.events[i];
    const auto& t = ds.truth[i];
    double gain = p.ev_gain_floor +
                  p.ev_duration_gain * std::min(e.duration_h, p.ev_saturation_h) /
                      p.ev_saturation_h;
    expected += propensity(hour_of_day(e.restoration())) * t.counts.n_ev * p.ev_charger_kw *
                gain / t.p_tot_base_kw;
    observed += t.truth.s_ev;
  }
  EXPECT_NEAR(observed / expected, 1.0, 0.10);
}

TEST(SampleOutages, Errors) {
  auto p = quiet();
  auto w = gen_weather(60, 1);
  auto fs = gen_feeders(2, p, 1);
  try {
    sample_outages(0, fs, w, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "n \xE2\x89\xA5 1 required");
  }
  EXPECT_THROW(sample_outages(5, {}, w, 1), Error);
}

TEST(SampleOutages, UniformHoursPassChiSquare) {
  auto w = gen_weather(120, 3);
  auto fs = gen_feeders(3, quiet(), 3);
  auto ev = sample_outages(10000, fs, w, 3, OutageSampling::uniform());
  std::vector<int> hist(24, 0);
  for (const auto& e : ev) hist[static_cast<int>(hour_of_day(e.start))]++;
  double chi2 = 0.0, expect = 10000.0 / 24;
  for (int c : hist) chi2 += (c - expect) * (c - expect) / expect;
  EXPECT_LT(chi2, 41.638);  // chi-square(23) upper 1% point
}

TEST(SampleOutages, DeterministicAndInvariants) {
  auto w = gen_weather(60, 4);
  auto fs = gen_feeders(3, quiet(), 4);
  auto a = sample_outages(100, fs, w, 9);
  auto b = sample_outages(100, fs, w, 9);
  auto c = sample_outages(100, fs, w, 10);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].start, b[i].start);
    EXPECT_EQ(a[i].duration_h, b[i].duration_h);
    EXPECT_EQ(a[i].n_customers_affected, b[i].n_customers_affected);
    differ |= a[i].start != c[i].start;
    EXPECT_GT(a[i].duration_h, 0.0);
    EXPECT_LE(a[i].n_customers_affected, fs[a[i].feeder_id - 1].n_smart_meters);
  }
  EXPECT_TRUE(differ);
}

TEST(Weather, Invariants) {
  auto w = gen_weather(365, 2);
  for (std::size_t i = 0; i < w.size(); ++i) {
    ASSERT_GE(w.ghi[i], 0.0);
    ASSERT_LE(w.ghi[i], 1400.0);
    double h = hour_of_day(w.time_at(i));
    if (h < 5.0 || h > 20.0) ASSERT_EQ(w.ghi[i], 0.0);
    if (i > 0) ASSERT_LE(std::abs(w.temp_c[i] - w.temp_c[i - 1]), 5.0);
  }
}

TEST(Feeders, Invariants) {
  auto fs = gen_feeders(50, GroundTruthParams{}, 6);
  for (const auto& f : fs) {
    EXPECT_NO_THROW(f.validate());
    EXPECT_LE(f.n_ev_submeters, f.n_smart_meters);
    EXPECT_LE(f.n_hp_submeters, f.n_smart_meters);
    EXPECT_GE(f.der_capacity_kw, 0.0);
    EXPECT_EQ(f.daily_peak_kw, *std::max_element(f.base_profile.begin(), f.base_profile.end()));
  }
}

TEST(Params, RejectsNegativeGains) {
  auto p = quiet();
  p.hp_cold_slope = -1;
  EXPECT_THROW(gen_city(1, 1, p, 1), Error);
  EXPECT_THROW(gen_city(0, 1, quiet(), 1), Error);
  EXPECT_THROW(gen_city(1, 0, quiet(), 1), Error);
}

TEST(Dataset, ByteIdenticalAcrossRuns) {
  namespace fs = std::filesystem;
  auto root = fs::temp_directory_path() / "surge_synth_det";
  fs::remove_all(root);
  GroundTruthParams p;
  write_dataset(root / "a", gen_city(1, 1, p, 7));
  write_dataset(root / "b", gen_city(1, 1, p, 7, 3));
  for (const char* f : {"events.csv", "feeders.csv", "weather.csv", "ground_truth.csv",
                        "params.json", "traces/1.csv"})
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
  auto back = read_dataset(root / "a");
  EXPECT_EQ(back.events.size(), 1u);
  EXPECT_EQ(back.traces[0].rows.size(), 16u);
  EXPECT_EQ(back.seed, 7u);
  fs::remove_all(root);
}
