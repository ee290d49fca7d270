#include <gtest/gtest.h>

#include <cmath>

#include "surge/empirics.hpp"

using namespace surge;
using namespace surge::empirics;

namespace {

std::vector<Obs> draw(Rng& rng, int n, double r, double shift = 0.0) {
  std::vector<Obs> v;
  for (int i = 0; i < n; ++i) {
    Obs o;
    o.r = r;
    o.s = standard_normal(rng) + shift;
    o.hour = 24 * uniform01(rng);
    o.duration_h = 8 * uniform01(rng);
    o.temp_c = -10 + 40 * uniform01(rng);
    o.ghi = 1000 * uniform01(rng);
    v.push_back(o);
  }
  return v;
}

std::vector<Obs> concat(std::vector<Obs> a, const std::vector<Obs>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const PenetrationBands kEv = PenetrationBands::defaults(Asset::Ev);

// Shared planted dataset for the ordering checks.
const std::vector<SurgeRecord>& planted() {
  static const std::vector<SurgeRecord> recs = [] {
    synth::GroundTruthParams p;
    auto ds = synth::gen_city(60, 4000, p, 17, 4);
    return build_records(ds, metrics::SurgeWindow{}, p.der_delay(), 4);
  }();
  return recs;
}

}  // namespace

TEST(Bands, DefaultsAndMembership) {
  for (Asset a : {Asset::Ev, Asset::Hp, Asset::Der}) EXPECT_NO_THROW(PenetrationBands::defaults(a).validate());
  EXPECT_EQ(kEv.band_of(0.05), 0);
  EXPECT_EQ(kEv.band_of(0.10), 1);
  EXPECT_EQ(kEv.band_of(0.50), 3);
  EXPECT_EQ(kEv.band_of(0.04), -1);
  EXPECT_EQ(kEv.band_of(0.51), -1);
  EXPECT_EQ(kEv.label(0), "B1 5-10%");
  EXPECT_THROW((PenetrationBands{Asset::Ev, {0.1, 0.1, 0.2}}.validate()), Error);
}

TEST(BandStats, SingletonBand) {
  std::vector<Obs> v{{0.07, 1.25}};
  auto st = band_stats(v, kEv);
  EXPECT_EQ(st[0].count, 1u);
  EXPECT_EQ(st[0].median, 1.25);
  EXPECT_EQ(st[0].p95, 1.25);
  EXPECT_TRUE(st[1].empty);
}

TEST(BandStats, UniformP95OrderStatistic) {
  Rng rng = make_rng(4, 0);
  std::vector<Obs> v;
  for (int i = 0; i < 1001; ++i) v.push_back({0.07, uniform01(rng)});
  EXPECT_NEAR(band_stats(v, kEv)[0].p95, 0.95, 0.02);
}

TEST(Wilson, ContainsEstimate) {
  for (std::size_t n : {1u, 5u, 40u, 1000u})
    for (std::size_t k = 0; k <= n; k += std::max<std::size_t>(1, n / 7)) {
      auto w = wilson_interval(k, n);
      double p = static_cast<double>(k) / n;
      ASSERT_LE(w.lo, p + 1e-15);
      ASSERT_GE(w.hi, p - 1e-15);
      ASSERT_GE(w.lo, 0.0);
      ASSERT_LE(w.hi, 1.0);
    }
  auto w = wilson_interval(50, 100);
  EXPECT_NEAR(w.lo, 0.4038, 1e-4);
  EXPECT_NEAR(w.hi, 0.5962, 1e-4);
}

TEST(Exceedance, DegenerateThresholds) {
  Rng rng = make_rng(5, 0);
  std::vector<Obs> v;
  for (int i = 0; i < 300; ++i) v.push_back({uniform01(rng) * 0.5, uniform01(rng)});
  std::vector<double> grid{0, 0.1, 0.2, 0.3, 0.4, 0.5};
  for (const auto& pt : exceedance_curve(v, 5.0, grid)) EXPECT_EQ(pt.p, 0.0);
  for (const auto& pt : exceedance_curve(v, -1.0, grid)) EXPECT_EQ(pt.p, 1.0);
  std::size_t total = 0;
  for (const auto& pt : exceedance_curve(v, 0.5, grid)) {
    total += pt.n;
    EXPECT_LE(pt.ci_lo, pt.p);
    EXPECT_GE(pt.ci_hi, pt.p);
  }
  EXPECT_EQ(total, 300u);
}

TEST(Bootstrap, SymmetryUnderIdenticalBands) {
  Rng rng = make_rng(6, 0);
  auto v = concat(draw(rng, 300, 0.07), draw(rng, 300, 0.40));
  BootstrapConfig cfg;
  cfg.seed = 3;
  cfg.threads = 4;
  auto r = bootstrap_band_compare(v, kEv, 0, 3, SubsetFilter::all(), cfg);
  EXPECT_EQ(r.estimates.size(), 1000u);
  EXPECT_NEAR(r.mean, 0.5, 0.02);
  for (double e : r.estimates) ASSERT_TRUE(e >= 0.0 && e <= 1.0);
}

TEST(Bootstrap, DominanceOracle) {
  Rng rng = make_rng(7, 0);
  auto lo = draw(rng, 200, 0.07);
  for (auto& o : lo) o.s = uniform01(rng);
  auto hi = draw(rng, 200, 0.40);
  for (auto& o : hi) o.s = 1.0 + uniform01(rng);
  auto r = bootstrap_band_compare(concat(lo, hi), kEv, 0, 3, SubsetFilter::all(), {});
  EXPECT_GT(r.mean, 0.95);
}

TEST(Bootstrap, SwapMapsToComplement) {
  Rng rng = make_rng(8, 0);
  auto v = concat(draw(rng, 150, 0.07), draw(rng, 150, 0.40, 0.3));
  BootstrapConfig cfg;
  auto a = bootstrap_band_compare(v, kEv, 0, 3, SubsetFilter::all(), cfg);
  auto b = bootstrap_band_compare(v, kEv, 3, 0, SubsetFilter::all(), cfg);
  EXPECT_NEAR(a.mean + b.mean, 1.0, 0.02);
}

TEST(Bootstrap, DeterministicAcrossThreads) {
  Rng rng = make_rng(9, 0);
  auto v = concat(draw(rng, 100, 0.07), draw(rng, 100, 0.40, 0.2));
  BootstrapConfig c1, c4;
  c4.threads = 4;
  EXPECT_EQ(bootstrap_band_compare(v, kEv, 0, 3, SubsetFilter::all(), c1).estimates,
            bootstrap_band_compare(v, kEv, 0, 3, SubsetFilter::all(), c4).estimates);
}

TEST(Bootstrap, EmptyBandNamesBandAndFilter) {
  Rng rng = make_rng(10, 0);
  auto v = draw(rng, 50, 0.07);
  try {
    bootstrap_band_compare(v, kEv, 0, 3, SubsetFilter::preset("ev_night_long"), {});
    FAIL();
  } catch (const Error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("ev_night_long"), std::string::npos);
    EXPECT_NE(msg.find("B4"), std::string::npos);
  }
  BootstrapConfig small;
  small.iterations = 50;
  EXPECT_THROW(bootstrap_band_compare(concat(v, draw(rng, 5, 0.4)), kEv, 0, 3,
                                      SubsetFilter::all(), small),
               Error);
}

TEST(Filters, PresetDefinitions) {
  auto night = SubsetFilter::preset("ev_night_long");
  EXPECT_TRUE(night.accepts({0, 0, 5.0, 4.0}));
  EXPECT_TRUE(night.accepts({0, 0, 18.0, 6.0}));
  EXPECT_FALSE(night.accepts({0, 0, 12.0, 6.0}));
  EXPECT_FALSE(night.accepts({0, 0, 20.0, 3.0}));
  auto cold = SubsetFilter::preset("hp_cold_long");
  EXPECT_TRUE(cold.accepts({0, 0, 0, 4.0, 10.0}));  // 50 F
  EXPECT_FALSE(cold.accepts({0, 0, 0, 4.0, 10.1}));
  auto hot = SubsetFilter::preset("hp_hot_long");
  EXPECT_TRUE(hot.accepts({0, 0, 0, 4.0, 26.7}));
  EXPECT_FALSE(hot.accepts({0, 0, 0, 4.0, 26.6}));
  auto matched = SubsetFilter::preset("der_matched_irradiance");
  EXPECT_EQ(matched.ghi_bins.size(), 5u);
  EXPECT_THROW(SubsetFilter::preset("nope"), Error);
}

TEST(MannWhitney, HandCase) {
  // hi = {3, 4}, lo = {1, 2}: every pair favours hi.
  auto r = mann_whitney({1, 2}, {3, 4});
  EXPECT_EQ(r.u, 4.0);
  auto t = mann_whitney({1, 2}, {2, 3});
  EXPECT_EQ(t.u, 3.5);
}

TEST(MannWhitney, PowerOracle) {
  Rng rng = make_rng(11, 0);
  std::vector<double> lo, hi;
  for (int i = 0; i < 200; ++i) lo.push_back(standard_normal(rng));
  for (int i = 0; i < 200; ++i) hi.push_back(standard_normal(rng) + 0.5);
  EXPECT_LT(mann_whitney(lo, hi).p, 1e-6);
}

TEST(MannWhitney, NullCalibration) {
  std::vector<double> ps;
  for (int seed = 0; seed < 400; ++seed) {
    Rng rng = make_rng(12, 0, static_cast<std::uint64_t>(seed));
    std::vector<double> lo, hi;
    for (int i = 0; i < 60; ++i) lo.push_back(standard_normal(rng));
    for (int i = 0; i < 60; ++i) hi.push_back(standard_normal(rng));
    ps.push_back(mann_whitney(lo, hi).p);
  }
  EXPECT_GT(ks_uniform(ps).p, 0.05);
}

TEST(AdjacentTest, UnderpoweredFlag) {
  Rng rng = make_rng(13, 0);
  auto v = concat(draw(rng, 5, 0.07), draw(rng, 5, 0.15));
  auto t = adjacent_band_test(v, kEv);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_TRUE(t[0].underpowered);
}

TEST(Thresholds, IdenticalBandsGiveQ) {
  Rng rng = make_rng(14, 0);
  std::vector<Obs> v;
  for (double r : {0.07, 0.15, 0.25, 0.40}) v = concat(v, draw(rng, 2000, r));
  for (const auto& row : percentile_threshold_analysis(v, kEv))
    for (double p : row.below) EXPECT_NEAR(p, row.q / 100.0, 0.04);
}

TEST(Thresholds, DegenerateAndPreconditions) {
  std::vector<Obs> v(150, Obs{0.07, 1.0});
  auto rows = percentile_threshold_analysis(v, kEv, {90});
  EXPECT_TRUE(rows[0].degenerate);
  EXPECT_THROW(percentile_threshold_analysis(std::vector<Obs>(50, Obs{0.07, 1.0}), kEv), Error);
}

TEST(Ks, DetectsNonUniform) {
  std::vector<double> x;
  for (int i = 0; i < 200; ++i) x.push_back(std::pow((i + 0.5) / 200, 2));
  EXPECT_LT(ks_uniform(x).p, 0.01);
}

TEST(Planted, P95RisesAcrossBands) {
  for (Asset a : {Asset::Ev, Asset::Hp, Asset::Der}) {
    auto st = band_stats(observations(planted(), a), PenetrationBands::defaults(a));
    for (std::size_t b = 1; b < st.size(); ++b) {
      ASSERT_FALSE(st[b].empty) << asset_name(a);
      EXPECT_GT(st[b].p95, st[b - 1].p95) << asset_name(a) << " band " << b;
    }
  }
}

TEST(Planted, SubThresholdFallsAcrossBands) {
  for (Asset a : {Asset::Ev, Asset::Hp, Asset::Der}) {
    auto rows = percentile_threshold_analysis(observations(planted(), a),
                                              PenetrationBands::defaults(a));
    for (const auto& row : rows)
      for (std::size_t b = 1; b < row.below.size(); ++b)
        EXPECT_LT(row.below[b], row.below[b - 1]) << asset_name(a) << " q" << row.q;
  }
}

TEST(Planted, ConditioningSharpensEvComparison) {
  auto obs = observations(planted(), Asset::Ev);
  BootstrapConfig cfg;
  cfg.iterations = 200;
  cfg.threads = 4;
  auto all = bootstrap_band_compare(obs, kEv, 0, 3, SubsetFilter::all(), cfg);
  auto night = bootstrap_band_compare(obs, kEv, 0, 3, SubsetFilter::preset("ev_night_long"), cfg);
  EXPECT_GT(all.mean, 0.5);
  EXPECT_GT(night.mean, all.mean);
}

TEST(Planted, DerExceedanceLowAtLowPenetration) {
  auto obs = observations(planted(), Asset::Der);
  auto curve = exceedance_curve(obs, pooled_threshold(obs, 80),
                                {0.03, 0.08, 0.15, 0.25, 0.40});
  EXPECT_LT(curve[0].p, 0.05);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GT(curve[i].p, curve[i - 1].p);
}
