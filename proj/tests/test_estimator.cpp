#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "surge/estimator.hpp"

using namespace surge;
using namespace surge::estimator;

namespace {

ModelConfig small(int L = 2) {
  ModelConfig c;
  c.T = 8;
  c.D = 16;
  c.L = L;
  c.n_heads = 4;
  c.H = 8;
  return c;
}

EventFeatures random_features(Rng& rng, int T, int n_pad = 0) {
  EventFeatures f;
  f.x = Mat::Zero(T, kFeatureDim);
  f.pad.assign(T, 0);
  for (int k = 0; k < T; ++k) {
    if (k < n_pad) {
      f.pad[k] = 1;
      f.x(k, kFeatureDim - 1) = 1.0;
      continue;
    }
    for (int j = 0; j < kFeatureDim - 1; ++j) f.x(k, j) = standard_normal(rng);
  }
  return f;
}

WeatherTrace flat_weather(Minutes start, int steps) {
  WeatherTrace w;
  w.start = start;
  for (int i = 0; i < steps; ++i) {
    w.temp_c.push_back(10.0 + 0.01 * i);
    w.ghi.push_back(i % 96 < 48 ? 0.0 : 300.0);
    w.precipitable_water.push_back(20.0);
  }
  return w;
}

Model trained_like(std::uint64_t seed) {
  Model m(small());
  m.init(seed);
  return m;
}

}  // namespace

TEST(Featurize, EventAtWeatherStartIsPadded) {
  WeatherTrace w = flat_weather(parse_iso8601("2021-03-01T00:00"), 200);
  OutageEvent e;
  e.start = w.start;
  e.duration_h = 1.0;  // restoration at step 4
  auto f = featurize(e, {0.1, 0.2, 0.3}, w, 32);
  ASSERT_EQ(f.steps(), 32);
  for (int k = 0; k < 32; ++k) {
    bool pad = k < 32 - 5;
    EXPECT_EQ(f.pad[k] != 0, pad) << k;
    EXPECT_EQ(f.x(k, kFeatureDim - 1), pad ? 1.0 : 0.0);
  }
  EXPECT_EQ(f.x(31, 9), 0.0);   // restoration step: outage over
  EXPECT_EQ(f.x(30, 9), 1.0);
  EXPECT_DOUBLE_EQ(f.x(31, 10), 1.0);
}

TEST(Featurize, MissingWeatherThrows) {
  WeatherTrace w = flat_weather(parse_iso8601("2021-03-01T00:00"), 10);
  OutageEvent e;
  e.start = w.start + 60;
  e.duration_h = 2.0;
  EXPECT_THROW(featurize(e, {}, w, 32), Error);
}

TEST(Featurize, DuplicatesAreIdentical) {
  WeatherTrace w = flat_weather(parse_iso8601("2021-03-01T00:00"), 400);
  OutageEvent e;
  e.start = w.start + 3000;
  e.duration_h = 2.25;
  auto a = featurize(e, {0.1, 0.2, 0.3}, w, 32);
  auto b = featurize(e, {0.1, 0.2, 0.3}, w, 32);
  EXPECT_TRUE(a.x == b.x);
  EXPECT_EQ(a.pad, b.pad);
}

TEST(Featurize, HourEncodingClosedForm) {
  auto f = featurize_fixed(parse_iso8601("2021-07-14T18:00"), 2.0, {25, 100, 30}, {}, 32);
  const double pi = std::acos(-1.0);
  EXPECT_NEAR(f.x(31, 0), std::sin(2 * pi * 18 / 24), 1e-12);
  EXPECT_NEAR(f.x(31, 1), std::cos(2 * pi * 18 / 24), 1e-12);
  EXPECT_NEAR(f.x(31, 14), 2.0, 0.0);
  // Outage active for the 8 steps before restoration.
  EXPECT_EQ(f.x(23, 9), 1.0);
  EXPECT_EQ(f.x(22, 9), 0.0);
}

TEST(Forward, ShapeAndFinite) {
  Rng rng(1);
  Model m = trained_like(1);
  std::vector<EventFeatures> b;
  for (int i = 0; i < 5; ++i) b.push_back(random_features(rng, 8, i % 3));
  auto out = m.predict(b);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& o : out)
    for (double v : o) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, BatchPermutationEquivariant) {
  Rng rng(2);
  Model m = trained_like(2);
  std::vector<EventFeatures> b;
  for (int i = 0; i < 6; ++i) b.push_back(random_features(rng, 8, i));
  auto out = m.predict(b);
  std::vector<EventFeatures> r(b.rbegin(), b.rend());
  auto rout = m.predict(r);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < kHeads; ++j) EXPECT_NEAR(out[i][j], rout[5 - i][j], 1e-12);
}

TEST(Forward, ZeroWeightsGiveZero) {
  Rng rng(3);
  Model m(small());
  std::vector<EventFeatures> b{random_features(rng, 8), random_features(rng, 8, 4)};
  for (const auto& o : m.predict(b))
    for (double v : o) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapeMismatchNamesDimension) {
  Model m = trained_like(1);
  EventFeatures f;
  f.x = Mat::Zero(8, 5);
  f.pad.assign(8, 0);
  try {
    m.predict({f});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("feature dimension d"), std::string::npos);
  }
  Rng rng(1);
  try {
    m.predict({random_features(rng, 9)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("sequence length T"), std::string::npos);
  }
}

TEST(Forward, EvalDeterministic) {
  Rng rng(4);
  Model m = trained_like(4);
  std::vector<EventFeatures> b{random_features(rng, 8, 2), random_features(rng, 8)};
  auto a = m.predict(b), c = m.predict(b);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < kHeads; ++j) EXPECT_EQ(a[i][j], c[i][j]);
}

TEST(Forward, PrependingPadStepsChangesNothing) {
  Rng rng(5);
  Model m = trained_like(5);
  for (int trial = 0; trial < 5; ++trial) {
    EventFeatures f = random_features(rng, 5, trial % 2);
    for (int extra = 1; extra <= 3; ++extra) {
      EventFeatures g;
      g.x = Mat::Zero(5 + extra, kFeatureDim);
      g.x.bottomRows(5) = f.x;
      g.pad.assign(extra, 1);
      g.pad.insert(g.pad.end(), f.pad.begin(), f.pad.end());
      for (int k = 0; k < extra; ++k) g.x(k, kFeatureDim - 1) = 1.0;
      auto a = m.predict({f})[0];
      auto b = m.predict({g})[0];
      for (int j = 0; j < kHeads; ++j) EXPECT_NEAR(a[j], b[j], 1e-10);
    }
  }
}

TEST(Loss, Examples) {
  std::vector<Targets> t{{0.1, 0.2, 0.3, 0.4}, {1, 2, 3, 4}};
  EXPECT_EQ(loss(t, t), 0.0);
  EXPECT_DOUBLE_EQ(loss({{1, 0, 0, 0}}, {{0, 0, 0, 0}}), 1.0);
  Rng rng(6);
  std::vector<Targets> p = t, p2 = t;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (int j = 0; j < kHeads; ++j) {
      double r = standard_normal(rng);
      p[i][j] = t[i][j] + r;
      p2[i][j] = t[i][j] + 2 * r;
    }
  EXPECT_NEAR(loss(p2, t), 4 * loss(p, t), 1e-12);
}

TEST(Loss, GradientMatchesLossValue) {
  Rng rng(7);
  Model m = trained_like(7);
  std::vector<EventFeatures> b{random_features(rng, 8), random_features(rng, 8, 3)};
  std::vector<Targets> t{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7, 0.8}};
  std::vector<const EventFeatures*> ptr{&b[0], &b[1]};
  EXPECT_NEAR(m.loss_and_grad(ptr, t, nullptr), loss(m.predict(b), t), 1e-12);
}

TEST(GradCheck, FullModel) {
  auto r = grad_check(small(), 20);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
  EXPECT_EQ(r.per_tensor.size(), Model(small()).tensors().size());
}

TEST(GradCheck, LinearAblation) {
  auto r = grad_check(small(0), 20);
  EXPECT_LT(r.max_rel_error, 1e-8) << r.worst_tensor;
}

TEST(GradCheck, LargeStepIsWorse) {
  double fine = grad_check(small(), 20, 1e-5).max_rel_error;
  double coarse = grad_check(small(), 20, 1e-2).max_rel_error;
  EXPECT_GT(coarse, fine);
}

TEST(Metrics, R2MatchesStreamingOracle) {
  Rng rng(8);
  std::vector<Targets> p(500), t(500);
  for (int i = 0; i < 500; ++i)
    for (int j = 0; j < kHeads; ++j) {
      t[i][j] = standard_normal(rng) * (j + 1);
      p[i][j] = t[i][j] + 0.3 * standard_normal(rng);
    }
  auto m = evaluate(p, t);
  for (int j = 0; j < kHeads; ++j) {
    // Welford for the target variance, running SSE.
    double mean = 0, m2 = 0, sse = 0;
    for (int i = 0; i < 500; ++i) {
      double d = t[i][j] - mean;
      mean += d / (i + 1);
      m2 += d * (t[i][j] - mean);
      sse += (p[i][j] - t[i][j]) * (p[i][j] - t[i][j]);
    }
    EXPECT_NEAR(m[j].r2, 1 - sse / m2, 1e-10);
    EXPECT_NEAR(m[j].rmse, std::sqrt(sse / 500), 1e-12);
    EXPECT_FALSE(m[j].degenerate);
  }
}

namespace {

std::vector<Sample> toy_data(int n, std::uint64_t seed, bool constant) {
  Rng rng(seed);
  std::vector<Sample> d(n);
  for (auto& s : d) {
    s.features = random_features(rng, 8, static_cast<int>(uniform_index(rng, 4)));
    const auto& f = s.features;
    for (int j = 0; j < kHeads; ++j) {
      double m = 0;
      int n = 0;
      for (int k = 0; k < f.steps(); ++k)
        if (!f.pad[k]) m += f.x(k, j), ++n;
      s.target[j] = constant ? 0.25 : m / n;
    }
  }
  return d;
}

TrainConfig quick() {
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch = 32;
  return tc;
}

}  // namespace

TEST(Train, ConstantTargetsAreDegenerate) {
  Model m(small());
  auto rep = train(m, toy_data(240, 9, true), quick());
  for (const auto& h : rep.test) {
    EXPECT_TRUE(h.degenerate);
    EXPECT_EQ(h.r2, 0.0);
    EXPECT_LT(h.rmse, 0.05);
  }
}

TEST(Train, LearnsSimpleSignal) {
  Model m(small());
  TrainConfig tc = quick();
  tc.epochs = 30;
  tc.lr = 3e-3;
  auto rep = train(m, toy_data(600, 10, false), tc);
  EXPECT_FALSE(rep.diverged);
  for (const auto& h : rep.test) EXPECT_GT(h.r2, 0.5);
  EXPECT_LE(rep.best_val_loss, rep.val_loss.front());
}

TEST(Train, DeterministicAcrossThreads) {
  auto data = toy_data(240, 11, false);
  Model a(small()), b(small());
  auto ra = train(a, data, quick(), 1);
  auto rb = train(b, data, quick(), 3);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_EQ(ra.test_index, rb.test_index);
}

TEST(Train, TooFewEventsThrows) {
  Model m(small());
  EXPECT_THROW(train(m, toy_data(199, 12, false), quick()), Error);
}

TEST(Train, NanLossAbortsWithLastGoodParams) {
  auto data = toy_data(240, 13, false);
  for (std::size_t i = 0; i < data.size(); i += 5) data[i].target[0] = std::nan("");
  Model m(small());
  auto rep = train(m, data, quick());
  EXPECT_TRUE(rep.diverged);
  for (double p : m.params()) ASSERT_TRUE(std::isfinite(p));
}

TEST(Serialize, RoundTrip) {
  Model m(small());
  auto rep = train(m, toy_data(240, 14, false), quick());
  auto path = std::filesystem::temp_directory_path() / "surge_est_roundtrip.bin";
  save(path, m);
  Model l = load(path);
  EXPECT_EQ(serialize(l), serialize(m));
  Rng rng(15);
  std::vector<EventFeatures> b{random_features(rng, 8, 1)};
  EXPECT_EQ(m.predict(b)[0], l.predict(b)[0]);
  std::filesystem::remove(path);
}

TEST(Serialize, RejectsWrongMagic) {
  auto path = std::filesystem::temp_directory_path() / "surge_est_bad.bin";
  {
    std::ofstream o(path, std::ios::binary);
    o << "SGCF1garbage";
  }
  EXPECT_THROW(load(path), Error);
  std::filesystem::remove(path);
}

TEST(Sweep, MatchesDirectPrediction) {
  ModelConfig c;
  c.D = 16;
  c.H = 16;
  c.L = 1;
  Model m(c);
  auto& p = m.params();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.05 * std::sin(static_cast<double>(i));
  SweepSpec s;
  s.vary = "duration_h";
  s.values = {1, 2, 3};
  s.series = "r_ev";
  s.series_values = {0.1, 0.3};
  s.fixed = {{"hour", 20}, {"temp_c", -5}};
  auto rows = sweep(m, s);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[4].series_value, 0.3);
  EXPECT_EQ(rows[4].value, 2);
  auto f = featurize_fixed(parse_iso8601("2023-01-15T20:00"), 2.0, WeatherSample{-5, 0, 10},
                           PenetrationRates{0.3, 0.3, 0.1}, c.T);
  auto direct = m.predict({f})[0];
  for (int h = 0; h < kHeads; ++h) EXPECT_NEAR(rows[4].pred[h], direct[h], 1e-12);
  EXPECT_NE(rows[0].pred, rows[2].pred);
}

TEST(Sweep, RejectsUnknownInputs) {
  Model m(ModelConfig{});
  SweepSpec s;
  s.values = {1};
  s.vary = "wind";
  EXPECT_THROW(sweep(m, s), Error);
  s.vary = "hour";
  s.fixed = {{"humidity", 1}};
  EXPECT_THROW(sweep(m, s), Error);
  s.fixed = {};
  s.values = {};
  EXPECT_THROW(sweep(m, s), Error);
}
