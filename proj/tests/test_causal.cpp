#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "planted.hpp"
#include "surge/causal.hpp"

using namespace surge;
using namespace surge::causal;

namespace {

ForestConfig quick(int trees = 100) {
  ForestConfig c;
  c.n_trees = trees;
  c.nuisance_trees = 50;
  return c;
}

auto constant(double v) {
  return [v](const std::vector<double>&) { return v; };
}

bool same_structure(const Tree& a, const Tree& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const auto &p = a.nodes[i], &q = b.nodes[i];
    if (p.feature != q.feature || p.threshold != q.threshold || p.left != q.left ||
        p.right != q.right)
      return false;
  }
  return true;
}

}  // namespace

TEST(CausalFit, RejectsTooFewSamples) {
  auto d = planted::causal_data(49, 1, constant(1.5));
  EXPECT_THROW(fit(d, quick()), Error);
  auto ok = planted::causal_data(50, 1, constant(1.5));
  ForestConfig c = quick(4);
  c.min_leaf = 5;
  EXPECT_NO_THROW(fit(ok, c));
}

TEST(CausalFit, RejectsConstantTreatment) {
  auto d = planted::causal_data(200, 2, constant(1.5));
  for (auto& s : d) s.x = 0.3;
  try {
    fit(d, quick());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no treatment variation"), std::string::npos);
  }
}

TEST(CausalFit, RejectsSamplesBelowTwiceMinLeaf) {
  auto d = planted::causal_data(60, 3, constant(1.5));
  ForestConfig c = quick();
  c.min_leaf = 31;
  EXPECT_THROW(fit(d, c), Error);
}

TEST(CausalFit, ValidatesConfig) {
  ForestConfig c;
  c.n_folds = 1;
  EXPECT_THROW(c.validate(), Error);
  c = ForestConfig{};
  c.honesty_fraction = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = ForestConfig{};
  c.n_trees = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(CausalFit, PlantedConstantEffectRecovered) {
  auto d = planted::causal_data(3000, 4, constant(1.5));
  auto m = fit(d, quick(200));
  auto r = ate(m, 0.1);
  EXPECT_NEAR(r.ate_mean, 0.15, 0.05);
  EXPECT_LE(r.ci_lo, r.ate_mean);
  EXPECT_GE(r.ci_hi, r.ate_mean);
  // Local effects cluster near the planted value.
  double s = 0, ss = 0;
  for (double v : r.local_effects) s += v / 0.1, ss += (v / 0.1) * (v / 0.1);
  const double n = static_cast<double>(r.local_effects.size());
  double mean = s / n, sd = std::sqrt(ss / n - mean * mean);
  EXPECT_NEAR(mean, 1.5, 0.3);
  EXPECT_LT(sd, 0.15 * 1.5);
}

TEST(CausalFit, HeterogeneousSignPatternRecovered) {
  auto tau = [](const std::vector<double>& z) { return z[0] < 0 ? 1.0 : 0.2; };
  auto d = planted::causal_data(1000, 5, tau, 0.1, 0.2);
  auto m = fit(d, quick(300));
  double cold = 0, warm = 0;
  int nc = 0, nw = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double t = local_effect_crossfit(m, i).tau;
    if (d[i].z[0] < 0) cold += t, ++nc;
    if (d[i].z[0] >= 0) warm += t, ++nw;
  }
  ASSERT_GT(nc, 50);
  ASSERT_GT(nw, 50);
  EXPECT_GT(cold / nc, 0.45);
  EXPECT_GT(cold / nc - warm / nw, 0.25) << cold / nc << " vs " << warm / nw;
  EXPECT_NEAR(warm / nw, 0.2, 0.2);
}

TEST(CausalFit, ExtrapolationFlag) {
  auto d = planted::causal_data(400, 6, constant(1.5));
  auto m = fit(d, quick(20));
  auto z = d[0].z;
  EXPECT_FALSE(local_effect(m, z).extrapolated);
  z[0] = 1e3;
  auto e = local_effect(m, z);
  EXPECT_TRUE(e.extrapolated);
  EXPECT_TRUE(std::isfinite(e.tau));
  EXPECT_THROW(local_effect(m, std::vector<double>{1.0}), Error);
}

TEST(CausalFit, DeterministicAndThreadIndependent) {
  auto d = planted::causal_data(500, 7, constant(1.5));
  auto a = serialize(fit(d, quick(40), 1));
  auto b = serialize(fit(d, quick(40), 1));
  auto c = serialize(fit(d, quick(40), 3));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  ForestConfig other = quick(40);
  other.seed = 2;
  EXPECT_NE(a, serialize(fit(d, other)));
}

TEST(CausalFit, SaveLoadRoundTrip) {
  auto d = planted::causal_data(300, 8, constant(1.5));
  auto m = fit(d, quick(20));
  auto path = std::filesystem::temp_directory_path() / "surge_forest_roundtrip.bin";
  save(path, m);
  auto l = load(path);
  EXPECT_EQ(serialize(l), serialize(m));
  EXPECT_EQ(local_effect(l, d[3].z).tau, local_effect(m, d[3].z).tau);
  std::filesystem::remove(path);
  EXPECT_THROW(load(path), Error);
}

TEST(CausalFit, CrossFitHygiene) {
  auto d = planted::causal_data(600, 9, constant(1.5));
  auto m = fit(d, quick(50));
  // Tag every sample each tree touched; none may sit in the tree's fold.
  for (std::size_t t = 0; t < m.trees.size(); ++t) {
    auto h = tree_halves(m.config, m.fold, t);
    EXPECT_EQ(h.fold, m.trees[t].fold);
    for (auto i : h.structure) ASSERT_NE(m.fold[i], h.fold);
    for (auto i : h.estimation) ASSERT_NE(m.fold[i], h.fold);
  }
  for (std::size_t i = 0; i < d.size(); i += 37) {
    int own = 0;
    for (const auto& t : m.trees) own += t.fold == m.fold[i];
    EXPECT_EQ(local_effect_crossfit(m, i).trees_used, own);
  }
}

TEST(CausalFit, CrossFitTreesIgnoreHeldOutOutcomes) {
  auto d = planted::causal_data(600, 10, constant(1.5));
  ForestConfig c = quick(30);
  c.local_centering = false;
  auto a = fit(d, c);
  auto e = d;
  for (std::size_t i = 0; i < e.size(); ++i)
    if (a.fold[i] == 0) e[i].y = 100.0 * std::sin(static_cast<double>(i));
  auto b = fit(e, c);
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    if (a.trees[t].fold != 0) continue;
    EXPECT_TRUE(same_structure(a.trees[t], b.trees[t]));
    EXPECT_EQ(a.trees[t].nodes[0].est.sxy, b.trees[t].nodes[0].est.sxy);
  }
}

TEST(CausalFit, HonestSplitsNeverReadEstimationOutcomes) {
  auto d = planted::causal_data(600, 11, constant(1.5));
  ForestConfig c = quick(10);
  c.local_centering = false;
  auto a = fit(d, c);
  const std::size_t t = 3;
  auto h = tree_halves(c, a.fold, t);
  std::set<std::size_t> st(h.structure.begin(), h.structure.end());
  for (auto i : h.estimation) ASSERT_EQ(st.count(i), 0u);

  auto e = d;
  for (auto i : h.estimation) e[i].y = -50.0 + 3.0 * static_cast<double>(i % 7);
  auto b = fit(e, c);
  EXPECT_TRUE(same_structure(a.trees[t], b.trees[t]));
  EXPECT_NE(a.trees[t].nodes[0].est.sy, b.trees[t].nodes[0].est.sy);

  // Changing structure-half outcomes does move the splits.
  auto f = d;
  for (auto i : h.structure) f[i].y = d[i].y + 5.0 * d[i].x * (d[i].z[0] > 10 ? 1 : -1);
  auto g = fit(f, c);
  EXPECT_FALSE(same_structure(a.trees[t], g.trees[t]));
}

TEST(CausalFit, LeafEstimationMomentsPartitionTheHalf) {
  auto d = planted::causal_data(600, 12, constant(1.5));
  auto m = fit(d, quick(10));
  for (std::size_t t = 0; t < m.trees.size(); ++t) {
    auto h = tree_halves(m.config, m.fold, t);
    const auto& nodes = m.trees[t].nodes;
    EXPECT_EQ(nodes[0].est.n, static_cast<double>(h.estimation.size()));
    double leaves = 0;
    for (const auto& nd : nodes)
      if (nd.feature < 0) leaves += nd.est.n;
    EXPECT_EQ(leaves, nodes[0].est.n);
  }
}

TEST(CausalAte, LinearInScale) {
  auto d = planted::causal_data(400, 13, constant(1.5));
  auto m = fit(d, quick(20));
  auto a = ate(m, 0.1), b = ate(m, 0.2);
  EXPECT_EQ(b.ate_mean, 2 * a.ate_mean);
  EXPECT_EQ(b.se, 2 * a.se);
  for (std::size_t i = 0; i < a.local_effects.size(); ++i)
    EXPECT_EQ(b.local_effects[i], 2 * a.local_effects[i]);
}

TEST(CausalAte, ShiftInvariant) {
  auto d = planted::causal_data(400, 14, constant(1.5));
  auto e = d;
  for (auto& s : e) s.y += 7.25;
  ForestConfig c = quick(20);
  for (bool centering : {true, false}) {
    c.local_centering = centering;
    auto a = fit(d, c), b = fit(e, c);
    for (std::size_t i = 0; i < d.size(); i += 11) {
      EXPECT_NEAR(local_effect(a, d[i].z).tau, local_effect(b, d[i].z).tau, 1e-10);
      EXPECT_NEAR(local_effect_crossfit(a, i).tau, local_effect_crossfit(b, i).tau, 1e-10);
    }
  }
}

TEST(CausalAte, FreshPointsUseAllTrees) {
  auto d = planted::causal_data(400, 15, constant(1.5));
  auto m = fit(d, quick(20));
  EXPECT_EQ(local_effect(m, d[0].z).trees_used, 20);
  std::vector<std::vector<double>> zs;
  for (int i = 0; i < 50; ++i) zs.push_back(d[i].z);
  auto r = ate(m, zs, 0.1);
  EXPECT_EQ(r.local_effects.size(), 50u);
  EXPECT_LE(r.ci_lo, r.ate_mean);
  EXPECT_GE(r.ci_hi, r.ate_mean);
  EXPECT_EQ(r.se_score, 0.0);
}

TEST(CausalSamples, ConfoundersFromRecords) {
  SurgeRecord r;
  r.restoration = parse_iso8601("2021-01-05T18:00");
  r.temp_c = -3;
  r.duration_h = 2.5;
  r.n_customers = 800;
  r.ghi = 120;
  r.r = {0.1, 0.2, 0.3};
  r.s = SurgeComponents::from_parts(0.9, 0.3, 0.2, 0.1);
  auto ev = samples_from_records({r}, empirics::Asset::Ev);
  auto der = samples_from_records({r}, empirics::Asset::Der);
  ASSERT_EQ(ev[0].z.size(), confounder_names(empirics::Asset::Ev).size());
  ASSERT_EQ(der[0].z.size(), ev[0].z.size() + 1);
  EXPECT_EQ(ev[0].x, 0.1);
  EXPECT_EQ(ev[0].y, 0.3);
  EXPECT_EQ(der[0].x, 0.3);
  EXPECT_EQ(der[0].y, 0.1);
  EXPECT_NEAR(ev[0].z[3], std::sin(2 * M_PI * 18 / 24), 1e-12);
}
