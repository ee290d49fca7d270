#include "surge/causal.hpp"

#include "surge/binio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace surge::causal {

namespace {

constexpr std::uint64_t kStreamFolds = 21;
constexpr std::uint64_t kStreamGroup = 22;
constexpr std::uint64_t kStreamTree = 23;
constexpr std::uint64_t kStreamNuisance = 24;
constexpr std::uint64_t kStreamHalves = 25;
constexpr double kMinVarX = 1e-12;

int resolve_mtry(const ForestConfig& c, std::size_t dim) {
  int m = c.mtry > 0 ? c.mtry : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(dim))));
  return std::clamp(m, 1, static_cast<int>(dim));
}

// Draws k distinct indices of [0, n) and returns them sorted.
// Gains within 1e-12 relative count as ties, so the scan order (lowest
// feature, then lowest threshold) decides them instead of rounding. Distinct
// confounders such as hour and its sin/cos can induce identical partitions.
bool beats(double gain, double best) { return gain > best + 1e-12 * best; }

std::vector<std::size_t> choose(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------
// Regression forest for the nuisance fits E[X|Z] and E[Y|Z].
// ---------------------------------------------------------------------------

struct RegNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
};

struct RegTree {
  std::vector<RegNode> nodes;
  double predict(const std::vector<double>& z) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = z[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

struct RegBuilder {
  const std::vector<const std::vector<double>*>& z;
  const std::vector<double>& y;
  int min_leaf;
  int max_depth;
  RegTree tree;

  int build(std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (auto i : idx) sum += y[i];
    const double n = static_cast<double>(idx.size());
    const double mean = sum / n;
    tree.nodes.back().value = mean;
    if (depth >= max_depth || idx.size() < 2 * static_cast<std::size_t>(min_leaf)) return id;

    double sst = 0.0;
    for (auto i : idx) sst += (y[i] - mean) * (y[i] - mean);
    const std::size_t dim = z[0]->size();
    double best = 1e-12 * sst;
    int best_f = -1;
    double best_t = 0.0;
    std::vector<std::size_t> order = idx;
    for (std::size_t f = 0; f < dim; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = (*z[a])[f], vb = (*z[b])[f];
        return va < vb || (va == vb && a < b);
      });
      double left = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        left += y[order[k]];
        const double nl = static_cast<double>(k + 1), nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double v0 = (*z[order[k]])[f], v1 = (*z[order[k + 1]])[f];
        if (v0 == v1) continue;
        const double d = left / nl - (sum - left) / nr;
        const double gain = nl * nr / n * d * d;
        if (beats(gain, best)) {
          best = gain;
          best_f = static_cast<int>(f);
          best_t = 0.5 * (v0 + v1);
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<std::size_t> l, r;
    for (auto i : idx) ((*z[i])[static_cast<std::size_t>(best_f)] <= best_t ? l : r).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    tree.nodes[static_cast<std::size_t>(id)].feature = best_f;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best_t;
    int li = build(l, depth + 1);
    int ri = build(r, depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].left = li;
    tree.nodes[static_cast<std::size_t>(id)].right = ri;
    return id;
  }
};

// Fits on `train` rows and predicts `query` rows for two targets at once.
void nuisance_fit(const std::vector<CausalSample>& s, const std::vector<std::size_t>& train,
                  const std::vector<std::size_t>& query, int n_trees, int min_leaf,
                  std::uint64_t seed,
                  std::vector<double>& x_hat, std::vector<double>& y_hat) {
  std::vector<const std::vector<double>*> z(s.size());
  std::vector<double> xs(s.size()), ys(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    z[i] = &s[i].z;
    xs[i] = s[i].x;
    ys[i] = s[i].y;
  }
  for (auto q : query) x_hat[q] = y_hat[q] = 0.0;
  const std::size_t m = std::max<std::size_t>(1, train.size() / 2);
  for (int t = 0; t < n_trees; ++t) {
    Rng rng = make_rng(seed, kStreamNuisance, static_cast<std::uint64_t>(t));
    auto pick = choose(rng, train.size(), m);
    for (int target = 0; target < 2; ++target) {
      std::vector<std::size_t> idx;
      idx.reserve(m);
      for (auto p : pick) idx.push_back(train[p]);
      RegBuilder b{z, target == 0 ? xs : ys, min_leaf, 30, {}};
      b.build(idx, 0);
      auto& out = target == 0 ? x_hat : y_hat;
      for (auto q : query) out[q] += b.tree.predict(s[q].z);
    }
  }
  for (auto q : query) {
    x_hat[q] /= n_trees;
    y_hat[q] /= n_trees;
  }
}

// ---------------------------------------------------------------------------
// Honest causal tree
// ---------------------------------------------------------------------------

struct CausalBuilder {
  const std::vector<CausalSample>& s;  // centered samples
  const ForestConfig& cfg;
  int mtry;
  Rng& rng;
  Tree tree;

  int build(std::vector<std::size_t>& idx, int depth, int parent) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.back().parent = parent;
    const auto min_leaf = static_cast<std::size_t>(cfg.min_leaf);
    if (depth >= cfg.max_depth || idx.size() < 2 * min_leaf) return id;

    const std::size_t dim = s[0].z.size();
    auto feats = choose(rng, dim, static_cast<std::size_t>(mtry));
    Moments tot;
    for (auto i : idx) tot.add(s[i].x, s[i].y);
    const double n = tot.n;

    double best = 0.0;
    int best_f = -1;
    double best_t = 0.0;
    std::vector<std::size_t> order = idx;
    for (std::size_t f : feats) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = s[a].z[f], vb = s[b].z[f];
        return va < vb || (va == vb && a < b);
      });
      Moments left;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        left.add(s[order[k]].x, s[order[k]].y);
        const double v0 = s[order[k]].z[f], v1 = s[order[k + 1]].z[f];
        if (k + 1 < min_leaf || order.size() - k - 1 < min_leaf || v0 == v1) continue;
        Moments right{tot.n - left.n, tot.sx - left.sx, tot.sy - left.sy,
                      tot.sxx - left.sxx, tot.sxy - left.sxy};
        if (left.var_x() <= kMinVarX * left.n || right.var_x() <= kMinVarX * right.n) continue;
        const double d = left.slope() - right.slope();
        const double gain = left.n * right.n / (n * n) * d * d;
        if (beats(gain, best)) {
          best = gain;
          best_f = static_cast<int>(f);
          best_t = 0.5 * (v0 + v1);
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<std::size_t> l, r;
    for (auto i : idx) (s[i].z[static_cast<std::size_t>(best_f)] <= best_t ? l : r).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    tree.nodes[static_cast<std::size_t>(id)].feature = best_f;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best_t;
    int li = build(l, depth + 1, id);
    int ri = build(r, depth + 1, id);
    tree.nodes[static_cast<std::size_t>(id)].left = li;
    tree.nodes[static_cast<std::size_t>(id)].right = ri;
    return id;
  }

  // Routes the estimation half; every node on the path accumulates moments.
  void estimate(const std::vector<std::size_t>& est) {
    for (auto i : est) {
      int k = 0;
      for (;;) {
        Node& nd = tree.nodes[static_cast<std::size_t>(k)];
        nd.est.add(s[i].x, s[i].y);
        if (nd.feature < 0) break;
        k = s[i].z[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
      }
    }
  }
};

// Per-tree leaf moments normalized by leaf size.
struct LeafMean {
  double x, y, xx, xy;
};

LeafMean leaf_mean(const Tree& t, const std::vector<double>& z) {
  const Moments& m = t.nodes[static_cast<std::size_t>(t.locate(z))].est;
  return {m.sx / m.n, m.sy / m.n, m.sxx / m.n, m.sxy / m.n};
}

struct Pooled {
  double x = 0, y = 0, xx = 0, xy = 0;
  int k = 0;
  void add(const LeafMean& m) {
    x += m.x;
    y += m.y;
    xx += m.xx;
    xy += m.xy;
    ++k;
  }
  LeafMean mean() const { return {x / k, y / k, xx / k, xy / k}; }
};

double tau_of(const LeafMean& m) { return (m.xy - m.x * m.y) / (m.xx - m.x * m.x); }

// First-order change of tau when the pooled moments move by d.
double tau_linear(const LeafMean& at, const LeafMean& d) {
  const double den = at.xx - at.x * at.x;
  const double tau = (at.xy - at.x * at.y) / den;
  const double dnum = d.xy - at.y * d.x - at.x * d.y;
  const double dden = d.xx - 2.0 * at.x * d.x;
  return (dnum - tau * dden) / den;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> confounder_names(empirics::Asset asset) {
  std::vector<std::string> v{"temp_c", "duration_h", "n_customers", "hour_sin", "hour_cos",
                             "hour"};
  if (asset == empirics::Asset::Der) v.push_back("ghi");
  return v;
}

std::vector<CausalSample> samples_from_records(const std::vector<SurgeRecord>& recs,
                                               empirics::Asset asset) {
  auto obs = empirics::observations(recs, asset);
  std::vector<CausalSample> out;
  out.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    const double h = r.hour();
    CausalSample c;
    c.x = obs[i].r;
    c.y = obs[i].s;
    c.z = {r.temp_c, r.duration_h, static_cast<double>(r.n_customers),
           std::sin(2 * M_PI * h / 24), std::cos(2 * M_PI * h / 24), h};
    if (asset == empirics::Asset::Der) c.z.push_back(r.ghi);
    out.push_back(std::move(c));
  }
  return out;
}

void ForestConfig::validate() const {
  require(n_trees >= 1, "n_trees must be >= 1");
  require(subsample_fraction > 0.0 && subsample_fraction < 1.0,
          "subsample_fraction must lie in (0, 1)");
  require(honesty_fraction > 0.0 && honesty_fraction < 1.0,
          "honesty_fraction must lie in (0, 1)");
  require(min_leaf >= 1, "min_leaf must be >= 1");
  require(n_folds >= 2, "n_folds must be >= 2");
  require(max_depth >= 1, "max_depth must be >= 1");
  require(mtry >= 0, "mtry must be >= 0");
  require(ci_group_size >= 1, "ci_group_size must be >= 1");
  require(nuisance_trees >= 1, "nuisance_trees must be >= 1");
  require(nuisance_min_leaf >= 1, "nuisance_min_leaf must be >= 1");
}

bool Moments::usable() const { return n >= 2 && var_x() > kMinVarX * n; }

int Tree::locate(const std::vector<double>& z) const {
  int k = 0;
  while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(k)];
    k = z[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  while (!nodes[static_cast<std::size_t>(k)].est.usable() &&
         nodes[static_cast<std::size_t>(k)].parent >= 0)
    k = nodes[static_cast<std::size_t>(k)].parent;
  return k;
}

bool ForestModel::extrapolates(const std::vector<double>& z) const {
  for (std::size_t j = 0; j < dim; ++j)
    if (z[j] < z_min[j] || z[j] > z_max[j]) return true;
  return false;
}

TreeHalves tree_halves(const ForestConfig& cfg, const std::vector<int>& fold, std::size_t t) {
  TreeHalves h;
  const int K = cfg.n_folds;
  h.group = static_cast<int>(t) / cfg.ci_group_size;
  h.fold = h.group % K;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != h.fold) pool.push_back(i);
  // Little bags: consecutive trees share a half-sample of their fold's pool.
  std::vector<std::size_t> half;
  if (cfg.ci_group_size > 1) {
    Rng grng = make_rng(cfg.seed, kStreamGroup, static_cast<std::uint64_t>(h.group));
    for (auto p : choose(grng, pool.size(), pool.size() / 2)) half.push_back(pool[p]);
  } else {
    half = pool;
  }
  Rng rng = make_rng(cfg.seed, kStreamHalves, t);
  auto sub_n = static_cast<std::size_t>(std::llround(cfg.subsample_fraction * half.size()));
  sub_n = std::clamp<std::size_t>(sub_n, 2, half.size());
  std::vector<std::size_t> sample;
  for (auto p : choose(rng, half.size(), sub_n)) sample.push_back(half[p]);
  for (std::size_t i = sample.size(); i > 1; --i)
    std::swap(sample[i - 1], sample[uniform_index(rng, i)]);
  auto n_struct = static_cast<std::size_t>(std::llround(cfg.honesty_fraction * sample.size()));
  h.structure.assign(sample.begin(), sample.begin() + static_cast<long>(n_struct));
  h.estimation.assign(sample.begin() + static_cast<long>(n_struct), sample.end());
  std::sort(h.structure.begin(), h.structure.end());
  std::sort(h.estimation.begin(), h.estimation.end());
  return h;
}

ForestModel fit(const std::vector<CausalSample>& samples, const ForestConfig& cfg,
                unsigned threads) {
  cfg.validate();
  const std::size_t n = samples.size();
  require(n >= 50, "causal forest needs n >= 50 samples");
  require(n >= 2 * static_cast<std::size_t>(cfg.min_leaf), "fewer samples than 2 x min_leaf");
  const std::size_t dim = samples[0].z.size();
  require(dim >= 1, "causal forest needs at least one confounder");
  double xmin = samples[0].x, xmax = samples[0].x;
  for (const auto& s : samples) {
    require(s.z.size() == dim, "confounder dimension differs between samples");
    require(std::isfinite(s.x) && std::isfinite(s.y), "non-finite treatment or outcome");
    for (double v : s.z) require(std::isfinite(v), "non-finite confounder");
    xmin = std::min(xmin, s.x);
    xmax = std::max(xmax, s.x);
  }
  if (!(xmax > xmin)) throw Error("no treatment variation");

  ForestModel m;
  m.config = cfg;
  m.dim = dim;
  m.z_min.assign(dim, std::numeric_limits<double>::infinity());
  m.z_max.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto& s : samples)
    for (std::size_t j = 0; j < dim; ++j) {
      m.z_min[j] = std::min(m.z_min[j], s.z[j]);
      m.z_max[j] = std::max(m.z_max[j], s.z[j]);
    }

  // Fold labels from a seeded permutation.
  const int K = cfg.n_folds;
  m.fold.assign(n, 0);
  {
    Rng rng = make_rng(cfg.seed, kStreamFolds);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t p = 0; p < n; ++p) m.fold[order[p]] = static_cast<int>(p % K);
  }
  std::vector<std::vector<std::size_t>> in_fold(static_cast<std::size_t>(K)),
      out_fold(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k)
      (m.fold[i] == k ? in_fold : out_fold)[static_cast<std::size_t>(k)].push_back(i);
  for (int k = 0; k < K; ++k)
    require(!in_fold[static_cast<std::size_t>(k)].empty(), "empty cross-fitting fold");

  // Local centering with out-of-fold nuisance fits.
  m.x_hat.assign(n, 0.0);
  m.y_hat.assign(n, 0.0);
  if (cfg.local_centering) {
    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t k) {
      nuisance_fit(samples, out_fold[k], in_fold[k], cfg.nuisance_trees, cfg.nuisance_min_leaf,
                   substream_seed(cfg.seed, kStreamNuisance, k), m.x_hat, m.y_hat);
    });
  }
  m.train = samples;
  for (std::size_t i = 0; i < n; ++i) {
    m.train[i].x = samples[i].x - m.x_hat[i];
    m.train[i].y = samples[i].y - m.y_hat[i];
  }

  const int mtry = resolve_mtry(cfg, dim);
  m.trees.resize(static_cast<std::size_t>(cfg.n_trees));
  parallel_for(m.trees.size(), threads, [&](std::size_t t) {
    TreeHalves h = tree_halves(cfg, m.fold, t);
    Rng rng = make_rng(cfg.seed, kStreamTree, t);
    CausalBuilder b{m.train, cfg, mtry, rng, {}};
    b.build(h.structure, 0, -1);
    b.estimate(h.estimation);
    b.tree.fold = h.fold;
    b.tree.group = h.group;
    m.trees[t] = std::move(b.tree);
  });
  return m;
}

namespace {
LocalEffect effect_from(const ForestModel& m, const std::vector<double>& z, int fold) {
  require(z.size() == m.dim, "confounder dimension does not match the model");
  Pooled p;
  for (const auto& t : m.trees)
    if ((fold < 0 || t.fold == fold) && t.nodes[0].est.usable()) p.add(leaf_mean(t, z));
  LocalEffect e;
  e.extrapolated = m.extrapolates(z);
  e.trees_used = p.k;
  if (p.k == 0) throw Error("no usable trees for local effect");
  LeafMean mm = p.mean();
  double den = mm.xx - mm.x * mm.x;
  e.tau = den > kMinVarX ? tau_of(mm) : 0.0;
  return e;
}
}  // namespace

LocalEffect local_effect(const ForestModel& model, const std::vector<double>& z) {
  return effect_from(model, z, -1);
}

LocalEffect local_effect_crossfit(const ForestModel& model, std::size_t i) {
  require(i < model.train.size(), "training index out of range");
  return effect_from(model, model.train[i].z, model.fold[i]);
}

namespace {

// Little-bag variance of mean_i tau(z_i) over the points in `pts`, using the
// trees in `tree_ids` (grouped by their `group` label).
double blb_variance(const ForestModel& m, const std::vector<const std::vector<double>*>& pts,
                    const std::vector<std::size_t>& tree_ids, unsigned threads) {
  // Per-tree linearized contribution averaged over points.
  std::vector<double> theta(tree_ids.size(), 0.0);
  std::vector<std::vector<LeafMean>> leaf(pts.size());
  parallel_for(pts.size(), threads, [&](std::size_t i) {
    leaf[i].resize(tree_ids.size());
    for (std::size_t b = 0; b < tree_ids.size(); ++b)
      leaf[i][b] = leaf_mean(m.trees[tree_ids[b]], *pts[i]);
  });
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Pooled p;
    for (const auto& lm : leaf[i]) p.add(lm);
    const LeafMean at = p.mean();
    if (!(at.xx - at.x * at.x > kMinVarX)) continue;
    for (std::size_t b = 0; b < tree_ids.size(); ++b) {
      const LeafMean& lm = leaf[i][b];
      LeafMean d{lm.x - at.x, lm.y - at.y, lm.xx - at.xx, lm.xy - at.xy};
      theta[b] += tau_linear(at, d);
    }
  }
  for (auto& t : theta) t /= static_cast<double>(pts.size());

  // Between-group minus within-group/ell.
  std::vector<std::pair<int, double>> by_group;
  for (std::size_t b = 0; b < tree_ids.size(); ++b)
    by_group.push_back({m.trees[tree_ids[b]].group, theta[b]});
  std::sort(by_group.begin(), by_group.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> means;
  double within = 0.0;
  int within_n = 0;
  double ell = 0.0;
  for (std::size_t i = 0; i < by_group.size();) {
    std::size_t j = i;
    double s = 0.0;
    while (j < by_group.size() && by_group[j].first == by_group[i].first) s += by_group[j++].second;
    const double g = static_cast<double>(j - i);
    const double mu = s / g;
    if (g >= 2) {
      double ss = 0.0;
      for (std::size_t k = i; k < j; ++k) ss += (by_group[k].second - mu) * (by_group[k].second - mu);
      within += ss / (g - 1);
      ++within_n;
      ell += g;
      means.push_back(mu);
    }
    i = j;
  }
  if (means.size() < 2) return 0.0;
  ell /= static_cast<double>(means.size());
  double grand = std::accumulate(means.begin(), means.end(), 0.0) / means.size();
  double between = 0.0;
  for (double v : means) between += (v - grand) * (v - grand);
  between /= static_cast<double>(means.size());
  within /= within_n;
  return std::max(0.0, between - within / ell);
}

AteResult finish(std::vector<double> local, double var_score, double var_forest, double scale) {
  AteResult r;
  r.scale = scale;
  r.local_effects = std::move(local);
  double s = 0.0;
  for (double v : r.local_effects) s += v;
  r.ate_mean = s / static_cast<double>(r.local_effects.size());
  r.se_score = std::abs(scale) * std::sqrt(var_score);
  r.se_forest = std::abs(scale) * std::sqrt(var_forest);
  r.se = std::abs(scale) * std::sqrt(var_score + var_forest);
  r.ci_lo = r.ate_mean - 1.959963984540054 * r.se;
  r.ci_hi = r.ate_mean + 1.959963984540054 * r.se;
  return r;
}

}  // namespace

AteResult ate(const ForestModel& model, double scale, unsigned threads) {
  const std::size_t n = model.train.size();
  require(n > 0, "model has no training samples");
  std::vector<double> tau(n), local(n);
  parallel_for(n, threads, [&](std::size_t i) { tau[i] = local_effect_crossfit(model, i).tau; });
  for (std::size_t i = 0; i < n; ++i) local[i] = scale * tau[i];
  // Fold-wise little-bag variances combine with weights (n_k / n)^2.
  double var = 0.0;
  for (int k = 0; k < model.config.n_folds; ++k) {
    std::vector<const std::vector<double>*> pts;
    for (std::size_t i = 0; i < n; ++i)
      if (model.fold[i] == k) pts.push_back(&model.train[i].z);
    std::vector<std::size_t> ids;
    for (std::size_t t = 0; t < model.trees.size(); ++t)
      if (model.trees[t].fold == k && model.trees[t].nodes[0].est.usable()) ids.push_back(t);
    if (pts.empty() || ids.empty()) continue;
    const double w = static_cast<double>(pts.size()) / static_cast<double>(n);
    var += w * w * blb_variance(model, pts, ids, threads);
  }
  // Sampling variance from the doubly robust score on the centered data.
  double vx = 0.0;
  for (const auto& t : model.train) vx += t.x * t.x;
  vx /= static_cast<double>(n);
  std::vector<double> psi(n);
  double pm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = model.train[i];
    psi[i] = tau[i] + t.x * (t.y - tau[i] * t.x) / vx;
    pm += psi[i];
  }
  pm /= static_cast<double>(n);
  double vs = 0.0;
  for (double p : psi) vs += (p - pm) * (p - pm);
  vs /= static_cast<double>(n) * static_cast<double>(n > 1 ? n - 1 : 1);
  return finish(std::move(local), vs, var, scale);
}

AteResult ate(const ForestModel& model, const std::vector<std::vector<double>>& zs, double scale,
              unsigned threads) {
  require(!zs.empty(), "ATE needs at least one query point");
  std::vector<double> local(zs.size());
  parallel_for(zs.size(), threads,
               [&](std::size_t i) { local[i] = scale * local_effect(model, zs[i]).tau; });
  std::vector<const std::vector<double>*> pts;
  for (const auto& z : zs) pts.push_back(&z);
  std::vector<std::size_t> ids;
  for (std::size_t t = 0; t < model.trees.size(); ++t)
    if (model.trees[t].nodes[0].est.usable()) ids.push_back(t);
  return finish(std::move(local), 0.0, blb_variance(model, pts, ids, threads), scale);
}

// ---------------------------------------------------------------------------
// Binary container: "SGCF1", then little-endian fields.
// ---------------------------------------------------------------------------

namespace {

using binio::In;
using binio::Out;

constexpr char kMagic[] = "SGCF1";

}  // namespace

std::string serialize(const ForestModel& m) {
  Out o;
  o.raw(std::string(kMagic, 5));
  const auto& c = m.config;
  o.i64(c.n_trees);
  o.f64(c.subsample_fraction);
  o.i64(c.min_leaf);
  o.f64(c.honesty_fraction);
  o.i64(c.n_folds);
  o.i64(c.max_depth);
  o.i64(c.mtry);
  o.i64(c.ci_group_size);
  o.i64(c.local_centering ? 1 : 0);
  o.i64(c.nuisance_trees);
  o.i64(c.nuisance_min_leaf);
  o.u64(c.seed);
  o.u64(m.dim);
  for (double v : m.z_min) o.f64(v);
  for (double v : m.z_max) o.f64(v);
  o.u64(m.train.size());
  for (std::size_t i = 0; i < m.train.size(); ++i) {
    o.f64(m.train[i].x);
    o.f64(m.train[i].y);
    o.f64(m.x_hat[i]);
    o.f64(m.y_hat[i]);
    o.i64(m.fold[i]);
    for (double v : m.train[i].z) o.f64(v);
  }
  o.u64(m.trees.size());
  for (const auto& t : m.trees) {
    o.i64(t.fold);
    o.i64(t.group);
    o.u64(t.nodes.size());
    for (const auto& nd : t.nodes) {
      o.i64(nd.feature);
      o.f64(nd.threshold);
      o.i64(nd.left);
      o.i64(nd.right);
      o.i64(nd.parent);
      o.f64(nd.est.n);
      o.f64(nd.est.sx);
      o.f64(nd.est.sy);
      o.f64(nd.est.sxx);
      o.f64(nd.est.sxy);
    }
  }
  return o.take();
}

void save(const std::filesystem::path& path, const ForestModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  binio::write_file(path, serialize(model));
}

ForestModel load(const std::filesystem::path& path) {
  In in(binio::read_file(path), "forest model file");
  if (in.raw(5) != std::string(kMagic, 5)) throw Error("not an SGCF1 forest model");
  ForestModel m;
  auto& c = m.config;
  c.n_trees = static_cast<int>(in.i64());
  c.subsample_fraction = in.f64();
  c.min_leaf = static_cast<int>(in.i64());
  c.honesty_fraction = in.f64();
  c.n_folds = static_cast<int>(in.i64());
  c.max_depth = static_cast<int>(in.i64());
  c.mtry = static_cast<int>(in.i64());
  c.ci_group_size = static_cast<int>(in.i64());
  c.local_centering = in.i64() != 0;
  c.nuisance_trees = static_cast<int>(in.i64());
  c.nuisance_min_leaf = static_cast<int>(in.i64());
  c.seed = in.u64();
  m.dim = in.u64();
  require(m.dim < 1000, "corrupt forest model (dimension)");
  for (std::size_t j = 0; j < m.dim; ++j) m.z_min.push_back(in.f64());
  for (std::size_t j = 0; j < m.dim; ++j) m.z_max.push_back(in.f64());
  const std::size_t n = in.u64();
  for (std::size_t i = 0; i < n; ++i) {
    CausalSample s;
    s.x = in.f64();
    s.y = in.f64();
    m.x_hat.push_back(in.f64());
    m.y_hat.push_back(in.f64());
    m.fold.push_back(static_cast<int>(in.i64()));
    for (std::size_t j = 0; j < m.dim; ++j) s.z.push_back(in.f64());
    m.train.push_back(std::move(s));
  }
  const std::size_t nt = in.u64();
  for (std::size_t t = 0; t < nt; ++t) {
    Tree tr;
    tr.fold = static_cast<int>(in.i64());
    tr.group = static_cast<int>(in.i64());
    const std::size_t nn = in.u64();
    for (std::size_t k = 0; k < nn; ++k) {
      Node nd;
      nd.feature = static_cast<int>(in.i64());
      nd.threshold = in.f64();
      nd.left = static_cast<int>(in.i64());
      nd.right = static_cast<int>(in.i64());
      nd.parent = static_cast<int>(in.i64());
      nd.est = {in.f64(), in.f64(), in.f64(), in.f64(), in.f64()};
      tr.nodes.push_back(nd);
    }
    m.trees.push_back(std::move(tr));
  }
  if (!in.done()) throw Error("trailing bytes in forest model file");
  return m;
}

}  // namespace surge::causal
