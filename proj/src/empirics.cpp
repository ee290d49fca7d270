#include "surge/empirics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace surge::empirics {

namespace {
constexpr std::uint64_t kStreamBootstrap = 11;

double fahrenheit_to_c(double f) { return (f - 32.0) * 5.0 / 9.0; }
}  // namespace

Asset parse_asset(const std::string& name) {
  if (name == "ev") return Asset::Ev;
  if (name == "hp") return Asset::Hp;
  if (name == "der") return Asset::Der;
  throw Error("unknown asset '" + name + "' (expected ev, hp or der)");
}

const char* asset_name(Asset a) {
  switch (a) {
    case Asset::Ev: return "ev";
    case Asset::Hp: return "hp";
    case Asset::Der: return "der";
  }
  return "?";
}

std::vector<Obs> observations(const std::vector<SurgeRecord>& recs, Asset asset, bool total) {
  std::vector<Obs> out;
  out.reserve(recs.size());
  for (const auto& rec : recs) {
    Obs o;
    switch (asset) {
      case Asset::Ev: o.r = rec.r.r_ev; o.s = rec.s.s_ev; break;
      case Asset::Hp: o.r = rec.r.r_hp; o.s = rec.s.s_hp; break;
      case Asset::Der: o.r = rec.r.r_der; o.s = rec.s.s_der; break;
    }
    if (total) o.s = rec.s.s_tot;
    o.hour = rec.hour();
    o.duration_h = rec.duration_h;
    o.temp_c = rec.temp_c;
    o.ghi = rec.ghi;
    out.push_back(o);
  }
  return out;
}

PenetrationBands PenetrationBands::defaults(Asset asset) {
  switch (asset) {
    case Asset::Ev: return {asset, {0.05, 0.10, 0.20, 0.35, 0.50}};
    case Asset::Hp: return {asset, {0.05, 0.25, 0.45, 0.65, 0.85}};
    case Asset::Der: return {asset, {0.05, 0.10, 0.15, 0.25, 0.35}};
  }
  return {};
}

void PenetrationBands::validate() const {
  require(edges.size() >= 2, "penetration bands need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    require(edges[i] > edges[i - 1], "penetration band edges must be strictly increasing");
}

int PenetrationBands::band_of(double r) const {
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    bool last = b + 2 == edges.size();
    if (r >= edges[b] && (r < edges[b + 1] || (last && r == edges[b + 1])))
      return static_cast<int>(b);
  }
  return -1;
}

std::string PenetrationBands::label(std::size_t b) const {
  auto pct = [](double v) { return std::to_string(static_cast<int>(std::lround(v * 100))); };
  return "B" + std::to_string(b + 1) + " " + pct(edges[b]) + "-" + pct(edges[b + 1]) + "%";
}

namespace {
std::vector<std::vector<double>> split_by_band(const std::vector<Obs>& obs,
                                               const PenetrationBands& bands,
                                               const SubsetFilter* filter = nullptr) {
  bands.validate();
  std::vector<std::vector<double>> out(bands.count());
  for (const auto& o : obs) {
    if (filter && !filter->accepts(o)) continue;
    int b = bands.band_of(o.r);
    if (b >= 0) out[static_cast<std::size_t>(b)].push_back(o.s);
  }
  return out;
}
}  // namespace

std::vector<BandStat> band_stats(const std::vector<Obs>& obs, const PenetrationBands& bands) {
  auto groups = split_by_band(obs, bands);
  std::vector<BandStat> out;
  for (std::size_t b = 0; b < groups.size(); ++b) {
    BandStat st;
    st.band = b;
    auto& v = groups[b];
    st.count = v.size();
    st.empty = v.empty();
    if (!v.empty()) {
      std::sort(v.begin(), v.end());
      st.median = nearest_rank(v, 50);
      st.p95 = nearest_rank(v, 95);
    }
    out.push_back(st);
  }
  return out;
}

Wilson wilson_interval(std::size_t k, std::size_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double center = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z / (1 + z2 / nn) * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

std::vector<ExceedancePoint> exceedance_curve(const std::vector<Obs>& obs, double threshold,
                                              const std::vector<double>& grid) {
  require(std::isfinite(threshold), "exceedance threshold must be finite");
  require(grid.size() >= 2, "exceedance grid needs at least two edges");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], "exceedance grid must be strictly increasing");
  std::vector<ExceedancePoint> out(grid.size() - 1);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    out[i].r_lo = grid[i];
    out[i].r_hi = grid[i + 1];
  }
  for (const auto& o : obs) {
    auto it = std::upper_bound(grid.begin(), grid.end(), o.r);
    if (it == grid.begin()) continue;
    std::size_t i = static_cast<std::size_t>(it - grid.begin()) - 1;
    if (i + 1 == grid.size()) {
      if (o.r != grid.back()) continue;
      --i;
    }
    out[i].n++;
    if (o.s > threshold) out[i].k++;
  }
  for (auto& pt : out) {
    pt.empty = pt.n == 0;
    pt.p = pt.empty ? 0.0 : static_cast<double>(pt.k) / static_cast<double>(pt.n);
    auto w = wilson_interval(pt.k, pt.n);
    pt.ci_lo = std::min(w.lo, pt.p);
    pt.ci_hi = std::max(w.hi, pt.p);
  }
  return out;
}

double pooled_threshold(const std::vector<Obs>& obs, double q) {
  std::vector<double> v;
  v.reserve(obs.size());
  for (const auto& o : obs) v.push_back(o.s);
  std::sort(v.begin(), v.end());
  return nearest_rank(v, q);
}

SubsetFilter SubsetFilter::all() { return SubsetFilter{}; }

std::vector<std::string> SubsetFilter::preset_names() {
  return {"all",         "ev_night_long", "ev_day_long",           "hp_cold_long",
          "hp_hot_long", "der_daytime",   "der_matched_irradiance"};
}

SubsetFilter SubsetFilter::preset(const std::string& name) {
  SubsetFilter f;
  f.name = name;
  if (name == "all") return f;
  if (name == "ev_night_long") {
    f.keep = [](const Obs& o) {
      return (o.hour <= 6.0 || o.hour >= 18.0) && o.duration_h >= 4.0;
    };
  } else if (name == "ev_day_long") {
    f.keep = [](const Obs& o) { return o.hour >= 8.0 && o.hour <= 16.0 && o.duration_h >= 4.0; };
  } else if (name == "hp_cold_long") {
    const double t = fahrenheit_to_c(50.0);
    f.keep = [t](const Obs& o) { return o.temp_c <= t && o.duration_h >= 4.0; };
  } else if (name == "hp_hot_long") {
    const double t = fahrenheit_to_c(80.0);
    f.keep = [t](const Obs& o) { return o.temp_c >= t && o.duration_h >= 4.0; };
  } else if (name == "der_daytime") {
    f.keep = [](const Obs& o) { return o.ghi >= 200.0; };
  } else if (name == "der_matched_irradiance") {
    f.keep = [](const Obs& o) { return o.ghi >= 200.0 && o.ghi <= 1400.0; };
    f.ghi_bins = {200.0, 400.0, 700.0, 1000.0, 1400.0};
  } else {
    throw Error("unknown subset filter '" + name + "'");
  }
  return f;
}

namespace {
int ghi_bin(const std::vector<double>& edges, double g) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (g >= edges[i] && (g < edges[i + 1] || (i + 2 == edges.size() && g == edges[i + 1])))
      return static_cast<int>(i);
  return -1;
}
}  // namespace

BootstrapResult bootstrap_band_compare(const std::vector<Obs>& obs,
                                       const PenetrationBands& bands, std::size_t lo_band,
                                       std::size_t hi_band, const SubsetFilter& filter,
                                       const BootstrapConfig& cfg) {
  bands.validate();
  require(lo_band < bands.count() && hi_band < bands.count(), "band index out of range");
  require(cfg.iterations >= 100, "bootstrap needs B >= 100");
  require(cfg.pair_draws >= 1, "bootstrap needs pair_draws >= 1");

  std::vector<Obs> lo, hi;
  for (const auto& o : obs) {
    if (!filter.accepts(o)) continue;
    int b = bands.band_of(o.r);
    if (b == static_cast<int>(lo_band)) lo.push_back(o);
    if (b == static_cast<int>(hi_band)) hi.push_back(o);
  }
  for (auto [v, b] : {std::pair{&lo, lo_band}, std::pair{&hi, hi_band}})
    if (v->empty())
      throw Error("band " + bands.label(b) + " is empty under filter '" + filter.name + "'");

  const bool matched = !filter.ghi_bins.empty();
  const std::size_t n_bins = matched ? filter.ghi_bins.size() - 1 : 0;

  BootstrapResult res;
  res.lo_band = lo_band;
  res.hi_band = hi_band;
  res.filter = filter.name;
  res.estimates.assign(static_cast<std::size_t>(cfg.iterations), 0.0);

  parallel_for(res.estimates.size(), cfg.threads, [&](std::size_t it) {
    Rng rng = make_rng(cfg.seed, kStreamBootstrap, it);
    std::vector<const Obs*> rlo(lo.size()), rhi(hi.size());
    for (auto& p : rlo) p = &lo[uniform_index(rng, lo.size())];
    for (auto& p : rhi) p = &hi[uniform_index(rng, hi.size())];
    double wins = 0.0;
    int used = 0;
    if (!matched) {
      for (int k = 0; k < cfg.pair_draws; ++k) {
        double a = rhi[uniform_index(rng, rhi.size())]->s;
        double b = rlo[uniform_index(rng, rlo.size())]->s;
        wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        ++used;
      }
    } else {
      std::vector<std::vector<double>> lo_bins(n_bins);
      for (const Obs* o : rlo) {
        int b = ghi_bin(filter.ghi_bins, o->ghi);
        if (b >= 0) lo_bins[static_cast<std::size_t>(b)].push_back(o->s);
      }
      for (int k = 0; k < cfg.pair_draws; ++k) {
        const Obs* h = rhi[uniform_index(rng, rhi.size())];
        int b = ghi_bin(filter.ghi_bins, h->ghi);
        if (b < 0) continue;
        const auto& pool = lo_bins[static_cast<std::size_t>(b)];
        if (pool.empty()) continue;
        double l = pool[uniform_index(rng, pool.size())];
        wins += h->s > l ? 1.0 : (h->s == l ? 0.5 : 0.0);
        ++used;
      }
    }
    res.estimates[it] = used > 0 ? wins / used : 0.5;
  });
  res.mean = std::accumulate(res.estimates.begin(), res.estimates.end(), 0.0) /
             static_cast<double>(res.estimates.size());
  return res;
}

MannWhitney mann_whitney(const std::vector<double>& lo, const std::vector<double>& hi) {
  require(!lo.empty() && !hi.empty(), "Mann-Whitney needs two non-empty samples");
  const std::size_t n1 = hi.size(), n2 = lo.size(), n = n1 + n2;
  std::vector<std::pair<double, int>> all;
  all.reserve(n);
  for (double v : hi) all.push_back({v, 1});
  for (double v : lo) all.push_back({v, 0});
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_hi = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].first == all[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_hi += avg;
    tie_term += t * t * t - t;
    i = j;
  }
  const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2),
               dn = static_cast<double>(n);
  MannWhitney r;
  r.u = rank_hi - dn1 * (dn1 + 1) / 2.0;
  const double mean = dn1 * dn2 / 2.0;
  const double var = dn1 * dn2 / 12.0 * ((dn + 1) - tie_term / (dn * (dn - 1)));
  if (var <= 0.0) {
    r.z = 0.0;
    r.p = 1.0;
    return r;
  }
  r.z = (r.u - mean - 0.5) / std::sqrt(var);
  r.p = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  return r;
}

std::vector<AdjacentTest> adjacent_band_test(const std::vector<Obs>& obs,
                                             const PenetrationBands& bands,
                                             std::size_t min_per_band) {
  auto groups = split_by_band(obs, bands);
  std::vector<AdjacentTest> out;
  for (std::size_t b = 0; b + 1 < groups.size(); ++b) {
    AdjacentTest t;
    t.lo_band = b;
    t.hi_band = b + 1;
    t.n_lo = groups[b].size();
    t.n_hi = groups[b + 1].size();
    t.underpowered = t.n_lo < min_per_band || t.n_hi < min_per_band;
    if (t.n_lo > 0 && t.n_hi > 0) t.result = mann_whitney(groups[b], groups[b + 1]);
    out.push_back(t);
  }
  return out;
}

std::vector<ThresholdRow> percentile_threshold_analysis(const std::vector<Obs>& obs,
                                                        const PenetrationBands& bands,
                                                        const std::vector<double>& qs) {
  require(obs.size() >= 100, "percentile threshold analysis needs >= 100 events");
  auto groups = split_by_band(obs, bands);
  std::vector<double> pooled;
  for (const auto& o : obs) pooled.push_back(o.s);
  std::sort(pooled.begin(), pooled.end());
  std::vector<ThresholdRow> out;
  for (double q : qs) {
    require(q > 0.0 && q < 100.0, "percentile must lie in (0, 100)");
    ThresholdRow row;
    row.q = q;
    row.threshold = nearest_rank(pooled, q);
    row.degenerate = !(pooled.front() < row.threshold);
    for (const auto& g : groups) {
      std::size_t below = 0;
      for (double v : g) below += v < row.threshold ? 1 : 0;
      row.counts.push_back(g.size());
      row.below.push_back(g.empty() ? 0.0 : static_cast<double>(below) / g.size());
    }
    out.push_back(std::move(row));
  }
  return out;
}

KsResult ks_uniform(std::vector<double> x) {
  require(!x.empty(), "KS test of empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double f = std::clamp(x[i], 0.0, 1.0);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  // Kolmogorov distribution with the Stephens small-sample correction.
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  if (lambda < 0.2) return {d, 1.0};
  double p = 0.0;
  for (int j = 1; j <= 100; ++j)
    p += 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
  return {d, std::clamp(p, 0.0, 1.0)};
}

}  // namespace surge::empirics
