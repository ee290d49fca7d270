#include "surge/projection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "surge/csv.hpp"

namespace surge::projection {

namespace {
constexpr std::uint64_t kStreamDraw = 51;

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}
}  // namespace

void Trajectory::validate() const {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  require(unit(r_ev) && unit(r_hp) && unit(r_der), "trajectory targets must lie in [0,1]");
}

Trajectory Trajectory::preset(const std::string& name) {
  const auto n = lower(name);
  if (n == "baseline") return {"baseline", 0.10, 0.30, 0.10};
  if (n == "policy") return {"policy", 0.30, 0.40, 0.25};
  throw Error("unknown trajectory '" + name + "' (expected baseline or policy)");
}

bool RestorationWindow::contains(double hour) const {
  if (start_hour <= end_hour) return hour >= start_hour && hour < end_hour;
  return hour >= start_hour || hour < end_hour;
}

WindowSet WindowSet::defaults() {
  return {{{"Night", 22, 6, 1.20},
           {"Morning", 6, 12, 0.90},
           {"Afternoon", 12, 18, 0.80},
           {"Evening", 18, 22, 0.50}}};
}

void WindowSet::validate() const {
  require(!windows.empty(), "no restoration windows");
  std::array<int, 24> cover{};
  for (const auto& w : windows) {
    require(w.headroom_gw > 0.0, "window '" + w.name + "' needs positive headroom");
    require(w.start_hour >= 0 && w.start_hour < 24 && w.end_hour >= 0 && w.end_hour < 24 &&
                w.start_hour != w.end_hour,
            "window '" + w.name + "' has an invalid hour range");
    for (int h = 0; h < 24; ++h) cover[static_cast<std::size_t>(h)] += w.contains(h + 0.5);
  }
  for (int c : cover) require(c == 1, "restoration windows must partition the day");
}

const RestorationWindow& WindowSet::find(const std::string& name) const {
  for (const auto& w : windows)
    if (lower(w.name) == lower(name)) return w;
  throw Error("unknown restoration window '" + name + "'");
}

TempBin parse_temp_bin(const std::string& s) {
  const auto n = lower(s);
  if (n == "all") return TempBin::All;
  if (n == "cold") return TempBin::Cold;
  if (n == "cool") return TempBin::Cool;
  if (n == "mild") return TempBin::Mild;
  if (n == "hot") return TempBin::Hot;
  throw Error("unknown temperature bin '" + s + "' (expected all, cold, cool, mild or hot)");
}

std::string to_string(TempBin b) {
  switch (b) {
    case TempBin::All: return "all";
    case TempBin::Cold: return "cold";
    case TempBin::Cool: return "cool";
    case TempBin::Mild: return "mild";
    case TempBin::Hot: return "hot";
  }
  return "all";
}

bool in_bin(TempBin b, double t) {
  switch (b) {
    case TempBin::All: return true;
    case TempBin::Cold: return t < 0.0;
    case TempBin::Cool: return t >= 0.0 && t < 15.0;
    case TempBin::Mild: return t >= 15.0 && t <= 25.0;
    case TempBin::Hot: return t > 25.0;
  }
  return false;
}

FleetMeans fleet_means(const std::vector<SurgeRecord>& records) {
  require(!records.empty(), "fleet means need records");
  FleetMeans f;
  for (const auto& r : records) f.r_ev += r.r.r_ev, f.r_hp += r.r.r_hp, f.r_der += r.r.r_der;
  const double n = static_cast<double>(records.size());
  f.r_ev /= n;
  f.r_hp /= n;
  f.r_der /= n;
  return f;
}

Rescaled rescale_penetration(const PenetrationRates& r, const FleetMeans& fleet,
                             const Trajectory& trajectory) {
  trajectory.validate();
  Rescaled out;
  auto one = [&](double v, double mean, double target, const char* what) {
    require(mean > 0.0, std::string("fleet-mean ") + what + " penetration is zero");
    double x = v * (target / mean);
    if (x > 1.0) {
      ++out.clipped;
      return 1.0;
    }
    return std::max(0.0, x);
  };
  out.r.r_ev = one(r.r_ev, fleet.r_ev, trajectory.r_ev, "EV");
  out.r.r_hp = one(r.r_hp, fleet.r_hp, trajectory.r_hp, "HP");
  out.r.r_der = one(r.r_der, fleet.r_der, trajectory.r_der, "DER");
  return out;
}

Portfolio sample_portfolio(const std::vector<double>& base_gw, double alpha, double system_base_gw,
                           Rng& rng) {
  require(alpha > 0.0 && alpha <= 1.0, "α ∈ (0,1]");
  require(!base_gw.empty(), "no templates to sample");
  require(system_base_gw > 0.0, "system base must be positive");
  const double target = alpha * system_base_gw;
  const double floor = target * (1.0 - kPortfolioTolerance);
  Portfolio p;
  // Full templates are added while they fit. The first one that does not fit
  // ends the draw: discarded inside the band, scaled down to fill below it.
  while (p.base_gw < target) {
    const std::size_t j = uniform_index(rng, base_gw.size());
    const double b = base_gw[j];
    require(b > 0.0, "template baselines must be positive");
    if (p.base_gw + b <= target) {
      p.picks.push_back({j, 1.0});
      p.base_gw += b;
    } else {
      if (p.base_gw < floor) {
        p.picks.push_back({j, (target - p.base_gw) / b});
        p.base_gw = target;
      }
      break;
    }
  }
  return p;
}

Stats summarize(std::vector<double> draws, double headroom_gw) {
  require(!draws.empty(), "no draws to summarize");
  Stats s;
  const double n = static_cast<double>(draws.size());
  double sum = 0.0, over = 0.0;
  for (double v : draws) sum += v, over += v > headroom_gw;
  s.mean = sum / n;
  double ss = 0.0;
  for (double v : draws) ss += (v - s.mean) * (v - s.mean);
  s.sd = draws.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.mc_se = s.sd / std::sqrt(n);
  s.exceedance = over / n;
  std::sort(draws.begin(), draws.end());
  s.lo = nearest_rank(draws, 2.5);
  s.median = nearest_rank(draws, 50.0);
  s.p95 = nearest_rank(draws, 95.0);
  s.hi = nearest_rank(draws, 97.5);
  return s;
}

void DrawConfig::validate() const {
  require(alpha > 0.0 && alpha <= 1.0, "α ∈ (0,1]");
  require(system_base_gw > 0.0, "system base must be positive");
  require(n_draws >= 1, "n_draws must be >= 1");
}

std::vector<std::vector<double>> draw_surges(const std::vector<double>& base_gw,
                                             const std::vector<std::vector<double>>& surge_gw,
                                             const DrawConfig& cfg, unsigned threads) {
  cfg.validate();
  for (const auto& s : surge_gw) require(s.size() == base_gw.size(), "surge/base size mismatch");
  std::vector<std::vector<double>> out(surge_gw.size(),
                                       std::vector<double>(static_cast<std::size_t>(cfg.n_draws)));
  parallel_for(static_cast<std::size_t>(cfg.n_draws), threads, [&](std::size_t k) {
    Rng rng = make_rng(cfg.seed, kStreamDraw, k);
    auto p = sample_portfolio(base_gw, cfg.alpha, cfg.system_base_gw, rng);
    for (std::size_t v = 0; v < surge_gw.size(); ++v) {
      double acc = 0.0;
      for (const auto& pk : p.picks) acc += pk.weight * surge_gw[v][pk.index];
      out[v][k] = acc;
    }
  });
  return out;
}

void ScenarioConfig::validate() const {
  Trajectory::preset(trajectory);
  parse_temp_bin(temp_bin);
  require(duration_h > 0.0 && std::isfinite(duration_h), "scenario duration must be positive");
  require(alpha > 0.0 && alpha <= 1.0, "α ∈ (0,1]");
  require(n_draws >= 100, "n_draws must be >= 100");
  require(system_base_gw > 0.0, "system base must be positive");
}

std::vector<double> TemplateSet::base() const {
  std::vector<double> v;
  v.reserve(templates.size());
  for (const auto& t : templates) v.push_back(t.base_gw);
  return v;
}

std::vector<double> TemplateSet::surge(bool mitigated) const {
  std::vector<double> v;
  v.reserve(templates.size());
  for (const auto& t : templates) v.push_back(mitigated ? t.mitigated_gw : t.surge_gw);
  return v;
}

TemplateSet build_templates(const synth::SyntheticDataset& ds, const std::vector<SurgeRecord>& records,
                            const estimator::Model& model, const Trajectory& trajectory,
                            const RestorationWindow& window, TempBin bin, double duration_h,
                            const mitigation::Setup* mitigation, unsigned threads) {
  require(duration_h > 0.0, "scenario duration must be positive");
  const FleetMeans fleet = fleet_means(records);
  std::unordered_map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.events.size(); ++i) by_id.emplace(ds.events[i].event_id, i);

  TemplateSet set;
  set.stratum = trajectory.name + "/" + window.name + "/" + to_string(bin) + "/" +
                fmt_double(duration_h) + "h";
  for (const auto& r : records) {
    if (!window.contains(r.hour()) || !in_bin(bin, r.temp_c)) continue;
    auto it = by_id.find(r.event_id);
    require(it != by_id.end(), "record " + std::to_string(r.event_id) + " has no dataset event");
    Template t;
    t.event = it->second;
    t.event_id = r.event_id;
    t.base_gw = r.p_tot_base_kw * 1e-6;
    t.temp_c = r.temp_c;
    t.hour = r.hour();
    auto rs = rescale_penetration(r.r, fleet, trajectory);
    t.r = rs.r;
    set.clipped += rs.clipped;
    if (t.base_gw > 0.0) set.templates.push_back(t);
  }
  require(!set.templates.empty(), "no templates in stratum " + set.stratum);

  const int T = model.config().T;
  const auto minutes = static_cast<Minutes>(std::llround(duration_h * 60.0));
  std::vector<estimator::EventFeatures> feats(set.templates.size());
  parallel_for(feats.size(), threads, [&](std::size_t i) {
    const auto& t = set.templates[i];
    OutageEvent e = ds.events[t.event];
    const Minutes restoration = e.restoration();
    e.duration_h = static_cast<double>(minutes) / 60.0;
    e.start = restoration - minutes;
    feats[i] = estimator::featurize(e, t.r, ds.weather, T);
  });
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (feats.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(feats.size(), lo + kChunk);
    std::vector<estimator::EventFeatures> batch(feats.begin() + static_cast<std::ptrdiff_t>(lo),
                                                feats.begin() + static_cast<std::ptrdiff_t>(hi));
    auto pred = model.predict(batch);
    for (std::size_t i = lo; i < hi; ++i) set.templates[i].pred = pred[i - lo];
  });

  parallel_for(set.templates.size(), threads, [&](std::size_t i) {
    auto& t = set.templates[i];
    const auto& p = t.pred;
    SurgeComponents c{0.0, std::max(p[0], 0.0), std::max(p[1], 0.0), std::max(p[2], 0.0), p[3]};
    c.s_tot = c.s_ev + c.s_hp + c.s_der + c.s_oth;
    t.surge_gw = t.base_gw * c.s_tot;
    t.mitigated_gw = t.surge_gw;
    if (mitigation) {
      const auto& e = ds.events[t.event];
      auto gen = metrics::trace_generation(ds.traces[t.event], e.restoration());
      t.mitigation = mitigation::event_factors(*mitigation, t.temp_c, gen);
      t.mitigated_gw = t.base_gw * mitigation::apply(c, t.mitigation.factors).s_tot;
    }
  });
  return set;
}

ProjectionResult project(const ScenarioConfig& scenario, const WindowSet& windows,
                         const synth::SyntheticDataset& ds, const std::vector<SurgeRecord>& records,
                         const estimator::Model& model, const mitigation::Setup* mitigation,
                         unsigned threads) {
  scenario.validate();
  windows.validate();
  const auto& w = windows.find(scenario.window);
  auto set = build_templates(ds, records, model, Trajectory::preset(scenario.trajectory), w,
                             parse_temp_bin(scenario.temp_bin), scenario.duration_h, mitigation,
                             threads);
  std::vector<std::vector<double>> surges{set.surge(false)};
  if (mitigation) surges.push_back(set.surge(true));
  DrawConfig dc{scenario.alpha, scenario.system_base_gw, scenario.n_draws, scenario.seed};
  auto draws = draw_surges(set.base(), surges, dc, threads);

  ProjectionResult r;
  r.scenario = scenario;
  r.headroom_gw = w.headroom_gw;
  r.n_templates = set.templates.size();
  r.clipped = set.clipped;
  r.unmitigated = summarize(std::move(draws[0]), w.headroom_gw);
  if (mitigation) r.mitigated = summarize(std::move(draws[1]), w.headroom_gw);
  return r;
}

std::vector<GridRow> grid(const GridConfig& cfg, const WindowSet& windows,
                          const synth::SyntheticDataset& ds, const std::vector<SurgeRecord>& records,
                          const estimator::Model& model, const mitigation::Setup* mitigation,
                          unsigned threads) {
  windows.validate();
  require(cfg.n_draws >= 100, "n_draws must be >= 100");
  const TempBin bin = parse_temp_bin(cfg.temp_bin);
  std::vector<GridRow> rows;
  for (const auto& tname : cfg.trajectories) {
    const auto traj = Trajectory::preset(tname);
    for (const auto& w : windows.windows) {
      for (double d : cfg.durations_h) {
        auto set = build_templates(ds, records, model, traj, w, bin, d, mitigation, threads);
        std::vector<std::vector<double>> surges{set.surge(false)};
        if (mitigation) surges.push_back(set.surge(true));
        const auto base = set.base();
        for (double a : cfg.alphas) {
          DrawConfig dc{a, cfg.system_base_gw, cfg.n_draws, cfg.seed};
          auto draws = draw_surges(base, surges, dc, threads);
          for (std::size_t v = 0; v < draws.size(); ++v) {
            GridRow row;
            row.trajectory = traj.name;
            row.window = w.name;
            row.temp_bin = to_string(bin);
            row.duration_h = d;
            row.alpha = a;
            row.headroom_gw = w.headroom_gw;
            row.mitigated = v == 1;
            row.n_templates = set.templates.size();
            row.stats = summarize(std::move(draws[v]), w.headroom_gw);
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return rows;
}

void write_grid_csv(const std::filesystem::path& path, const std::vector<GridRow>& rows) {
  csv::Table t;
  t.header = {"trajectory", "window",  "temp_bin", "duration_h", "alpha",  "mitigated",
              "n_templates", "mean_gw", "lo_gw", "median_gw", "p95_gw", "hi_gw",
              "exceedance_prob", "headroom_gw"};
  for (const auto& r : rows) {
    t.rows.push_back({r.trajectory, r.window, r.temp_bin, fmt_double(r.duration_h),
                      fmt_double(r.alpha), r.mitigated ? "1" : "0", std::to_string(r.n_templates),
                      fmt_double(r.stats.mean), fmt_double(r.stats.lo), fmt_double(r.stats.median),
                      fmt_double(r.stats.p95), fmt_double(r.stats.hi),
                      fmt_double(r.stats.exceedance), fmt_double(r.headroom_gw)});
  }
  csv::write(path, t);
}

}  // namespace surge::projection
