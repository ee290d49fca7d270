#include "surge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "surge/binio.hpp"
#include "surge/csv.hpp"

namespace surge::pipeline {

using config::json;

projection::WindowSet ProjectionStage::windows() const {
  auto w = projection::WindowSet::defaults();
  for (const auto& [name, gw] : headroom_gw) {
    bool found = false;
    for (auto& x : w.windows) {
      std::string lower = x.name;
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (lower == name) x.headroom_gw = gw, found = true;
    }
    if (!found) throw ConfigError("/projection/headroom_gw/" + name, "unknown restoration window");
  }
  return w;
}

void RunConfig::validate() const {
  auto at = [](const std::string& ptr, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(ptr, e.what());
    }
  };
  at("/threads", [&] { require(threads >= 1, "threads must be >= 1"); });
  at("/synth", [&] {
    require(synth.n_feeders >= 1, "n_feeders must be >= 1");
    require(synth.n_events >= 1, "n_events must be >= 1");
    synth.params.validate();
  });
  at("/window", [&] { window.validate(); });
  at("/empirics", [&] {
    require(empirics.bootstrap_iterations >= 1, "bootstrap_iterations must be >= 1");
    require(empirics.bootstrap_pair_draws >= 1, "bootstrap_pair_draws must be >= 1");
    require(empirics.curve_bins >= 1, "curve_bins must be >= 1");
    require(empirics.curve_quantile > 0 && empirics.curve_quantile <= 100,
            "curve_quantile must lie in (0, 100]");
  });
  at("/causal", [&] {
    causal.forest.validate();
    require(causal.scale > 0.0, "scale must be positive");
    for (const auto& a : causal.assets) empirics::parse_asset(a);
  });
  at("/estimator/model", [&] { estimator.model.validate(); });
  at("/estimator/train", [&] { estimator.train.validate(); });
  at("/projection", [&] {
    projection.windows().validate();
    const auto& g = projection.grid;
    require(!g.trajectories.empty() && !g.durations_h.empty() && !g.alphas.empty(),
            "projection grid axes must be non-empty");
    for (const auto& t : g.trajectories) projection::Trajectory::preset(t);
    for (double a : g.alphas) require(a > 0.0 && a <= 1.0, "α ∈ (0,1]");
    for (double d : g.durations_h) require(d > 0.0, "durations must be positive");
    projection::parse_temp_bin(g.temp_bin);
    require(g.n_draws >= 100, "n_draws must be >= 100");
    require(g.system_base_gw > 0.0, "system_base_gw must be positive");
  });
  at("/mitigation", [&] { mitigation.validate(); });
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  config::merge_json(j, c);
  c.validate();
  return c;
}

namespace {
json read_json(const fs::path& path) {
  need(path);
  try {
    return json::parse(binio::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON in '") + path.string() + "': " + e.what());
  }
}
}  // namespace

RunConfig load_config(const fs::path& path) { return parse_config(read_json(path)); }

mitigation::Policies load_policies(const fs::path& path) {
  mitigation::Policies p;
  config::merge_json(read_json(path), p);
  try {
    p.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("", e.what());
  }
  return p;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  json j = config::to_json(cfg);
  j.erase("output_dir");
  j.erase("threads");
  return config::fnv1a(j.dump());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void need(const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing upstream artifact '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) {
  binio::write_file(path, j.dump(2) + "\n");
}

json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::stod(fmt_double(v));
}

void stage_synth(const RunConfig& cfg, const fs::path& out_dir) {
  auto ds = synth::gen_city(cfg.synth.n_feeders, cfg.synth.n_events, cfg.synth.params,
                            cfg.synth.seed, cfg.threads);
  synth::write_dataset(out_dir, ds);
}

void stage_metrics(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_csv) {
  need(data_dir / "events.csv");
  auto ds = synth::read_dataset(data_dir);
  auto recs = build_records(ds, cfg.window, ds.params.der_delay(), cfg.threads);
  write_records(out_csv, recs);
}

namespace {

std::vector<SurgeRecord> records(const fs::path& surges_csv) {
  need(surges_csv);
  return read_records(surges_csv);
}

synth::SyntheticDataset dataset(const fs::path& dir) {
  need(dir / "events.csv");
  return synth::read_dataset(dir);
}

std::string f9(double v) { return fmt_double(v); }

}  // namespace

void stage_empirics(const RunConfig& cfg, const fs::path& surges_csv, const fs::path& out_dir) {
  const auto recs = records(surges_csv);
  const auto& ec = cfg.empirics;
  csv::Table bands{{"asset", "band", "label", "count", "median", "p95"}, {}};
  csv::Table curve{{"asset", "threshold", "r_lo", "r_hi", "n", "k", "p", "ci_lo", "ci_hi"}, {}};
  csv::Table boot{{"asset", "filter", "lo_band", "hi_band", "iterations", "mean", "lo", "hi",
                   "status"},
                  {}};
  csv::Table tests{{"asset", "lo_band", "hi_band", "n_lo", "n_hi", "u", "z", "p", "underpowered"},
                   {}};
  csv::Table thr{{"asset", "q", "threshold", "degenerate", "band", "count", "p_below"}, {}};

  for (auto asset : {empirics::Asset::Ev, empirics::Asset::Hp, empirics::Asset::Der}) {
    const std::string an = empirics::asset_name(asset);
    const auto obs = empirics::observations(recs, asset);
    const auto pb = empirics::PenetrationBands::defaults(asset);
    for (const auto& b : empirics::band_stats(obs, pb))
      bands.rows.push_back({an, std::to_string(b.band + 1), pb.label(b.band), std::to_string(b.count),
                            b.empty ? "" : f9(b.median), b.empty ? "" : f9(b.p95)});

    const double t = empirics::pooled_threshold(obs, ec.curve_quantile);
    double rmax = 0.0;
    for (const auto& o : obs) rmax = std::max(rmax, o.r);
    std::vector<double> grid;
    const double top = rmax * (1.0 + 1e-9) + 1e-12;
    for (int i = 0; i <= ec.curve_bins; ++i) grid.push_back(top * i / ec.curve_bins);
    for (const auto& p : empirics::exceedance_curve(obs, t, grid))
      curve.rows.push_back({an, f9(t), f9(p.r_lo), f9(p.r_hi), std::to_string(p.n),
                            std::to_string(p.k), p.empty ? "" : f9(p.p), f9(p.ci_lo), f9(p.ci_hi)});

    empirics::BootstrapConfig bc;
    bc.iterations = ec.bootstrap_iterations;
    bc.pair_draws = ec.bootstrap_pair_draws;
    bc.seed = ec.seed;
    bc.threads = cfg.threads;
    for (const auto& name : empirics::SubsetFilter::preset_names()) {
      if (name != "all" && name.rfind(an + "_", 0) != 0) continue;
      const auto f = empirics::SubsetFilter::preset(name);
      const std::size_t lo = 0, hi = pb.count() - 1;
      try {
        auto r = empirics::bootstrap_band_compare(obs, pb, lo, hi, f, bc);
        auto e = r.estimates;
        std::sort(e.begin(), e.end());
        boot.rows.push_back({an, name, std::to_string(lo + 1), std::to_string(hi + 1),
                             std::to_string(e.size()), f9(r.mean), f9(nearest_rank(e, 2.5)),
                             f9(nearest_rank(e, 97.5)), "ok"});
      } catch (const Error& err) {
        boot.rows.push_back({an, name, std::to_string(lo + 1), std::to_string(hi + 1), "0", "", "",
                             "", err.what()});
      }
    }

    for (const auto& a : empirics::adjacent_band_test(obs, pb))
      tests.rows.push_back({an, std::to_string(a.lo_band + 1), std::to_string(a.hi_band + 1),
                            std::to_string(a.n_lo), std::to_string(a.n_hi), f9(a.result.u),
                            f9(a.result.z), f9(a.result.p), a.underpowered ? "1" : "0"});

    for (const auto& row : empirics::percentile_threshold_analysis(obs, pb, ec.threshold_quantiles))
      for (std::size_t b = 0; b < row.below.size(); ++b)
        thr.rows.push_back({an, f9(row.q), f9(row.threshold), row.degenerate ? "1" : "0",
                            std::to_string(b + 1), std::to_string(row.counts[b]), f9(row.below[b])});
  }
  csv::write(out_dir / "band_stats.csv", bands);
  csv::write(out_dir / "exceedance_curve.csv", curve);
  csv::write(out_dir / "bootstrap.csv", boot);
  csv::write(out_dir / "tests.csv", tests);
  csv::write(out_dir / "thresholds.csv", thr);
}

void causal_fit(const RunConfig& cfg, const fs::path& surges_csv, empirics::Asset asset,
                const fs::path& out_model) {
  const auto recs = records(surges_csv);
  auto m = causal::fit(causal::samples_from_records(recs, asset), cfg.causal.forest, cfg.threads);
  causal::save(out_model, m);
}

namespace {
json ate_json(const causal::AteResult& r, std::size_t n) {
  return {{"scale", num(r.scale)},   {"ate", num(r.ate_mean)},       {"se", num(r.se)},
          {"se_score", num(r.se_score)}, {"se_forest", num(r.se_forest)}, {"ci_lo", num(r.ci_lo)},
          {"ci_hi", num(r.ci_hi)},   {"n", n}};
}
}  // namespace

json causal_ate(const RunConfig& cfg, const fs::path& model, double scale) {
  need(model);
  auto m = causal::load(model);
  return ate_json(causal::ate(m, scale, cfg.threads), m.train.size());
}

void stage_causal(const RunConfig& cfg, const fs::path& surges_csv, const fs::path& out_dir) {
  const auto recs = records(surges_csv);
  json out = json::object();
  csv::Table local{{"event_id", "asset", "local_effect"}, {}};
  for (const auto& name : cfg.causal.assets) {
    const auto asset = empirics::parse_asset(name);
    const std::string an = empirics::asset_name(asset);
    auto m = causal::fit(causal::samples_from_records(recs, asset), cfg.causal.forest, cfg.threads);
    causal::save(out_dir / ("forest_" + an + ".bin"), m);
    auto r = causal::ate(m, cfg.causal.scale, cfg.threads);
    auto j = ate_json(r, m.train.size());
    j["confounders"] = causal::confounder_names(asset);
    out[an] = j;
    for (std::size_t i = 0; i < recs.size(); ++i)
      local.rows.push_back({std::to_string(recs[i].event_id), an, f9(r.local_effects[i])});
  }
  write_json(out_dir / "ate.json", out);
  csv::write(out_dir / "local_effects.csv", local);
}

estimator::TrainReport stage_train(const RunConfig& cfg, const fs::path& data_dir,
                                   const fs::path& surges_csv, const fs::path& out_model,
                                   const fs::path& out_metrics) {
  const auto ds = dataset(data_dir);
  const auto recs = records(surges_csv);
  auto samples = estimator::samples_from_dataset(ds, recs, cfg.estimator.model.T, cfg.threads);
  estimator::Model m(cfg.estimator.model);
  auto rep = estimator::train(m, samples, cfg.estimator.train, cfg.threads);
  estimator::save(out_model, m);

  json heads = json::object();
  for (int h = 0; h < estimator::kHeads; ++h) {
    const auto& t = rep.test[static_cast<std::size_t>(h)];
    heads[estimator::kHeadNames[static_cast<std::size_t>(h)]] = {
        {"r2", num(t.r2)}, {"rmse", num(t.rmse)}, {"mae", num(t.mae)}, {"degenerate", t.degenerate}};
  }
  json tl = json::array(), vl = json::array();
  for (double v : rep.train_loss) tl.push_back(num(v));
  for (double v : rep.val_loss) vl.push_back(num(v));
  write_json(out_metrics, {{"test", heads},
                           {"n_events", samples.size()},
                           {"n_test", rep.test_index.size()},
                           {"epochs_run", rep.epochs_run},
                           {"best_epoch", rep.best_epoch},
                           {"best_val_loss", num(rep.best_val_loss)},
                           {"diverged", rep.diverged},
                           {"train_loss", tl},
                           {"val_loss", vl}});
  return rep;
}

void write_sweep_csv(const fs::path& path, const estimator::SweepSpec& spec,
                     const std::vector<estimator::SweepRow>& rows) {
  csv::Table t{{spec.series.empty() ? "series" : spec.series, spec.vary, "s_ev", "s_hp", "s_der",
                "s_oth", "s_tot"},
               {}};
  for (const auto& r : rows)
    t.rows.push_back({spec.series.empty() ? "" : f9(r.series_value), f9(r.value), f9(r.pred[0]),
                      f9(r.pred[1]), f9(r.pred[2]), f9(r.pred[3]), f9(r.total())});
  csv::write(path, t);
}

std::vector<std::pair<std::string, estimator::SweepSpec>> default_sweeps() {
  auto range = [](double lo, double hi, double step) {
    std::vector<double> v;
    for (int i = 0; lo + i * step <= hi + 1e-9; ++i) v.push_back(lo + i * step);
    return v;
  };
  const std::vector<double> pens{0.1, 0.2, 0.3, 0.4};
  std::vector<std::pair<std::string, estimator::SweepSpec>> s;
  s.push_back({"ev_hour", {"hour", range(0, 23, 1), "r_ev", pens, {{"temp_c", 10}}}});
  s.push_back({"ev_duration", {"duration_h", range(0.5, 8, 0.5), "r_ev", pens, {{"hour", 19}, {"temp_c", 10}}}});
  s.push_back({"hp_temp", {"temp_c", range(-20, 35, 2.5), "r_hp", pens, {{"hour", 7}}}});
  s.push_back({"hp_duration", {"duration_h", range(0.5, 8, 0.5), "r_hp", pens, {{"hour", 7}, {"temp_c", -10}}}});
  s.push_back({"der_hour", {"hour", range(0, 23, 1), "r_der", pens, {{"month", 6}, {"temp_c", 22}, {"ghi", 600}}}});
  s.push_back({"der_ghi", {"ghi", range(0, 1000, 50), "r_der", pens, {{"month", 6}, {"hour", 10}, {"temp_c", 22}}}});
  return s;
}

void stage_sweep(const RunConfig& cfg, const fs::path& model, const fs::path& out_dir) {
  (void)cfg;
  need(model);
  auto m = estimator::load(model);
  for (const auto& [name, spec] : default_sweeps())
    write_sweep_csv(out_dir / (name + ".csv"), spec, estimator::sweep(m, spec));
}

void stage_project(const RunConfig& cfg, const fs::path& data_dir, const fs::path& surges_csv,
                   const fs::path& model, const fs::path& out_csv) {
  const auto ds = dataset(data_dir);
  const auto recs = records(surges_csv);
  need(model);
  const auto m = estimator::load(model);
  std::optional<mitigation::Setup> setup;
  if (cfg.projection.mitigated)
    setup = mitigation::prepare(cfg.mitigation, recs, ds.params.der_delay(), cfg.threads);
  auto rows = projection::grid(cfg.projection.grid, cfg.projection.windows(), ds, recs, m,
                               setup ? &*setup : nullptr, cfg.threads);
  projection::write_grid_csv(out_csv, rows);
}

void stage_mitigate(const RunConfig& cfg, const fs::path& data_dir, const fs::path& surges_csv,
                    const fs::path& out_csv) {
  const auto ds = dataset(data_dir);
  const auto recs = records(surges_csv);
  const auto setup = mitigation::prepare(cfg.mitigation, recs, ds.params.der_delay(), cfg.threads);
  std::unordered_map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.events.size(); ++i) by_id.emplace(ds.events[i].event_id, i);

  std::vector<mitigation::EventFactors> f(recs.size());
  parallel_for(recs.size(), cfg.threads, [&](std::size_t i) {
    auto it = by_id.find(recs[i].event_id);
    require(it != by_id.end(), "record " + std::to_string(recs[i].event_id) + " has no dataset event");
    const auto& e = ds.events[it->second];
    auto gen = metrics::trace_generation(ds.traces[it->second], e.restoration());
    f[i] = mitigation::event_factors(setup, recs[i].temp_c, gen, cfg.window);
  });
  csv::Table t{{"event_id", "gamma_ev", "gamma_hp", "gamma_der", "ev_zero_load", "hp_clamped",
                "hp_degenerate", "der_zero_generation", "s_tot", "s_ev", "s_hp", "s_der", "s_oth",
                "s_tot_mitigated", "s_ev_mitigated", "s_hp_mitigated", "s_der_mitigated"},
               {}};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& s = recs[i].s;
    const auto o = mitigation::apply(s, f[i].factors);
    t.rows.push_back({std::to_string(recs[i].event_id), f9(f[i].factors.gamma_ev),
                      f9(f[i].factors.gamma_hp), f9(f[i].factors.gamma_der),
                      setup.ev.zero_load ? "1" : "0", f[i].hp.clamped ? "1" : "0",
                      f[i].hp.degenerate ? "1" : "0", f[i].der.zero_generation ? "1" : "0",
                      f9(s.s_tot), f9(s.s_ev), f9(s.s_hp), f9(s.s_der), f9(s.s_oth), f9(o.s_tot),
                      f9(o.s_ev), f9(o.s_hp), f9(o.s_der)});
  }
  csv::write(out_csv, t);

  json regimes = json::array();
  const char* names[] = {"cold", "mild", "hot"};
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& l = setup.hp_model.regimes[r];
    regimes.push_back({{"regime", names[r]},
                       {"beta", num(l.beta)},
                       {"alpha", num(l.alpha)},
                       {"n", l.n},
                       {"underpowered", l.underpowered}});
  }
  auto side = out_csv;
  side.replace_extension(".json");
  write_json(side, {{"policies", config::to_json(cfg.mitigation)},
                    {"gamma_ev", num(setup.ev.gamma)},
                    {"p_ev_kw", num(setup.ev.p_ev)},
                    {"p_ev_mitigated_kw", num(setup.ev.p_ev_mitigated)},
                    {"hp_regimes", regimes}});
}

void stage_report(const RunConfig& cfg, const fs::path& projection_csv, const fs::path& out_dir) {
  (void)cfg;
  need(projection_csv);
  auto in = csv::read(projection_csv);
  csv::Table t{{"trajectory", "window", "duration_h", "alpha", "mitigated", "low_gw", "mean_gw",
                "high_gw", "exceedance_prob", "cell"},
               {}};
  json cells = json::array();
  for (std::size_t i = 0; i < in.rows.size(); ++i) {
    const auto lo = in.num(i, "lo_gw"), mean = in.num(i, "mean_gw"), hi = in.num(i, "hi_gw");
    char cell[96];
    std::snprintf(cell, sizeof cell, "%.2f (%.2f) %.2f", lo, mean, hi);
    const bool mit = in.str(i, "mitigated") == "1";
    t.rows.push_back({in.str(i, "trajectory"), in.str(i, "window"), in.str(i, "duration_h"),
                      in.str(i, "alpha"), mit ? "1" : "0", in.str(i, "lo_gw"), in.str(i, "mean_gw"),
                      in.str(i, "hi_gw"), in.str(i, "exceedance_prob"), cell});
    cells.push_back({{"trajectory", in.str(i, "trajectory")},
                     {"window", in.str(i, "window")},
                     {"duration_h", num(in.num(i, "duration_h"))},
                     {"alpha", num(in.num(i, "alpha"))},
                     {"mitigated", mit},
                     {"low_gw", num(lo)},
                     {"mean_gw", num(mean)},
                     {"high_gw", num(hi)},
                     {"exceedance_prob", num(in.num(i, "exceedance_prob"))},
                     {"headroom_gw", num(in.num(i, "headroom_gw"))}});
  }
  csv::write(out_dir / "table.csv", t);
  write_json(out_dir / "table.json",
             {{"cell_convention", "low (mean) high, 95% Monte Carlo interval"}, {"cells", cells}});
}

void write_manifest(const RunConfig& cfg, const Layout& layout) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(layout.root))
    if (e.is_regular_file() && e.path() != layout.manifest()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json artifacts = json::array();
  for (const auto& f : files) {
    const auto bytes = binio::read_file(f);
    artifacts.push_back({{"path", fs::relative(f, layout.root).generic_string()},
                         {"bytes", bytes.size()},
                         {"fnv1a", hex64(config::fnv1a(bytes))}});
  }
  json conf = config::to_json(cfg);
  conf.erase("output_dir");
  conf.erase("threads");
  write_json(layout.manifest(),
             {{"tool_version", kToolVersion},
              {"config_hash", hex64(config_hash(cfg))},
              {"seeds",
               {{"synth", cfg.synth.seed},
                {"empirics", cfg.empirics.seed},
                {"causal", cfg.causal.forest.seed},
                {"estimator_init", cfg.estimator.model.seed},
                {"estimator_train", cfg.estimator.train.seed},
                {"projection", cfg.projection.grid.seed},
                {"mitigation_ev", cfg.mitigation.ev.seed}}},
              {"config", conf},
              {"artifacts", artifacts}});
}

void run_all(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const Layout l{out_dir};
  fs::create_directories(l.root);
  stage_synth(cfg, l.data());
  stage_metrics(cfg, l.data(), l.surges());
  fs::create_directories(l.empirics());
  stage_empirics(cfg, l.surges(), l.empirics());
  fs::create_directories(l.causal());
  stage_causal(cfg, l.surges(), l.causal());
  stage_train(cfg, l.data(), l.surges(), l.model(), l.train_metrics());
  fs::create_directories(l.sweeps());
  stage_sweep(cfg, l.model(), l.sweeps());
  stage_project(cfg, l.data(), l.surges(), l.model(), l.projection_table());
  stage_mitigate(cfg, l.data(), l.surges(), l.mitigated());
  fs::create_directories(l.report());
  stage_report(cfg, l.projection_table(), l.report());
  write_manifest(cfg, l);
}

}  // namespace surge::pipeline
