#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "surge/pipeline.hpp"

using namespace surge;
using namespace surge::pipeline;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error("not a number: '" + item + "'");
    }
  }
  return out;
}

// Shared options: a run config (defaults when absent) and the thread cap.
struct Common {
  std::string config;
  unsigned threads = 0;

  RunConfig load() const {
    RunConfig c = config.empty() ? parse_config(config::json::object()) : load_config(config);
    if (const char* dir = std::getenv("SURGE_OUTPUT_DIR")) c.output_dir = dir;
    if (const char* t = std::getenv("SURGE_THREADS")) c.threads = std::max(1, std::atoi(t));
    if (threads > 0) c.threads = threads;
    return c;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration (JSON)");
  app->add_option("--threads", c.threads, "Worker thread cap");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-outage load surge analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Common common;
  std::function<void()> action;

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic city dataset");
  add_common(synth_cmd, common);
  std::string synth_out = "data";
  int n_events = 0, n_feeders = 0;
  std::uint64_t synth_seed = 0;
  synth_cmd->add_option("--out", synth_out, "Dataset directory");
  synth_cmd->add_option("--events", n_events, "Number of outage events");
  synth_cmd->add_option("--feeders", n_feeders, "Number of feeders");
  synth_cmd->add_option("--seed", synth_seed, "Master seed");
  synth_cmd->callback([&] {
    action = [&] {
      auto c = common.load();
      if (n_events > 0) c.synth.n_events = n_events;
      if (n_feeders > 0) c.synth.n_feeders = n_feeders;
      if (synth_seed > 0) c.synth.seed = synth_seed;
      c.validate();
      stage_synth(c, synth_out);
    };
  });

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute surge ratios from meter traces");
  add_common(metrics_cmd, common);
  std::string data_dir = "data", surges = "surges.csv";
  metrics_cmd->add_option("--data", data_dir, "Dataset directory");
  metrics_cmd->add_option("--out", surges, "Output surges.csv");
  metrics_cmd->callback([&] { action = [&] { stage_metrics(common.load(), data_dir, surges); }; });

  // empirics
  auto* emp_cmd = app.add_subcommand("empirics", "Band statistics, bootstrap and tail tests");
  add_common(emp_cmd, common);
  std::string emp_out = "empirics";
  emp_cmd->add_option("--in", surges, "surges.csv");
  emp_cmd->add_option("--out", emp_out, "Output directory");
  emp_cmd->callback([&] { action = [&] { stage_empirics(common.load(), surges, emp_out); }; });

  // causal fit / ate
  auto* causal_cmd = app.add_subcommand("causal", "Causal forest estimation");
  causal_cmd->require_subcommand(1);
  auto* cfit = causal_cmd->add_subcommand("fit", "Fit a forest for one asset");
  add_common(cfit, common);
  std::string asset = "ev", forest_out = "forest.bin";
  cfit->add_option("--asset", asset, "ev, hp or der");
  cfit->add_option("--in", surges, "surges.csv");
  cfit->add_option("--out", forest_out, "Model file");
  cfit->callback([&] {
    action = [&] { causal_fit(common.load(), surges, empirics::parse_asset(asset), forest_out); };
  });
  auto* cate = causal_cmd->add_subcommand("ate", "Average effect with confidence interval");
  add_common(cate, common);
  std::string forest_in = "forest.bin", ate_out = "ate.json";
  double scale = 0.1;
  cate->add_option("--model", forest_in, "Model file");
  cate->add_option("--scale", scale, "Penetration increment");
  cate->add_option("--out", ate_out, "Output JSON");
  cate->callback([&] {
    action = [&] { write_json(ate_out, causal_ate(common.load(), forest_in, scale)); };
  });

  // train / sweep, also reachable as `estimator train|sweep`
  std::string model_path = "model.bin", metrics_out = "train_metrics.json";
  std::string vary = "duration_h", values, series, series_values, sweep_out = "sweep.csv";
  std::vector<std::string> fixes;
  auto train_action = [&] {
    action = [&] {
      stage_train(common.load(), data_dir, surges, model_path, metrics_out);
    };
  };
  auto sweep_action = [&] {
    action = [&] {
      need(model_path);
      auto m = estimator::load(model_path);
      estimator::SweepSpec spec;
      spec.vary = vary;
      spec.values = parse_list(values);
      spec.series = series;
      if (!series_values.empty()) spec.series_values = parse_list(series_values);
      for (const auto& f : fixes) {
        auto eq = f.find('=');
        require(eq != std::string::npos, "--fix expects name=value, got '" + f + "'");
        spec.fixed[f.substr(0, eq)] = parse_list(f.substr(eq + 1)).at(0);
      }
      write_sweep_csv(sweep_out, spec, estimator::sweep(m, spec));
    };
  };
  auto setup_train = [&](CLI::App* c) {
    add_common(c, common);
    c->add_option("--data", data_dir, "Dataset directory");
    c->add_option("--in", surges, "surges.csv");
    c->add_option("--out", model_path, "Model file");
    c->add_option("--metrics", metrics_out, "Test metrics JSON");
    c->callback(train_action);
  };
  auto setup_sweep = [&](CLI::App* c) {
    add_common(c, common);
    c->add_option("--model", model_path, "Model file");
    c->add_option("--vary", vary, "Input to vary");
    c->add_option("--values", values, "Comma-separated values")->required();
    c->add_option("--series", series, "Second input, one curve per value");
    c->add_option("--series-values", series_values, "Comma-separated series values");
    c->add_option("--fix", fixes, "name=value held fixed (repeatable)");
    c->add_option("--out", sweep_out, "Output CSV");
    c->callback(sweep_action);
  };
  setup_train(app.add_subcommand("train", "Train the surge estimator"));
  setup_sweep(app.add_subcommand("sweep", "Parametric response table"));
  auto* est_cmd = app.add_subcommand("estimator", "Estimator commands");
  est_cmd->require_subcommand(1);
  setup_train(est_cmd->add_subcommand("train", "Train the surge estimator"));
  setup_sweep(est_cmd->add_subcommand("sweep", "Parametric response table"));

  // project
  auto* proj_cmd = app.add_subcommand("project", "Monte Carlo restoration projection");
  add_common(proj_cmd, common);
  projection::ScenarioConfig sc;
  std::string proj_out = "proj.json", policy_path;
  bool grid_mode = false;
  proj_cmd->add_option("--data", data_dir, "Dataset directory");
  proj_cmd->add_option("--in", surges, "surges.csv");
  proj_cmd->add_option("--model", model_path, "Estimator model");
  proj_cmd->add_option("--trajectory", sc.trajectory, "baseline or policy");
  proj_cmd->add_option("--window", sc.window, "night, morning, afternoon or evening");
  proj_cmd->add_option("--temp-bin", sc.temp_bin, "all, cold, cool, mild or hot");
  proj_cmd->add_option("--duration", sc.duration_h, "Outage duration (h)");
  proj_cmd->add_option("--alpha", sc.alpha, "Restoration scale");
  proj_cmd->add_option("--draws", sc.n_draws, "Monte Carlo draws");
  proj_cmd->add_option("--seed", sc.seed, "Draw seed");
  proj_cmd->add_option("--policy", policy_path, "Mitigation policies (JSON)");
  proj_cmd->add_flag("--grid", grid_mode, "Emit the full table as CSV instead");
  proj_cmd->add_option("--out", proj_out, "Output file");
  proj_cmd->callback([&] {
    action = [&] {
      auto c = common.load();
      if (!policy_path.empty()) c.mitigation = load_policies(policy_path);
      if (grid_mode) {
        stage_project(c, data_dir, surges, model_path, proj_out);
        return;
      }
      need(data_dir + "/events.csv");
      auto ds = synth::read_dataset(data_dir);
      need(surges);
      auto recs = read_records(surges);
      need(model_path);
      auto m = estimator::load(model_path);
      std::optional<mitigation::Setup> setup;
      if (!policy_path.empty())
        setup = mitigation::prepare(c.mitigation, recs, ds.params.der_delay(), c.threads);
      auto r = projection::project(sc, c.projection.windows(), ds, recs, m,
                                   setup ? &*setup : nullptr, c.threads);
      auto stats = [](const projection::Stats& s) {
        return config::json{{"mean_gw", num(s.mean)},     {"lo_gw", num(s.lo)},
                            {"median_gw", num(s.median)}, {"p95_gw", num(s.p95)},
                            {"hi_gw", num(s.hi)},         {"exceedance_prob", num(s.exceedance)},
                            {"mc_se_gw", num(s.mc_se)}};
      };
      config::json out{{"scenario", config::to_json(sc)},
                       {"headroom_gw", num(r.headroom_gw)},
                       {"n_templates", r.n_templates},
                       {"clipped_rates", r.clipped},
                       {"unmitigated", stats(r.unmitigated)}};
      if (r.mitigated) out["mitigated"] = stats(*r.mitigated);
      write_json(proj_out, out);
    };
  });

  // mitigate
  auto* mit_cmd = app.add_subcommand("mitigate", "Per-event mitigation factors");
  add_common(mit_cmd, common);
  std::string run_dir = ".", mit_out = "mitigated.csv";
  mit_cmd->add_option("--policy", policy_path, "Mitigation policies (JSON)");
  mit_cmd->add_option("--in", run_dir, "Directory holding data/ and surges.csv");
  mit_cmd->add_option("--out", mit_out, "Output CSV");
  mit_cmd->callback([&] {
    action = [&] {
      auto c = common.load();
      if (!policy_path.empty()) c.mitigation = load_policies(policy_path);
      const Layout l{run_dir};
      stage_mitigate(c, l.data(), l.surges(), mit_out);
    };
  });

  // report
  auto* rep_cmd = app.add_subcommand("report", "Assemble the restoration risk table");
  add_common(rep_cmd, common);
  std::string rep_out;
  rep_cmd->add_option("--run", run_dir, "Run directory");
  rep_cmd->add_option("--out", rep_out, "Output directory (default <run>/report)");
  rep_cmd->callback([&] {
    action = [&] {
      auto c = common.load();
      const Layout l{run_dir};
      stage_report(c, l.projection_table(), rep_out.empty() ? l.report() : fs::path(rep_out));
      write_manifest(c, l);
    };
  });

  // pipeline
  auto* all_cmd = app.add_subcommand("pipeline", "Run every stage into one directory");
  add_common(all_cmd, common);
  std::string all_out;
  all_cmd->add_option("--out", all_out, "Output directory (default from config)");
  all_cmd->callback([&] {
    action = [&] {
      auto c = common.load();
      run_all(c, all_out.empty() ? fs::path(c.output_dir) : fs::path(all_out));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (action) action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
