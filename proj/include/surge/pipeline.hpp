#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "surge/causal.hpp"
#include "surge/config.hpp"
#include "surge/empirics.hpp"
#include "surge/estimator.hpp"
#include "surge/mitigation.hpp"
#include "surge/projection.hpp"

namespace surge::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";

struct SynthStage {
  int n_feeders = 100;
  int n_events = 10000;
  std::uint64_t seed = 7;
  synth::GroundTruthParams params;
};

struct EmpiricsStage {
  int bootstrap_iterations = 1000;
  int bootstrap_pair_draws = 2000;
  std::uint64_t seed = 11;
  double curve_quantile = 90.0;  // pooled percentile used as the exceedance threshold
  int curve_bins = 20;
  std::vector<double> threshold_quantiles{70.0, 80.0, 90.0};
};

struct CausalStage {
  causal::ForestConfig forest;
  double scale = 0.1;
  std::vector<std::string> assets{"ev", "hp", "der"};
};

struct EstimatorStage {
  estimator::ModelConfig model;
  estimator::TrainConfig train;
};

struct ProjectionStage {
  projection::GridConfig grid;
  std::map<std::string, double> headroom_gw{
      {"night", 1.20}, {"morning", 0.90}, {"afternoon", 0.80}, {"evening", 0.50}};
  bool mitigated = true;

  projection::WindowSet windows() const;
};

struct RunConfig {
  std::string output_dir = "out";
  unsigned threads = 1;
  SynthStage synth;
  metrics::SurgeWindow window;
  EmpiricsStage empirics;
  CausalStage causal;
  EstimatorStage estimator;
  ProjectionStage projection;
  mitigation::Policies mitigation;

  void validate() const;
};

// Strict parse: unknown keys raise ConfigError with the JSON pointer.
RunConfig parse_config(const config::json& j);
RunConfig load_config(const fs::path& path);
// Policy file: {"ev": {...}, "hp": {...}, "der": {...}} plus charger settings.
mitigation::Policies load_policies(const fs::path& path);

// Hash of the semantic fields (everything except output_dir and threads).
std::uint64_t config_hash(const RunConfig& cfg);
std::string hex64(std::uint64_t v);

// Fixed artifact layout under the output directory.
struct Layout {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path surges() const { return root / "surges.csv"; }
  fs::path empirics() const { return root / "empirics"; }
  fs::path causal() const { return root / "causal"; }
  fs::path model() const { return root / "model.bin"; }
  fs::path train_metrics() const { return root / "train_metrics.json"; }
  fs::path sweeps() const { return root / "sweeps"; }
  fs::path projection_table() const { return root / "projection_table.csv"; }
  fs::path mitigated() const { return root / "mitigated.csv"; }
  fs::path report() const { return root / "report"; }
  fs::path manifest() const { return root / "manifest.json"; }
};

// Throws naming the missing file.
void need(const fs::path& path);

void write_json(const fs::path& path, const config::json& j);
// Number rounded to 9 significant digits; non-finite values become null.
config::json num(double v);

void stage_synth(const RunConfig& cfg, const fs::path& out_dir);
void stage_metrics(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_csv);
void stage_empirics(const RunConfig& cfg, const fs::path& surges_csv, const fs::path& out_dir);
void causal_fit(const RunConfig& cfg, const fs::path& surges_csv, empirics::Asset asset,
                const fs::path& out_model);
config::json causal_ate(const RunConfig& cfg, const fs::path& model, double scale);
void stage_causal(const RunConfig& cfg, const fs::path& surges_csv, const fs::path& out_dir);
estimator::TrainReport stage_train(const RunConfig& cfg, const fs::path& data_dir,
                                   const fs::path& surges_csv, const fs::path& out_model,
                                   const fs::path& out_metrics);
void write_sweep_csv(const fs::path& path, const estimator::SweepSpec& spec,
                     const std::vector<estimator::SweepRow>& rows);
// Fixed per-asset response tables written by the pipeline.
std::vector<std::pair<std::string, estimator::SweepSpec>> default_sweeps();
void stage_sweep(const RunConfig& cfg, const fs::path& model, const fs::path& out_dir);
void stage_project(const RunConfig& cfg, const fs::path& data_dir, const fs::path& surges_csv,
                   const fs::path& model, const fs::path& out_csv);
void stage_mitigate(const RunConfig& cfg, const fs::path& data_dir, const fs::path& surges_csv,
                    const fs::path& out_csv);
void stage_report(const RunConfig& cfg, const fs::path& projection_csv, const fs::path& out_dir);
void write_manifest(const RunConfig& cfg, const Layout& layout);

// synth -> metrics -> empirics -> causal -> train -> sweep -> project ->
// mitigate -> report, then the manifest.
void run_all(const RunConfig& cfg, const fs::path& out_dir);

}  // namespace surge::pipeline

namespace surge::pipeline {
template <class V>
void visit_fields(V& v, SynthStage& s) {
  v("n_feeders", s.n_feeders);
  v("n_events", s.n_events);
  v("seed", s.seed);
  v("params", s.params);
}
template <class V>
void visit_fields(V& v, EmpiricsStage& s) {
  v("bootstrap_iterations", s.bootstrap_iterations);
  v("bootstrap_pair_draws", s.bootstrap_pair_draws);
  v("seed", s.seed);
  v("curve_quantile", s.curve_quantile);
  v("curve_bins", s.curve_bins);
  v("threshold_quantiles", s.threshold_quantiles);
}
template <class V>
void visit_fields(V& v, CausalStage& s) {
  v("forest", s.forest);
  v("scale", s.scale);
  v("assets", s.assets);
}
template <class V>
void visit_fields(V& v, EstimatorStage& s) {
  v("model", s.model);
  v("train", s.train);
}
template <class V>
void visit_fields(V& v, ProjectionStage& s) {
  v("grid", s.grid);
  v("headroom_gw", s.headroom_gw);
  v("mitigated", s.mitigated);
}
template <class V>
void visit_fields(V& v, RunConfig& c) {
  v("output_dir", c.output_dir);
  v("threads", c.threads);
  v("synth", c.synth);
  v("window", c.window);
  v("empirics", c.empirics);
  v("causal", c.causal);
  v("estimator", c.estimator);
  v("projection", c.projection);
  v("mitigation", c.mitigation);
}
}  // namespace surge::pipeline

namespace surge::metrics {
template <class V>
void visit_fields(V& v, SurgeWindow& w) {
  v("length_min", w.length_min);
  v("baseline_days", w.baseline_days);
}
}  // namespace surge::metrics
