#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "surge/common.hpp"
#include "surge/estimator.hpp"
#include "surge/mitigation.hpp"
#include "surge/records.hpp"

namespace surge::projection {

struct Trajectory {
  std::string name;
  double r_ev = 0.0, r_hp = 0.0, r_der = 0.0;

  void validate() const;
  // "baseline" or "policy".
  static Trajectory preset(const std::string& name);
};

struct RestorationWindow {
  std::string name;
  int start_hour = 0, end_hour = 0;  // [start, end), wraps past midnight
  double headroom_gw = 0.0;

  bool contains(double hour) const;
};

struct WindowSet {
  std::vector<RestorationWindow> windows;

  // Night 22-06, Morning 06-12, Afternoon 12-18, Evening 18-22.
  static WindowSet defaults();
  void validate() const;  // positive headroom, ranges partition the day
  const RestorationWindow& find(const std::string& name) const;  // case-insensitive
};

enum class TempBin { All, Cold, Cool, Mild, Hot };
TempBin parse_temp_bin(const std::string& s);
std::string to_string(TempBin b);
bool in_bin(TempBin b, double temp_c);

struct FleetMeans {
  double r_ev = 0.0, r_hp = 0.0, r_der = 0.0;
};
FleetMeans fleet_means(const std::vector<SurgeRecord>& records);

struct Rescaled {
  PenetrationRates r;
  int clipped = 0;  // number of rates clipped to 1
};

// r' = r * target / fleet mean, clipped to [0, 1].
Rescaled rescale_penetration(const PenetrationRates& r, const FleetMeans& fleet,
                             const Trajectory& trajectory);

struct Pick {
  std::size_t index = 0;
  double weight = 1.0;  // < 1 only for a final scaled-down template
};

struct Portfolio {
  std::vector<Pick> picks;
  double base_gw = 0.0;
};

inline constexpr double kPortfolioTolerance = 0.01;

// Draws templates with replacement until the combined baseline lies in
// [alpha S (1 - eps), alpha S]. A template that would overshoot ends the draw:
// it is dropped when the total is already in that band, otherwise scaled down
// so the total equals alpha S.
Portfolio sample_portfolio(const std::vector<double>& base_gw, double alpha, double system_base_gw,
                           Rng& rng);

struct Stats {
  double mean = 0.0, sd = 0.0, lo = 0.0, median = 0.0, p95 = 0.0, hi = 0.0;
  double exceedance = 0.0;
  double mc_se = 0.0;  // sd / sqrt(n)
};

// Order statistics use nearest rank; lo/hi bound the central 95%.
Stats summarize(std::vector<double> draws, double headroom_gw);

struct DrawConfig {
  double alpha = 0.30;
  double system_base_gw = 2.80;
  int n_draws = 5000;
  std::uint64_t seed = 1;

  void validate() const;
};

// Per-draw portfolio surges in GW. Draw k uses its own substream, so any two
// calls with the same seed share portfolios (common random numbers) and every
// surge vector is evaluated on the same picks.
std::vector<std::vector<double>> draw_surges(const std::vector<double>& base_gw,
                                             const std::vector<std::vector<double>>& surge_gw,
                                             const DrawConfig& cfg, unsigned threads = 1);

struct ScenarioConfig {
  std::string trajectory = "policy";
  std::string window = "evening";
  std::string temp_bin = "all";
  double duration_h = 2.0;
  double alpha = 0.30;
  int n_draws = 5000;
  std::uint64_t seed = 1;
  double system_base_gw = 2.80;

  void validate() const;
};

// Historical outage reused as a restoration template.
struct Template {
  std::size_t event = 0;  // index into the dataset
  int event_id = 0;
  double base_gw = 0.0;
  double temp_c = 0.0;
  double hour = 0.0;
  PenetrationRates r;  // counterfactual
  estimator::Targets pred{};
  mitigation::EventFactors mitigation;
  double surge_gw = 0.0, mitigated_gw = 0.0;
};

struct TemplateSet {
  std::vector<Template> templates;
  int clipped = 0;
  std::string stratum;

  std::vector<double> base() const;
  std::vector<double> surge(bool mitigated) const;
};

// Filters to the window and temperature bin, rescales penetrations, sets the
// outage duration and predicts components. Mitigable heads are floored at
// zero before aggregation. Throws when the stratum is empty.
TemplateSet build_templates(const synth::SyntheticDataset& ds, const std::vector<SurgeRecord>& records,
                            const estimator::Model& model, const Trajectory& trajectory,
                            const RestorationWindow& window, TempBin bin, double duration_h,
                            const mitigation::Setup* mitigation, unsigned threads = 1);

struct ProjectionResult {
  ScenarioConfig scenario;
  double headroom_gw = 0.0;
  std::size_t n_templates = 0;
  int clipped = 0;
  Stats unmitigated;
  std::optional<Stats> mitigated;
};

ProjectionResult project(const ScenarioConfig& scenario, const WindowSet& windows,
                         const synth::SyntheticDataset& ds, const std::vector<SurgeRecord>& records,
                         const estimator::Model& model, const mitigation::Setup* mitigation,
                         unsigned threads = 1);

struct GridConfig {
  std::vector<std::string> trajectories{"baseline", "policy"};
  std::vector<double> durations_h{1.0, 2.0, 3.0};
  std::vector<double> alphas{0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
  std::string temp_bin = "all";
  int n_draws = 5000;
  std::uint64_t seed = 1;
  double system_base_gw = 2.80;
};

struct GridRow {
  std::string trajectory, window, temp_bin;
  double duration_h = 0.0, alpha = 0.0, headroom_gw = 0.0;
  bool mitigated = false;
  std::size_t n_templates = 0;
  Stats stats;
};

// Every trajectory x window x duration x alpha cell, unmitigated and (when a
// setup is given) mitigated, under common random numbers across alpha.
std::vector<GridRow> grid(const GridConfig& cfg, const WindowSet& windows,
                          const synth::SyntheticDataset& ds, const std::vector<SurgeRecord>& records,
                          const estimator::Model& model, const mitigation::Setup* mitigation,
                          unsigned threads = 1);

void write_grid_csv(const std::filesystem::path& path, const std::vector<GridRow>& rows);

}  // namespace surge::projection

namespace surge::projection {
template <class V>
void visit_fields(V& v, ScenarioConfig& c) {
  v("trajectory", c.trajectory);
  v("window", c.window);
  v("temp_bin", c.temp_bin);
  v("duration_h", c.duration_h);
  v("alpha", c.alpha);
  v("n_draws", c.n_draws);
  v("seed", c.seed);
  v("system_base_gw", c.system_base_gw);
}
template <class V>
void visit_fields(V& v, RestorationWindow& w) {
  v("name", w.name);
  v("start_hour", w.start_hour);
  v("end_hour", w.end_hour);
  v("headroom_gw", w.headroom_gw);
}
template <class V>
void visit_fields(V& v, GridConfig& c) {
  v("trajectories", c.trajectories);
  v("durations_h", c.durations_h);
  v("alphas", c.alphas);
  v("temp_bin", c.temp_bin);
  v("n_draws", c.n_draws);
  v("seed", c.seed);
  v("system_base_gw", c.system_base_gw);
}
}  // namespace surge::projection
