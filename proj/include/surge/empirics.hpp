#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "surge/records.hpp"

namespace surge::empirics {

enum class Asset { Ev, Hp, Der };

Asset parse_asset(const std::string& name);
const char* asset_name(Asset a);

// One event reduced to what the band analyses need.
struct Obs {
  double r = 0.0;  // penetration of the analysed asset
  double s = 0.0;  // surge ratio of the analysed asset
  double hour = 0.0;
  double duration_h = 0.0;
  double temp_c = 0.0;
  double ghi = 0.0;
};

// Analyses the asset's own component ratio unless `total` is set.
std::vector<Obs> observations(const std::vector<SurgeRecord>& recs, Asset asset,
                              bool total = false);

// Four contiguous bands given by five strictly increasing edges (fractions).
// Bands are [lo, hi) except the last, which is closed.
struct PenetrationBands {
  Asset asset = Asset::Ev;
  std::vector<double> edges;

  static PenetrationBands defaults(Asset asset);
  void validate() const;
  std::size_t count() const { return edges.size() - 1; }
  int band_of(double r) const;  // -1 when outside every band
  std::string label(std::size_t b) const;
};

struct BandStat {
  std::size_t band = 0;
  std::size_t count = 0;
  double median = 0.0;
  double p95 = 0.0;
  bool empty = true;
};

std::vector<BandStat> band_stats(const std::vector<Obs>& obs, const PenetrationBands& bands);

struct ExceedancePoint {
  double r_lo = 0.0, r_hi = 0.0;
  std::size_t n = 0, k = 0;
  double p = 0.0;
  double ci_lo = 0.0, ci_hi = 1.0;  // Wilson 95%
  bool empty = true;
};

// Binned P(s > threshold | r) over consecutive grid cells [g_i, g_{i+1}).
std::vector<ExceedancePoint> exceedance_curve(const std::vector<Obs>& obs, double threshold,
                                              const std::vector<double>& grid);

struct Wilson {
  double lo, hi;
};
Wilson wilson_interval(std::size_t k, std::size_t n, double z = 1.959963984540054);

// Pooled q-th percentile of the surge values (nearest rank).
double pooled_threshold(const std::vector<Obs>& obs, double q);

// Named event subsets used for conditioned band comparisons.
struct SubsetFilter {
  std::string name = "all";
  std::function<bool(const Obs&)> keep;  // empty keeps everything
  std::vector<double> ghi_bins;          // edges; non-empty enables matched pairs

  static SubsetFilter all();
  // all, ev_night_long, ev_day_long, hp_cold_long, hp_hot_long, der_daytime,
  // der_matched_irradiance
  static SubsetFilter preset(const std::string& name);
  static std::vector<std::string> preset_names();
  bool accepts(const Obs& o) const { return !keep || keep(o); }
};

struct BootstrapResult {
  std::vector<double> estimates;
  double mean = 0.0;
  std::size_t lo_band = 0, hi_band = 0;
  std::string filter;
};

struct BootstrapConfig {
  int iterations = 1000;
  int pair_draws = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

BootstrapResult bootstrap_band_compare(const std::vector<Obs>& obs,
                                       const PenetrationBands& bands, std::size_t lo_band,
                                       std::size_t hi_band, const SubsetFilter& filter,
                                       const BootstrapConfig& cfg);

struct MannWhitney {
  double u = 0.0;  // count of (hi > lo) pairs, ties 0.5
  double z = 0.0;
  double p = 1.0;  // one-sided, alternative: hi larger
};

MannWhitney mann_whitney(const std::vector<double>& lo, const std::vector<double>& hi);

struct AdjacentTest {
  std::size_t lo_band = 0, hi_band = 0;
  std::size_t n_lo = 0, n_hi = 0;
  MannWhitney result;
  bool underpowered = false;
};

std::vector<AdjacentTest> adjacent_band_test(const std::vector<Obs>& obs,
                                             const PenetrationBands& bands,
                                             std::size_t min_per_band = 20);

struct ThresholdRow {
  double q = 0.0;
  double threshold = 0.0;
  bool degenerate = false;  // no pooled value lies strictly below the threshold
  std::vector<double> below;  // per band P(s < threshold)
  std::vector<std::size_t> counts;
};

std::vector<ThresholdRow> percentile_threshold_analysis(const std::vector<Obs>& obs,
                                                        const PenetrationBands& bands,
                                                        const std::vector<double>& qs = {70, 80,
                                                                                         90});

// Kolmogorov-Smirnov distance of a sample from U(0,1) and its asymptotic p-value.
struct KsResult {
  double d = 0.0;
  double p = 1.0;
};
KsResult ks_uniform(std::vector<double> sample);

}  // namespace surge::empirics
