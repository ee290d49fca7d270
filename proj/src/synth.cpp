#include "surge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "surge/config.hpp"
#include "surge/csv.hpp"

namespace surge::synth {

namespace {

constexpr std::uint64_t kStreamWeather = 1;
constexpr std::uint64_t kStreamFeeders = 2;
constexpr std::uint64_t kStreamOutages = 3;
constexpr std::uint64_t kStreamPlant = 4;

constexpr double kYearDays = 365.25;
constexpr int kPostRows = 9;  // restoration interval plus two hours

double circ_dist(double h, double center) {
  double d = std::fmod(std::abs(h - center), 24.0);
  return std::min(d, 24.0 - d);
}

double bump(double h, double center, double width) {
  double d = circ_dist(h, center) / width;
  return std::exp(-0.5 * d * d);
}

// Typical kW per EV submeter under normal (non-deferred) charging.
double ev_typical_kw(double hour) { return 0.15 + 0.9 * bump(hour, 21.0, 2.5); }

// Typical kW per HP submeter at a given ambient temperature.
double hp_typical_kw(double temp_c) {
  return 0.4 + 0.09 * std::max(0.0, 18.0 - temp_c) + 0.07 * std::max(0.0, temp_c - 24.0);
}

constexpr double kProfileTempC = 12.0;

int slot_of(Minutes t) {
  return static_cast<int>((((t % kDayMinutes) + kDayMinutes) % kDayMinutes) / kStepMinutes);
}

}  // namespace

void GroundTruthParams::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(std::string("ground-truth parameter ") + name + " must be >= 0");
  };
  nonneg(ev_peak_propensity, "ev_peak_propensity");
  nonneg(ev_midday_propensity, "ev_midday_propensity");
  nonneg(ev_base_propensity, "ev_base_propensity");
  nonneg(ev_charger_kw, "ev_charger_kw");
  nonneg(ev_gain_floor, "ev_gain_floor");
  nonneg(ev_duration_gain, "ev_duration_gain");
  nonneg(hp_cold_slope, "hp_cold_slope");
  nonneg(hp_cool_slope, "hp_cool_slope");
  nonneg(hp_strip_kw, "hp_strip_kw");
  nonneg(der_derate, "der_derate");
  nonneg(der_delay_tau_min, "der_delay_tau_min");
  nonneg(clpu_gain, "clpu_gain");
  nonneg(clpu_temp_coef, "clpu_temp_coef");
  nonneg(noise_sd, "noise_sd");
  require(ev_saturation_h > 0.0, "ev_saturation_h must be > 0");
  require(hp_recovery_h > 0.0 && hp_recovery_cold_h > 0.0, "HP recovery constants must be > 0");
  require(hp_recovery_cold_h <= hp_recovery_h,
          "hp_recovery_cold_h must not exceed hp_recovery_h");
  require(clpu_decay_const > 0.0, "clpu_decay_const must be > 0");
  require(hp_comfort_low_c <= hp_comfort_high_c, "comfort band is inverted");
  require(ev_evening_start_h < ev_evening_end_h, "EV evening window is inverted");
  for (const auto* r : {&ev_penetration, &hp_penetration, &der_penetration}) {
    require(r->lo >= 0.0 && r->hi >= r->lo && r->shape > 0.0, "invalid penetration range");
  }
  require(ev_penetration.hi <= 1.0 && hp_penetration.hi <= 1.0,
          "EV/HP penetration cannot exceed 1");
  require(weather_days >= 14, "weather_days must be >= 14");
  require(sampling.duration_median_h > 0.0 && sampling.duration_log_sd >= 0.0 &&
              sampling.duration_max_h >= 0.25,
          "invalid outage duration model");
  require(sampling.diurnal_weight >= 0.0 && sampling.seasonal_weight >= 0.0,
          "outage weights must be >= 0");
  metrics::DelayDensity::from(der_delay()).validate();
}

const FeederTemplate& SyntheticDataset::feeder(int feeder_id) const {
  for (const auto& f : feeders)
    if (f.feeder_id == feeder_id) return f;
  throw Error("unknown feeder " + std::to_string(feeder_id));
}

// ---------------------------------------------------------------------------
// Planted physics
// ---------------------------------------------------------------------------

double ev_propensity(const GroundTruthParams& p, double hour) {
  const double center = 0.5 * (p.ev_evening_start_h + p.ev_evening_end_h);
  const double width = 0.5 * (p.ev_evening_end_h - p.ev_evening_start_h);
  double v = p.ev_base_propensity + p.ev_peak_propensity * bump(hour, center, width) +
             p.ev_midday_propensity * bump(hour, 12.5, 1.5);
  return std::clamp(v, 0.0, 1.0);
}

double ev_duration_gain(const GroundTruthParams& p, double duration_h) {
  return p.ev_gain_floor +
         p.ev_duration_gain * std::min(duration_h, p.ev_saturation_h) / p.ev_saturation_h;
}

double hp_increment_kw(const GroundTruthParams& p, double temp_c, double duration_h) {
  const bool strip = temp_c < p.hp_strip_heat_threshold_c;
  double drive = p.hp_cold_slope * std::max(0.0, p.hp_comfort_low_c - temp_c) +
                 p.hp_cool_slope * std::max(0.0, temp_c - p.hp_comfort_high_c) +
                 (strip ? p.hp_strip_kw : 0.0);
  double tau = strip ? p.hp_recovery_cold_h : p.hp_recovery_h;
  return drive * (1.0 - std::exp(-duration_h / tau));
}

double clpu_ratio(const GroundTruthParams& p, double temp_c, double duration_h) {
  return p.clpu_gain * (1.0 - std::exp(-duration_h / p.clpu_decay_const)) *
         (1.0 + p.clpu_temp_coef * std::abs(temp_c - 18.0) / 10.0);
}

double per_meter_load_kw(double hour) {
  return 0.8 + 0.5 * bump(hour, 7.5, 1.5) + 0.3 * bump(hour, 13.0, 3.0) +
         1.2 * bump(hour, 19.0, 2.2);
}

// ---------------------------------------------------------------------------
// Weather
// ---------------------------------------------------------------------------

WeatherTrace gen_weather(int days, std::uint64_t seed) {
  require(days >= 1, "weather needs at least one day");
  WeatherTrace w;
  w.start = 0;
  const std::size_t n = static_cast<std::size_t>(days) * 96;
  w.temp_c.resize(n);
  w.ghi.resize(n);
  w.precipitable_water.resize(n);
  Rng rng = make_rng(seed, kStreamWeather);

  const double phi_t = std::exp(-15.0 / (60.0 * 36.0));
  const double phi_c = std::exp(-15.0 / (60.0 * 6.0));
  const double phi_w = std::exp(-15.0 / (60.0 * 24.0));
  double anom_t = 0.0, cloud = 0.0, anom_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Minutes t = w.time_at(i);
    CalendarTime c = to_calendar(t);
    double doy = c.day_of_year + hour_of_day(t) / 24.0;
    double h = hour_of_day(t);
    double season = std::sin(2.0 * M_PI * (doy - 80.0) / kYearDays);

    double innov = std::clamp(standard_normal(rng), -4.0, 4.0);
    anom_t = phi_t * anom_t + 4.0 * std::sqrt(1.0 - phi_t * phi_t) * innov;
    cloud = phi_c * cloud + std::sqrt(1.0 - phi_c * phi_c) * standard_normal(rng);
    anom_w = phi_w * anom_w + std::sqrt(1.0 - phi_w * phi_w) * standard_normal(rng);

    w.temp_c[i] = 11.5 - 13.0 * std::cos(2.0 * M_PI * (doy - 20.0) / kYearDays) +
                  5.0 * std::cos(2.0 * M_PI * (h - 15.0) / 24.0) + anom_t;

    double daylength = 12.0 + 3.0 * season;
    double sunrise = 12.5 - 0.5 * daylength;
    double sunset = 12.5 + 0.5 * daylength;
    double ghi = 0.0;
    if (h > sunrise && h < sunset) {
      double elev = std::sin(M_PI * (h - sunrise) / daylength);
      double clear = (725.0 + 250.0 * season) * std::pow(elev, 1.3);
      double k = std::clamp(0.78 + 0.28 * cloud, 0.1, 1.05);
      ghi = std::clamp(clear * k, 0.0, 1400.0);
    }
    w.ghi[i] = ghi;
    w.precipitable_water[i] =
        std::max(0.5, 15.0 - 12.0 * std::cos(2.0 * M_PI * (doy - 20.0) / kYearDays) +
                          4.0 * anom_w);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Feeders and outages
// ---------------------------------------------------------------------------

std::vector<FeederTemplate> gen_feeders(int n_feeders, const GroundTruthParams& params,
                                        std::uint64_t seed) {
  require(n_feeders >= 1, "n_feeders >= 1 required");
  std::vector<FeederTemplate> out;
  out.reserve(static_cast<std::size_t>(n_feeders));
  auto draw = [](Rng& rng, const PenetrationRange& r) {
    return r.lo + (r.hi - r.lo) * std::pow(uniform01(rng), r.shape);
  };
  for (int i = 0; i < n_feeders; ++i) {
    Rng rng = make_rng(seed, kStreamFeeders, static_cast<std::uint64_t>(i));
    FeederTemplate f;
    f.feeder_id = i + 1;
    f.n_smart_meters = 400 + static_cast<int>(uniform01(rng) * 2100.0);
    const double scale = 0.95 + 0.1 * uniform01(rng);
    const double r_ev = draw(rng, params.ev_penetration);
    const double r_hp = draw(rng, params.hp_penetration);
    const double r_der = draw(rng, params.der_penetration);
    f.n_ev_submeters = static_cast<int>(std::lround(r_ev * f.n_smart_meters));
    f.n_hp_submeters = static_cast<int>(std::lround(r_hp * f.n_smart_meters));
    f.base_profile.resize(96);
    for (int s = 0; s < 96; ++s) {
      double h = s / 4.0;
      f.base_profile[static_cast<std::size_t>(s)] =
          f.n_smart_meters * scale * per_meter_load_kw(h) +
          f.n_ev_submeters * ev_typical_kw(h) + f.n_hp_submeters * hp_typical_kw(kProfileTempC);
    }
    f.daily_peak_kw = *std::max_element(f.base_profile.begin(), f.base_profile.end());
    f.der_capacity_kw = r_der * f.daily_peak_kw;
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<OutageEvent> sample_outages(int n, const std::vector<FeederTemplate>& feeders,
                                        const WeatherTrace& weather, std::uint64_t seed,
                                        const OutageSampling& sampling) {
  if (n < 1) throw Error("n \xE2\x89\xA5 1 required");
  if (feeders.empty()) throw Error("empty feeder list");
  const auto max_dur_steps =
      static_cast<std::size_t>(std::ceil(sampling.duration_max_h * 4.0));
  const std::size_t first = 8 * 96;
  require(weather.size() > first + max_dur_steps + kPostRows + 96,
          "weather trace too short for outage sampling");
  const std::size_t last = weather.size() - max_dur_steps - kPostRows - 1;
  const double wmax = (1.0 + sampling.diurnal_weight) * (1.0 + sampling.seasonal_weight);

  std::vector<OutageEvent> events;
  events.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, kStreamOutages, static_cast<std::uint64_t>(i));
    OutageEvent e;
    e.event_id = i + 1;
    const FeederTemplate& f = feeders[uniform_index(rng, feeders.size())];
    e.feeder_id = f.feeder_id;
    for (;;) {
      std::size_t idx = first + uniform_index(rng, last - first);
      Minutes t = weather.time_at(idx);
      double h = hour_of_day(t);
      double doy = to_calendar(t).day_of_year;
      double w = (1.0 + sampling.diurnal_weight * bump(h, 14.0, 3.5)) *
                 (1.0 + sampling.seasonal_weight *
                            std::exp(-0.5 * std::pow((doy - 200.0) / 45.0, 2.0)));
      if (uniform01(rng) * wmax <= w) {
        e.start = t;
        break;
      }
    }
    double d = sampling.duration_median_h *
               std::exp(sampling.duration_log_sd * standard_normal(rng));
    d = std::round(d * 4.0) / 4.0;
    e.duration_h = std::clamp(d, 0.25, sampling.duration_max_h);
    double share = 0.3 + 0.7 * uniform01(rng);
    e.n_customers_affected =
        std::max(1, static_cast<int>(std::lround(share * f.n_smart_meters)));
    std::size_t ri = weather.index(e.restoration());
    e.weather_at_restoration = {weather.temp_c[ri], weather.ghi[ri],
                                weather.precipitable_water[ri]};
    events.push_back(e);
  }
  return events;
}

// ---------------------------------------------------------------------------
// Planting
// ---------------------------------------------------------------------------

PlantedEvent plant_surge(const OutageEvent& event, const FeederTemplate& feeder,
                         const WeatherTrace& weather, const GroundTruthParams& params,
                         std::uint64_t seed) {
  require(event.duration_h > 0.0, "event duration must be > 0");
  const metrics::SurgeWindow window;
  const Minutes tau0 = event.restoration();
  const auto base_times = metrics::baseline_times(event, window);
  for (Minutes t : base_times)
    if (!weather.covers(t))
      throw Error("event " + std::to_string(event.event_id) + " outside weather coverage");
  if (!weather.covers(tau0 + (kPostRows - 1) * kStepMinutes))
    throw Error("event " + std::to_string(event.event_id) + " outside weather coverage");

  Rng rng(seed);
  const metrics::EventCounts counts = metrics::event_counts(event, feeder);
  const double share = static_cast<double>(counts.n_smart_meters) / feeder.n_smart_meters;

  auto other_kw = [&](Minutes t) {
    int s = slot_of(t);
    double h = s / 4.0;
    double feeder_other = feeder.base_profile[static_cast<std::size_t>(s)] -
                          feeder.n_ev_submeters * ev_typical_kw(h) -
                          feeder.n_hp_submeters * hp_typical_kw(kProfileTempC);
    return feeder_other * share;
  };
  auto der_kw = [&](Minutes t) {
    return counts.der_capacity_kw * weather.ghi[weather.index(t)] / 1000.0 * params.der_derate;
  };
  auto typical_row = [&](Minutes t, double day_factor) {
    TraceRow r;
    r.t = t;
    double h = hour_of_day(t);
    r.ev_kw = counts.n_ev * ev_typical_kw(h) * day_factor;
    r.hp_kw = counts.n_hp * hp_typical_kw(weather.temp_c[weather.index(t)]);
    r.der_kw = der_kw(t);
    r.total_kw = other_kw(t) * day_factor + r.ev_kw + r.hp_kw - r.der_kw;
    return r;
  };

  PlantedEvent out;
  EventTrace& trace = out.trace;
  for (Minutes t : base_times) {
    double day_factor = 1.0 + 0.03 * standard_normal(rng);
    trace.rows.push_back(typical_row(t, day_factor));
  }
  for (int k = 0; k < kPostRows; ++k) trace.rows.push_back(typical_row(tau0 + k * kStepMinutes, 1.0));
  std::sort(trace.rows.begin(), trace.rows.end(),
            [](const TraceRow& a, const TraceRow& b) { return a.t < b.t; });

  const metrics::BaselineInfo base = metrics::baseline(event, trace, window);
  if (!(base.tot > 0.0)) throw Error("degenerate baseline");

  // Planted increments.
  const double hour = hour_of_day(tau0);
  const double temp = event.weather_at_restoration.temp_c;
  const double p_defer = ev_propensity(params, hour);
  int n_def = 0;
  for (int m = 0; m < counts.n_ev; ++m) n_def += uniform01(rng) < p_defer ? 1 : 0;
  const double kw_per_def = params.ev_charger_kw * ev_duration_gain(params, event.duration_h);

  const auto delay = params.der_delay();
  const double der_missing =
      metrics::der_missing_power(metrics::trace_generation(trace, tau0), delay, window).kw;

  SurgeComponents truth;
  truth.s_ev = n_def * kw_per_def / base.tot;
  truth.s_hp = counts.n_hp * hp_increment_kw(params, temp, event.duration_h) / base.tot;
  truth.s_der = der_missing / base.tot;
  truth.s_oth = clpu_ratio(params, temp, event.duration_h);
  truth.s_tot = truth.s_ev + truth.s_hp + truth.s_der + truth.s_oth;

  // Noise on each component ratio; the DER share enters through a constant
  // shift of the post-restoration generation rows.
  double e_ev = 0.0, e_hp = 0.0, e_oth = 0.0, e_der = 0.0;
  if (params.noise_sd > 0.0) {
    e_ev = params.noise_sd * standard_normal(rng);
    e_hp = params.noise_sd * standard_normal(rng);
    e_oth = params.noise_sd * standard_normal(rng);
    e_der = params.noise_sd * standard_normal(rng);
    const auto density = metrics::DelayDensity::from(delay);
    const double q = density.mass(density.lo, window.length_min);
    const double shift = e_der * base.tot / (1.0 - q);
    for (auto& r : trace.rows)
      if (r.t >= tau0) r.der_kw += shift;
  }
  const double s_ev = truth.s_ev + e_ev;
  const double s_hp = truth.s_hp + e_hp;
  const double s_oth = truth.s_oth + e_oth;
  const double s_der = truth.s_der + e_der;
  const double s_tot = s_ev + s_hp + s_oth + s_der;

  for (auto& r : trace.rows) {
    if (r.t < tau0) continue;
    const auto k = static_cast<int>((r.t - tau0) / kStepMinutes);
    if (k == 0) {
      r.total_kw = base.tot * (1.0 + s_tot);
      r.ev_kw = base.ev + s_ev * base.tot;
      r.hp_kw = base.hp + s_hp * base.tot;
    } else {
      const double decay = std::pow(0.6, k);
      r.total_kw += s_tot * base.tot * decay;
      r.ev_kw += s_ev * base.tot * decay;
      r.hp_kw += s_hp * base.tot * decay;
    }
  }

  PlantedRecord& rec = out.record;
  rec.event_id = event.event_id;
  rec.truth = truth;
  rec.observed = metrics::surge_ratios(event, trace, window, delay);
  rec.counts = counts;
  rec.p_tot_base_kw = base.tot;
  rec.n_deferred_ev = n_def;
  rec.ev_kw_per_deferred = kw_per_def;
  return out;
}

SyntheticDataset gen_city(int n_feeders, int n_events, const GroundTruthParams& params,
                          std::uint64_t seed, unsigned threads) {
  require(n_feeders >= 1, "n_feeders >= 1 required");
  require(n_events >= 1, "n_events >= 1 required");
  params.validate();
  SyntheticDataset ds;
  ds.params = params;
  ds.seed = seed;
  ds.weather = gen_weather(params.weather_days, seed);
  ds.feeders = gen_feeders(n_feeders, params, seed);
  ds.events = sample_outages(n_events, ds.feeders, ds.weather, seed, params.sampling);
  ds.traces.resize(ds.events.size());
  ds.truth.resize(ds.events.size());
  parallel_for(ds.events.size(), threads, [&](std::size_t i) {
    const OutageEvent& e = ds.events[i];
    PlantedEvent p = plant_surge(e, ds.feeders[static_cast<std::size_t>(e.feeder_id - 1)],
                                 ds.weather, params,
                                 substream_seed(seed, kStreamPlant, static_cast<std::uint64_t>(i)));
    ds.traces[i] = std::move(p.trace);
    ds.truth[i] = p.record;
  });
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "traces");
  const auto f = fmt_double;

  csv::Table ev;
  ev.header = {"event_id", "feeder_id", "start_time", "duration_h", "n_customers_affected",
               "restoration_time", "temp_c", "ghi", "precipitable_water"};
  for (const auto& e : ds.events)
    ev.rows.push_back({std::to_string(e.event_id), std::to_string(e.feeder_id),
                       to_iso8601(e.start), f(e.duration_h),
                       std::to_string(e.n_customers_affected), to_iso8601(e.restoration()),
                       f(e.weather_at_restoration.temp_c), f(e.weather_at_restoration.ghi),
                       f(e.weather_at_restoration.precipitable_water)});
  csv::write(dir / "events.csv", ev);

  csv::Table fd;
  fd.header = {"feeder_id", "n_smart_meters", "n_ev_submeters", "n_hp_submeters",
               "der_capacity_kw", "daily_peak_kw"};
  for (int s = 0; s < 96; ++s) fd.header.push_back("p" + std::to_string(s));
  for (const auto& fe : ds.feeders) {
    std::vector<std::string> row{std::to_string(fe.feeder_id), std::to_string(fe.n_smart_meters),
                                 std::to_string(fe.n_ev_submeters),
                                 std::to_string(fe.n_hp_submeters), f(fe.der_capacity_kw),
                                 f(fe.daily_peak_kw)};
    for (double v : fe.base_profile) row.push_back(f(v));
    fd.rows.push_back(std::move(row));
  }
  csv::write(dir / "feeders.csv", fd);

  csv::Table wt;
  wt.header = {"timestamp", "temp_c", "ghi", "precipitable_water"};
  for (std::size_t i = 0; i < ds.weather.size(); ++i)
    wt.rows.push_back({to_iso8601(ds.weather.time_at(i)), f(ds.weather.temp_c[i]),
                       f(ds.weather.ghi[i]), f(ds.weather.precipitable_water[i])});
  csv::write(dir / "weather.csv", wt);

  for (std::size_t i = 0; i < ds.events.size(); ++i) {
    csv::Table tr;
    tr.header = {"timestamp", "total_kw", "ev_kw", "hp_kw", "der_kw"};
    for (const auto& r : ds.traces[i].rows)
      tr.rows.push_back({to_iso8601(r.t), f(r.total_kw), f(r.ev_kw), f(r.hp_kw), f(r.der_kw)});
    csv::write(dir / "traces" / (std::to_string(ds.events[i].event_id) + ".csv"), tr);
  }

  csv::Table gt;
  gt.header = {"event_id", "s_tot", "s_ev", "s_hp", "s_der", "s_oth",
               "n_smart_meters", "n_ev", "n_hp", "der_capacity_kw", "daily_peak_kw",
               "p_tot_base_kw", "n_deferred_ev", "ev_kw_per_deferred"};
  for (const auto& t : ds.truth)
    gt.rows.push_back({std::to_string(t.event_id), f(t.truth.s_tot), f(t.truth.s_ev),
                       f(t.truth.s_hp), f(t.truth.s_der), f(t.truth.s_oth),
                       std::to_string(t.counts.n_smart_meters), std::to_string(t.counts.n_ev),
                       std::to_string(t.counts.n_hp), f(t.counts.der_capacity_kw),
                       f(t.counts.daily_peak_kw), f(t.p_tot_base_kw),
                       std::to_string(t.n_deferred_ev), f(t.ev_kw_per_deferred)});
  csv::write(dir / "ground_truth.csv", gt);

  config::json meta;
  meta["seed"] = ds.seed;
  meta["params"] = config::to_json(ds.params);
  std::ofstream(dir / "params.json", std::ios::binary) << meta.dump(2) << "\n";
}

SyntheticDataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* name : {"events.csv", "feeders.csv", "weather.csv", "ground_truth.csv",
                           "params.json"})
    if (!fs::exists(dir / name))
      throw Error("missing dataset file '" + (dir / name).string() + "'");

  SyntheticDataset ds;
  {
    std::ifstream in(dir / "params.json");
    config::json meta = config::json::parse(in);
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.params = config::from_json<GroundTruthParams>(meta.at("params"), "/params");
  }

  csv::Table wt = csv::read(dir / "weather.csv");
  for (std::size_t i = 0; i < wt.rows.size(); ++i) {
    Minutes t = parse_iso8601(wt.str(i, "timestamp"));
    if (i == 0) ds.weather.start = t;
    else if (t != ds.weather.time_at(i)) throw Error("weather.csv is not on a 15-min grid");
    ds.weather.temp_c.push_back(wt.num(i, "temp_c"));
    ds.weather.ghi.push_back(wt.num(i, "ghi"));
    ds.weather.precipitable_water.push_back(wt.num(i, "precipitable_water"));
  }

  csv::Table fd = csv::read(dir / "feeders.csv");
  for (std::size_t i = 0; i < fd.rows.size(); ++i) {
    FeederTemplate fe;
    fe.feeder_id = static_cast<int>(fd.num(i, "feeder_id"));
    fe.n_smart_meters = static_cast<int>(fd.num(i, "n_smart_meters"));
    fe.n_ev_submeters = static_cast<int>(fd.num(i, "n_ev_submeters"));
    fe.n_hp_submeters = static_cast<int>(fd.num(i, "n_hp_submeters"));
    fe.der_capacity_kw = fd.num(i, "der_capacity_kw");
    fe.daily_peak_kw = fd.num(i, "daily_peak_kw");
    for (int s = 0; s < 96; ++s) fe.base_profile.push_back(fd.num(i, "p" + std::to_string(s)));
    ds.feeders.push_back(std::move(fe));
  }

  csv::Table ev = csv::read(dir / "events.csv");
  for (std::size_t i = 0; i < ev.rows.size(); ++i) {
    OutageEvent e;
    e.event_id = static_cast<int>(ev.num(i, "event_id"));
    e.feeder_id = static_cast<int>(ev.num(i, "feeder_id"));
    e.start = parse_iso8601(ev.str(i, "start_time"));
    e.duration_h = ev.num(i, "duration_h");
    e.n_customers_affected = static_cast<int>(ev.num(i, "n_customers_affected"));
    e.weather_at_restoration = {ev.num(i, "temp_c"), ev.num(i, "ghi"),
                                ev.num(i, "precipitable_water")};
    ds.events.push_back(e);

    const fs::path tp = dir / "traces" / (std::to_string(e.event_id) + ".csv");
    if (!fs::exists(tp)) throw Error("missing trace file '" + tp.string() + "'");
    csv::Table tr = csv::read(tp);
    EventTrace trace;
    for (std::size_t r = 0; r < tr.rows.size(); ++r)
      trace.rows.push_back({parse_iso8601(tr.str(r, "timestamp")), tr.num(r, "total_kw"),
                            tr.num(r, "ev_kw"), tr.num(r, "hp_kw"), tr.num(r, "der_kw")});
    ds.traces.push_back(std::move(trace));
  }

  csv::Table gt = csv::read(dir / "ground_truth.csv");
  for (std::size_t i = 0; i < gt.rows.size(); ++i) {
    PlantedRecord t;
    t.event_id = static_cast<int>(gt.num(i, "event_id"));
    t.truth = {gt.num(i, "s_tot"), gt.num(i, "s_ev"), gt.num(i, "s_hp"), gt.num(i, "s_der"),
               gt.num(i, "s_oth")};
    t.counts = {static_cast<int>(gt.num(i, "n_smart_meters")),
                static_cast<int>(gt.num(i, "n_ev")), static_cast<int>(gt.num(i, "n_hp")),
                gt.num(i, "der_capacity_kw"), gt.num(i, "daily_peak_kw")};
    t.p_tot_base_kw = gt.num(i, "p_tot_base_kw");
    t.n_deferred_ev = static_cast<int>(gt.num(i, "n_deferred_ev"));
    t.ev_kw_per_deferred = gt.num(i, "ev_kw_per_deferred");
    ds.truth.push_back(t);
  }
  return ds;
}

}  // namespace surge::synth
