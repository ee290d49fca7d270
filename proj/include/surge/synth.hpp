#pragma once

#include <filesystem>
#include <vector>

#include "surge/metrics.hpp"
#include "surge/types.hpp"

namespace surge::synth {

// Penetration draw r = lo + (hi - lo) * u^shape, u ~ U(0,1). shape > 1
// skews feeders toward low adoption.
struct PenetrationRange {
  double lo = 0.0;
  double hi = 0.0;
  double shape = 1.0;
};

struct OutageSampling {
  double diurnal_weight = 2.5;   // afternoon storm bump; 0 = uniform hours
  double seasonal_weight = 0.4;  // summer bump; 0 = uniform days
  double duration_median_h = 1.5;
  double duration_log_sd = 0.8;
  double duration_max_h = 12.0;

  static OutageSampling uniform() {
    OutageSampling s;
    s.diurnal_weight = 0.0;
    s.seasonal_weight = 0.0;
    return s;
  }
};

// Planted surge physics. Every gain is per affected device (kW) unless noted.
struct GroundTruthParams {
  // EV: deferred-charging propensity peaked over the evening window.
  double ev_evening_start_h = 18.0;
  double ev_evening_end_h = 21.0;
  double ev_peak_propensity = 0.7;
  double ev_midday_propensity = 0.2;
  double ev_base_propensity = 0.08;
  double ev_charger_kw = 7.2;
  double ev_gain_floor = 0.4;       // duration gain at zero duration
  double ev_duration_gain = 0.75;   // added gain reached at saturation
  double ev_saturation_h = 6.0;

  // HP: duty-cycle ramp below the comfort band plus strip heat.
  double hp_comfort_low_c = 15.0;
  double hp_comfort_high_c = 25.0;
  double hp_cold_slope = 0.12;      // kW per degC below comfort
  double hp_cool_slope = 0.04;      // kW per degC above comfort
  double hp_strip_heat_threshold_c = 5.0;
  double hp_strip_kw = 7.0;
  double hp_recovery_h = 2.5;       // duration time constant
  double hp_recovery_cold_h = 0.75; // faster saturation in deep cold

  // DER: generation C_e = capacity * ghi / 1000 * derate, delayed reconnection.
  double der_derate = 0.85;
  double der_delay_mu = 20.0;
  double der_delay_sigma = 5.0;
  double der_delay_tau_min = 5.0;

  // Residual cold load pickup.
  double clpu_gain = 0.25;
  double clpu_decay_const = 2.0;  // h
  double clpu_temp_coef = 0.5;

  double noise_sd = 0.05;

  PenetrationRange ev_penetration{0.03, 0.50, 1.2};
  PenetrationRange hp_penetration{0.03, 0.85, 1.4};
  PenetrationRange der_penetration{0.03, 0.40, 0.8};

  int weather_days = 365;
  OutageSampling sampling;

  void validate() const;
  metrics::DerDelayModel der_delay() const {
    return {der_delay_mu, der_delay_sigma, der_delay_tau_min};
  }
};

// Per-event ground truth recorded before noise injection.
struct PlantedRecord {
  int event_id = 0;
  SurgeComponents truth;     // noise-free
  SurgeComponents observed;  // what the traces encode
  metrics::EventCounts counts;
  double p_tot_base_kw = 0.0;
  int n_deferred_ev = 0;
  double ev_kw_per_deferred = 0.0;
};

struct PlantedEvent {
  PlantedRecord record;
  EventTrace trace;
};

struct SyntheticDataset {
  GroundTruthParams params;
  std::uint64_t seed = 0;
  WeatherTrace weather;
  std::vector<FeederTemplate> feeders;
  std::vector<OutageEvent> events;
  std::vector<EventTrace> traces;     // parallel to events
  std::vector<PlantedRecord> truth;   // parallel to events

  const FeederTemplate& feeder(int feeder_id) const;
};

// Closed-form pieces of the planted physics, exposed for sweeps and tests.
double ev_propensity(const GroundTruthParams& p, double hour);
double ev_duration_gain(const GroundTruthParams& p, double duration_h);
double hp_increment_kw(const GroundTruthParams& p, double temp_c, double duration_h);
double clpu_ratio(const GroundTruthParams& p, double temp_c, double duration_h);
double per_meter_load_kw(double hour);  // typical non-asset load shape

WeatherTrace gen_weather(int days, std::uint64_t seed);
std::vector<FeederTemplate> gen_feeders(int n_feeders, const GroundTruthParams& params,
                                        std::uint64_t seed);

std::vector<OutageEvent> sample_outages(int n, const std::vector<FeederTemplate>& feeders,
                                        const WeatherTrace& weather, std::uint64_t seed,
                                        const OutageSampling& sampling = {});

PlantedEvent plant_surge(const OutageEvent& event, const FeederTemplate& feeder,
                         const WeatherTrace& weather, const GroundTruthParams& params,
                         std::uint64_t seed);

SyntheticDataset gen_city(int n_feeders, int n_events, const GroundTruthParams& params,
                          std::uint64_t seed, unsigned threads = 1);

// Directory layout: events.csv, feeders.csv, weather.csv, traces/<id>.csv,
// ground_truth.csv, params.json.
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds);
SyntheticDataset read_dataset(const std::filesystem::path& dir);

}  // namespace surge::synth

namespace surge::synth {

template <class V>
void visit_fields(V& v, PenetrationRange& r) {
  v("lo", r.lo);
  v("hi", r.hi);
  v("shape", r.shape);
}

template <class V>
void visit_fields(V& v, OutageSampling& s) {
  v("diurnal_weight", s.diurnal_weight);
  v("seasonal_weight", s.seasonal_weight);
  v("duration_median_h", s.duration_median_h);
  v("duration_log_sd", s.duration_log_sd);
  v("duration_max_h", s.duration_max_h);
}

template <class V>
void visit_fields(V& v, GroundTruthParams& p) {
  v("ev_evening_start_h", p.ev_evening_start_h);
  v("ev_evening_end_h", p.ev_evening_end_h);
  v("ev_peak_propensity", p.ev_peak_propensity);
  v("ev_midday_propensity", p.ev_midday_propensity);
  v("ev_base_propensity", p.ev_base_propensity);
  v("ev_charger_kw", p.ev_charger_kw);
  v("ev_gain_floor", p.ev_gain_floor);
  v("ev_duration_gain", p.ev_duration_gain);
  v("ev_saturation_h", p.ev_saturation_h);
  v("hp_comfort_low_c", p.hp_comfort_low_c);
  v("hp_comfort_high_c", p.hp_comfort_high_c);
  v("hp_cold_slope", p.hp_cold_slope);
  v("hp_cool_slope", p.hp_cool_slope);
  v("hp_strip_heat_threshold_c", p.hp_strip_heat_threshold_c);
  v("hp_strip_kw", p.hp_strip_kw);
  v("hp_recovery_h", p.hp_recovery_h);
  v("hp_recovery_cold_h", p.hp_recovery_cold_h);
  v("der_derate", p.der_derate);
  v("der_delay_mu", p.der_delay_mu);
  v("der_delay_sigma", p.der_delay_sigma);
  v("der_delay_tau_min", p.der_delay_tau_min);
  v("clpu_gain", p.clpu_gain);
  v("clpu_decay_const", p.clpu_decay_const);
  v("clpu_temp_coef", p.clpu_temp_coef);
  v("noise_sd", p.noise_sd);
  v("ev_penetration", p.ev_penetration);
  v("hp_penetration", p.hp_penetration);
  v("der_penetration", p.der_penetration);
  v("weather_days", p.weather_days);
  v("sampling", p.sampling);
}

}  // namespace surge::synth
