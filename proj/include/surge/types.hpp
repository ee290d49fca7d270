#pragma once

#include <optional>
#include <string>
#include <vector>

#include "surge/common.hpp"

namespace surge {

// Shared weather on a fixed 15-minute grid.
struct WeatherTrace {
  Minutes start = 0;
  std::vector<double> temp_c;
  std::vector<double> ghi;                 // W/m^2
  std::vector<double> precipitable_water;  // mm

  std::size_t size() const { return temp_c.size(); }
  Minutes end() const { return start + static_cast<Minutes>(size()) * kStepMinutes; }
  Minutes time_at(std::size_t i) const {
    return start + static_cast<Minutes>(i) * kStepMinutes;
  }
  bool covers(Minutes t) const { return t >= start && t < end(); }
  // Index of the grid step containing t; throws when outside coverage.
  std::size_t index(Minutes t) const;
};

struct WeatherSample {
  double temp_c = 0.0;
  double ghi = 0.0;
  double precipitable_water = 0.0;
};

struct FeederTemplate {
  int feeder_id = 0;
  int n_smart_meters = 0;
  int n_ev_submeters = 0;
  int n_hp_submeters = 0;
  double der_capacity_kw = 0.0;
  double daily_peak_kw = 0.0;
  std::vector<double> base_profile;  // 96 slots of 15 min, kW

  void validate() const;
};

struct OutageEvent {
  int event_id = 0;
  int feeder_id = 0;
  Minutes start = 0;
  double duration_h = 0.0;
  int n_customers_affected = 0;
  WeatherSample weather_at_restoration;

  Minutes restoration() const {
    return start + static_cast<Minutes>(duration_h * 60.0 + 0.5);
  }
};

struct SurgeComponents {
  double s_tot = 0.0;
  double s_ev = 0.0;
  double s_hp = 0.0;
  double s_der = 0.0;
  double s_oth = 0.0;

  // Rebuilds s_oth so that the decomposition identity holds.
  static SurgeComponents from_parts(double s_tot, double s_ev, double s_hp, double s_der) {
    return {s_tot, s_ev, s_hp, s_der, s_tot - s_ev - s_hp - s_der};
  }
};

struct PenetrationRates {
  double r_ev = 0.0;
  double r_hp = 0.0;
  double r_der = 0.0;
};

// One 15-minute metered interval, labelled by its start time.
struct TraceRow {
  Minutes t = 0;
  double total_kw = 0.0;
  double ev_kw = 0.0;
  double hp_kw = 0.0;
  double der_kw = 0.0;  // available DER generation C_e(t)
};

struct EventTrace {
  std::vector<TraceRow> rows;  // strictly increasing t

  const TraceRow* find(Minutes t) const;
};

}  // namespace surge
