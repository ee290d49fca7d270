#pragma once

#include <functional>
#include <limits>

#include "surge/types.hpp"

namespace surge::metrics {

// Truncated-normal inverter reconnection delay on [tau_min, inf), minutes.
struct DerDelayModel {
  double mu = 5.0;
  double sigma = 1.5;
  double tau_min = 1.0;

  void validate() const;
};

// A reconnection-delay density with finite or infinite support. Normal shape
// is renormalized on [lo, hi]; uniform shape is flat on [lo, hi].
struct DelayDensity {
  enum class Shape { TruncatedNormal, Uniform };
  Shape shape = Shape::TruncatedNormal;
  double mu = 0.0;
  double sigma = 1.0;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  static DelayDensity from(const DerDelayModel& m);
  static DelayDensity uniform(double lo, double hi);

  void validate() const;
  double pdf(double tau) const;
  // Probability mass on [a, b] (closed form).
  double mass(double a, double b) const;
};

struct SurgeWindow {
  double length_min = 15.0;  // multiple of 15
  int baseline_days = 7;

  void validate() const;
};

struct DerMissing {
  double kw = 0.0;
  double captured_mass = 0.0;       // mass of the delay density inside the window
  bool no_reconnect_in_window = false;
  int quad_intervals = 0;
};

// Generation profile as a function of minutes after restoration.
using GenerationProfile = std::function<double(double)>;

// Missing DER power over the surge window:
//   C(0) - integral_{lo}^{window} C(tau) p(tau) dtau.
DerMissing der_missing_power(const GenerationProfile& gen, const DelayDensity& density,
                             const SurgeWindow& window);
DerMissing der_missing_power(const GenerationProfile& gen, const DerDelayModel& model,
                             const SurgeWindow& window);

// Generation profile from the trace's der_kw column, anchored at
// `restoration` and held constant across each 15-min interval.
GenerationProfile trace_generation(const EventTrace& trace, Minutes restoration);

struct BaselineInfo {
  double tot = 0.0, ev = 0.0, hp = 0.0;
  std::vector<Minutes> times;
};

// Mean of the same clock-time interval over the `baseline_days` days
// preceding outage start.
BaselineInfo baseline(const OutageEvent& event, const EventTrace& trace,
                      const SurgeWindow& window);
std::vector<Minutes> baseline_times(const OutageEvent& event, const SurgeWindow& window);

SurgeComponents surge_ratios(const OutageEvent& event, const EventTrace& trace,
                             const SurgeWindow& window, const DerDelayModel& der_model);

// Asset counts of the customers interrupted by one event.
struct EventCounts {
  int n_smart_meters = 0;
  int n_ev = 0;
  int n_hp = 0;
  double der_capacity_kw = 0.0;
  double daily_peak_kw = 0.0;
};

PenetrationRates penetration(const EventCounts& counts);

// Event-level counts scale the feeder's counts by the affected share of
// smart meters (rounded to whole submeters).
EventCounts event_counts(const OutageEvent& event, const FeederTemplate& feeder);
PenetrationRates penetration(const OutageEvent& event, const FeederTemplate& feeder);

}  // namespace surge::metrics
