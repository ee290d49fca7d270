#include "surge/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "surge/quadrature.hpp"

namespace surge::metrics {

void DerDelayModel::validate() const {
  require(std::isfinite(mu), "DER delay mu must be finite");
  require(sigma > 0.0 && std::isfinite(sigma), "DER delay sigma must be > 0");
  require(tau_min >= 0.0 && std::isfinite(tau_min), "DER delay tau_min must be >= 0");
}

DelayDensity DelayDensity::from(const DerDelayModel& m) {
  m.validate();
  DelayDensity d;
  d.shape = Shape::TruncatedNormal;
  d.mu = m.mu;
  d.sigma = m.sigma;
  d.lo = m.tau_min;
  return d;
}

DelayDensity DelayDensity::uniform(double lo, double hi) {
  DelayDensity d;
  d.shape = Shape::Uniform;
  d.lo = lo;
  d.hi = hi;
  d.validate();
  return d;
}

void DelayDensity::validate() const {
  require(lo >= 0.0 && std::isfinite(lo), "delay support lower bound must be >= 0");
  require(hi > lo, "delay support must have positive width");
  if (shape == Shape::Uniform) {
    require(std::isfinite(hi), "uniform delay needs a finite upper bound");
  } else {
    require(sigma > 0.0, "delay sigma must be > 0");
    double z = normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma);
    require(z > 0.0, "truncated normal has no mass on its support");
  }
}

double DelayDensity::pdf(double tau) const {
  if (tau < lo || tau > hi) return 0.0;
  if (shape == Shape::Uniform) return 1.0 / (hi - lo);
  double z = normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma);
  return normal_pdf((tau - mu) / sigma) / (sigma * z);
}

double DelayDensity::mass(double a, double b) const {
  a = std::max(a, lo);
  b = std::min(b, hi);
  if (b <= a) return 0.0;
  if (shape == Shape::Uniform) return (b - a) / (hi - lo);
  double z = normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma);
  return (normal_cdf((b - mu) / sigma) - normal_cdf((a - mu) / sigma)) / z;
}

void SurgeWindow::validate() const {
  require(length_min > 0.0, "surge window length must be > 0");
  require(std::fmod(length_min, static_cast<double>(kStepMinutes)) == 0.0,
          "surge window length must be a multiple of 15 min");
  require(baseline_days >= 1, "baseline needs at least one day");
}

DerMissing der_missing_power(const GenerationProfile& gen, const DelayDensity& density,
                             const SurgeWindow& window) {
  density.validate();
  window.validate();
  DerMissing out;
  const double c0 = gen(0.0);
  const double upper = std::min(window.length_min, density.hi);
  if (density.lo >= window.length_min) {
    out.kw = c0;
    out.no_reconnect_in_window = true;
    return out;
  }
  out.captured_mass = density.mass(density.lo, upper);
  auto integrand = [&](double tau) { return gen(tau) * density.pdf(tau); };

  // Tolerance relative to the integrand scale, sampled on a fixed grid.
  double scale = 0.0;
  for (int i = 0; i <= 16; ++i) {
    double tau = density.lo + (upper - density.lo) * i / 16.0;
    scale = std::max(scale, std::abs(integrand(tau)));
  }
  if (scale == 0.0) {
    out.kw = c0;
    return out;
  }
  auto q = quad::adaptive_simpson(integrand, density.lo, upper, 1e-8 * scale);
  out.kw = c0 - q.value;
  out.quad_intervals = q.intervals;
  return out;
}

DerMissing der_missing_power(const GenerationProfile& gen, const DerDelayModel& model,
                             const SurgeWindow& window) {
  return der_missing_power(gen, DelayDensity::from(model), window);
}

GenerationProfile trace_generation(const EventTrace& trace, Minutes restoration) {
  // Collect contiguous rows from restoration onwards.
  std::vector<double> values;
  for (Minutes t = restoration;; t += kStepMinutes) {
    const TraceRow* r = trace.find(t);
    if (!r) break;
    values.push_back(r->der_kw);
  }
  if (values.empty())
    throw Error("trace has no row at restoration " + to_iso8601(restoration));
  // Interval readings are averages, so each value holds across its interval.
  return [values = std::move(values)](double tau) {
    double x = tau / static_cast<double>(kStepMinutes);
    if (x <= 0.0) return values.front();
    // Left-continuous so the window end still reads the restoration interval.
    auto i = static_cast<std::size_t>(std::ceil(x)) - 1;
    if (i >= values.size()) throw Error("DER generation requested beyond trace coverage");
    return values[i];
  };
}

std::vector<Minutes> baseline_times(const OutageEvent& event, const SurgeWindow& window) {
  const Minutes tau0 = event.restoration();
  const auto len = static_cast<Minutes>(window.length_min);
  int k = 1;
  while (tau0 - k * kDayMinutes + len > event.start) ++k;
  std::vector<Minutes> times;
  for (int d = 0; d < window.baseline_days; ++d) {
    Minutes day0 = tau0 - (k + d) * kDayMinutes;
    for (Minutes off = 0; off < len; off += kStepMinutes) times.push_back(day0 + off);
  }
  return times;
}

BaselineInfo baseline(const OutageEvent& event, const EventTrace& trace,
                      const SurgeWindow& window) {
  BaselineInfo b;
  b.times = baseline_times(event, window);
  for (Minutes t : b.times) {
    const TraceRow* r = trace.find(t);
    if (!r) throw Error("missing baseline trace row at " + to_iso8601(t));
    b.tot += r->total_kw;
    b.ev += r->ev_kw;
    b.hp += r->hp_kw;
  }
  auto n = static_cast<double>(b.times.size());
  b.tot /= n;
  b.ev /= n;
  b.hp /= n;
  return b;
}

SurgeComponents surge_ratios(const OutageEvent& event, const EventTrace& trace,
                             const SurgeWindow& window, const DerDelayModel& der_model) {
  window.validate();
  BaselineInfo base = baseline(event, trace, window);
  if (!(base.tot > 0.0)) throw Error("degenerate baseline");

  const Minutes tau0 = event.restoration();
  double tot = 0.0, ev = 0.0, hp = 0.0;
  int n = 0;
  for (Minutes t = tau0; t < tau0 + static_cast<Minutes>(window.length_min);
       t += kStepMinutes) {
    const TraceRow* r = trace.find(t);
    if (!r) throw Error("missing post-restoration trace row at " + to_iso8601(t));
    tot += r->total_kw;
    ev += r->ev_kw;
    hp += r->hp_kw;
    ++n;
  }
  tot /= n;
  ev /= n;
  hp /= n;

  DerMissing der = der_missing_power(trace_generation(trace, tau0), der_model, window);
  return SurgeComponents::from_parts((tot - base.tot) / base.tot, (ev - base.ev) / base.tot,
                                     (hp - base.hp) / base.tot, der.kw / base.tot);
}

PenetrationRates penetration(const EventCounts& c) {
  if (c.n_smart_meters <= 0) throw Error("zero smart meter count");
  if (!(c.daily_peak_kw > 0.0)) throw Error("zero daily peak load");
  require(c.n_ev >= 0 && c.n_hp >= 0 && c.der_capacity_kw >= 0.0,
          "negative asset counts");
  require(c.n_ev <= c.n_smart_meters && c.n_hp <= c.n_smart_meters,
          "submeter count exceeds smart meter count");
  const double sm = c.n_smart_meters;
  return {c.n_ev / sm, c.n_hp / sm, c.der_capacity_kw / c.daily_peak_kw};
}

EventCounts event_counts(const OutageEvent& event, const FeederTemplate& feeder) {
  if (feeder.n_smart_meters <= 0) throw Error("zero smart meter count");
  require(event.n_customers_affected >= 1 &&
              event.n_customers_affected <= feeder.n_smart_meters,
          "event " + std::to_string(event.event_id) +
              ": affected customers outside [1, feeder meter count]");
  const double share =
      static_cast<double>(event.n_customers_affected) / feeder.n_smart_meters;
  EventCounts c;
  c.n_smart_meters = event.n_customers_affected;
  c.n_ev = static_cast<int>(std::lround(feeder.n_ev_submeters * share));
  c.n_hp = static_cast<int>(std::lround(feeder.n_hp_submeters * share));
  c.der_capacity_kw = feeder.der_capacity_kw * share;
  c.daily_peak_kw = feeder.daily_peak_kw * share;
  return c;
}

PenetrationRates penetration(const OutageEvent& event, const FeederTemplate& feeder) {
  return penetration(event_counts(event, feeder));
}

}  // namespace surge::metrics
