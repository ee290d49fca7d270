#include "surge/types.hpp"

#include <algorithm>

namespace surge {

std::size_t WeatherTrace::index(Minutes t) const {
  if (!covers(t)) throw Error("time " + to_iso8601(t) + " outside weather coverage");
  return static_cast<std::size_t>((t - start) / kStepMinutes);
}

void FeederTemplate::validate() const {
  require(n_smart_meters >= 0 && n_ev_submeters >= 0 && n_hp_submeters >= 0,
          "feeder " + std::to_string(feeder_id) + ": negative meter counts");
  require(n_ev_submeters <= n_smart_meters && n_hp_submeters <= n_smart_meters,
          "feeder " + std::to_string(feeder_id) + ": submeters exceed smart meters");
  require(der_capacity_kw >= 0.0, "feeder " + std::to_string(feeder_id) + ": negative DER");
  if (!base_profile.empty()) {
    double pk = *std::max_element(base_profile.begin(), base_profile.end());
    require(pk == daily_peak_kw,
            "feeder " + std::to_string(feeder_id) + ": daily peak != max(base profile)");
  }
}

const TraceRow* EventTrace::find(Minutes t) const {
  auto it = std::lower_bound(rows.begin(), rows.end(), t,
                             [](const TraceRow& r, Minutes v) { return r.t < v; });
  if (it == rows.end() || it->t != t) return nullptr;
  return &*it;
}

}  // namespace surge
