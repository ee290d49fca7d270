#include "surge/records.hpp"

#include "surge/csv.hpp"

namespace surge {

std::vector<SurgeRecord> build_records(const synth::SyntheticDataset& ds,
                                       const metrics::SurgeWindow& window,
                                       const metrics::DerDelayModel& der_model,
                                       unsigned threads) {
  require(ds.traces.size() == ds.events.size(), "dataset traces do not match events");
  std::vector<SurgeRecord> out(ds.events.size());
  parallel_for(ds.events.size(), threads, [&](std::size_t i) {
    const OutageEvent& e = ds.events[i];
    const FeederTemplate& f = ds.feeder(e.feeder_id);
    SurgeRecord& r = out[i];
    r.event_id = e.event_id;
    r.feeder_id = e.feeder_id;
    r.restoration = e.restoration();
    r.duration_h = e.duration_h;
    r.n_customers = e.n_customers_affected;
    r.temp_c = e.weather_at_restoration.temp_c;
    r.ghi = e.weather_at_restoration.ghi;
    r.precipitable_water = e.weather_at_restoration.precipitable_water;
    r.p_tot_base_kw = metrics::baseline(e, ds.traces[i], window).tot;
    r.s = metrics::surge_ratios(e, ds.traces[i], window, der_model);
    r.r = metrics::penetration(e, f);
  });
  return out;
}

namespace {
const std::vector<std::string> kHeader = {
    "event_id", "s_tot",  "s_ev", "s_hp",       "s_der",       "s_oth",
    "r_ev",     "r_hp",   "r_der", "feeder_id", "restoration_time", "hour",
    "duration_h", "n_customers", "temp_c", "ghi", "precipitable_water", "p_tot_base_kw"};
}

void write_records(const std::filesystem::path& path, const std::vector<SurgeRecord>& recs) {
  csv::Table t;
  t.header = kHeader;
  const auto f = fmt_double;
  for (const auto& r : recs)
    t.rows.push_back({std::to_string(r.event_id), f(r.s.s_tot), f(r.s.s_ev), f(r.s.s_hp),
                      f(r.s.s_der), f(r.s.s_oth), f(r.r.r_ev), f(r.r.r_hp), f(r.r.r_der),
                      std::to_string(r.feeder_id), to_iso8601(r.restoration), f(r.hour()),
                      f(r.duration_h), std::to_string(r.n_customers), f(r.temp_c), f(r.ghi),
                      f(r.precipitable_water), f(r.p_tot_base_kw)});
  csv::write(path, t);
}

std::vector<SurgeRecord> read_records(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw Error("missing surge table '" + path.string() + "'");
  csv::Table t = csv::read(path);
  std::vector<SurgeRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    SurgeRecord r;
    r.event_id = static_cast<int>(t.num(i, "event_id"));
    r.feeder_id = static_cast<int>(t.num(i, "feeder_id"));
    r.restoration = parse_iso8601(t.str(i, "restoration_time"));
    r.duration_h = t.num(i, "duration_h");
    r.n_customers = static_cast<int>(t.num(i, "n_customers"));
    r.temp_c = t.num(i, "temp_c");
    r.ghi = t.num(i, "ghi");
    r.precipitable_water = t.num(i, "precipitable_water");
    r.p_tot_base_kw = t.num(i, "p_tot_base_kw");
    r.s = {t.num(i, "s_tot"), t.num(i, "s_ev"), t.num(i, "s_hp"), t.num(i, "s_der"),
           t.num(i, "s_oth")};
    r.r = {t.num(i, "r_ev"), t.num(i, "r_hp"), t.num(i, "r_der")};
    out.push_back(r);
  }
  return out;
}

}  // namespace surge
