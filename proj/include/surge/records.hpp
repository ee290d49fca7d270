#pragma once

#include <filesystem>
#include <vector>

#include "surge/metrics.hpp"
#include "surge/synth.hpp"

namespace surge {

// One row of surges.csv: measured components, penetration and covariates.
struct SurgeRecord {
  int event_id = 0;
  int feeder_id = 0;
  Minutes restoration = 0;
  double duration_h = 0.0;
  int n_customers = 0;
  double temp_c = 0.0;
  double ghi = 0.0;
  double precipitable_water = 0.0;
  double p_tot_base_kw = 0.0;
  SurgeComponents s;
  PenetrationRates r;

  double hour() const { return hour_of_day(restoration); }
};

std::vector<SurgeRecord> build_records(const synth::SyntheticDataset& ds,
                                       const metrics::SurgeWindow& window,
                                       const metrics::DerDelayModel& der_model,
                                       unsigned threads = 1);

void write_records(const std::filesystem::path& path, const std::vector<SurgeRecord>& recs);
std::vector<SurgeRecord> read_records(const std::filesystem::path& path);

}  // namespace surge
