#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "surge/metrics.hpp"
#include "surge/records.hpp"
#include "surge/types.hpp"

namespace surge::mitigation {

// Staggered EV restart: each charger resumes after a delay ~ U[t1, t2] min.
struct EvRestartPolicy {
  double t1 = 0.0;
  double t2 = 15.0;
  int K = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

// One charger's post-restoration draw, piecewise constant on `step_min`
// intervals starting at restoration.
struct ChargerProfile {
  double step_min = 1.0;
  std::vector<double> kw;

  double span() const { return step_min * static_cast<double>(kw.size()); }
  // Integral of the profile over [0, x] minutes.
  double cumulative(double x) const;
};

struct GammaEv {
  double gamma = 0.0;
  double p_ev = 0.0, p_ev_mitigated = 0.0;  // window-mean kW
  bool zero_load = false;
};

GammaEv gamma_ev(const std::vector<ChargerProfile>& profiles, const EvRestartPolicy& policy,
                 unsigned threads = 1);

// f_r(dT): one line per regime, breakpoints at -5 and +5 C.
struct PiecewiseRegimeModel {
  struct Line {
    double beta = 0.0, alpha = 0.0;
    int n = 0;
    bool underpowered = false;  // < min points, pooled coefficients used
  };
  std::array<Line, 3> regimes;  // cold, mild, hot

  static int regime_of(double dT);
  double eval(double dT) const;
};

struct RegimePoint {
  double dT = 0.0;
  double delta_hp = 0.0;
};

PiecewiseRegimeModel fit_piecewise(const std::vector<RegimePoint>& points, int min_points = 10);

struct ThermostatPolicy {
  double offset_c = 2.0;      // magnitude moved toward neutral
  double t_set_c = 20.0;      // indoor setpoint defining dT = T_out - T_set

  void validate() const;
  // Signed offset for a given dT: toward zero, never past it.
  double dT_set(double dT) const;
};

struct GammaHp {
  double gamma = 0.0;
  bool clamped = false;
  bool degenerate = false;  // f_r(dT) <= 0
};

GammaHp gamma_hp(double dT, double dT_set, const PiecewiseRegimeModel& model);

struct DerReconnectPolicy {
  double tau_min = 0.5;  // minutes
  // Soft-start density on [tau_min, window]; uniform by default.
  metrics::DelayDensity density() const;

  void validate() const;
};

struct GammaDer {
  double gamma = 1.0;
  double p_der = 0.0, p_der_mitigated = 0.0;
  bool zero_generation = false;
};

GammaDer gamma_der(const metrics::GenerationProfile& gen, const metrics::DelayDensity& baseline,
                   const metrics::DelayDensity& policy, const metrics::SurgeWindow& window = {});
GammaDer gamma_der(const metrics::GenerationProfile& gen, const metrics::DerDelayModel& baseline,
                   const DerReconnectPolicy& policy, const metrics::SurgeWindow& window = {});

struct Factors {
  double gamma_ev = 0.0;
  double gamma_hp = 0.0;
  double gamma_der = 1.0;

  void validate() const;
};

SurgeComponents apply(const SurgeComponents& s, const Factors& f);

struct Policies {
  EvRestartPolicy ev;
  ThermostatPolicy hp;
  DerReconnectPolicy der;
  int charger_count = 100;  // identical constant chargers for the EV factor
  double charger_kw = 7.2;

  void validate() const;
};

// Event-independent pieces: the EV factor and the fitted HP regime model.
struct Setup {
  Policies policies;
  GammaEv ev;
  PiecewiseRegimeModel hp_model;
  metrics::DerDelayModel der_baseline;
};

// Fits f_r on (T_out - T_set, s_hp) over the records.
Setup prepare(const Policies& policies, const std::vector<SurgeRecord>& records,
              const metrics::DerDelayModel& der_baseline, unsigned threads = 1);

struct EventFactors {
  Factors factors;
  GammaHp hp;
  GammaDer der;
};

EventFactors event_factors(const Setup& setup, double temp_c, const metrics::GenerationProfile& gen,
                           const metrics::SurgeWindow& window = {});

}  // namespace surge::mitigation

namespace surge::mitigation {
template <class V>
void visit_fields(V& v, Policies& p) {
  v("ev", p.ev);
  v("hp", p.hp);
  v("der", p.der);
  v("charger_count", p.charger_count);
  v("charger_kw", p.charger_kw);
}
template <class V>
void visit_fields(V& v, EvRestartPolicy& p) {
  v("t1", p.t1);
  v("t2", p.t2);
  v("K", p.K);
  v("seed", p.seed);
}
template <class V>
void visit_fields(V& v, ThermostatPolicy& p) {
  v("offset_c", p.offset_c);
  v("t_set_c", p.t_set_c);
}
template <class V>
void visit_fields(V& v, DerReconnectPolicy& p) {
  v("tau_min", p.tau_min);
}
}  // namespace surge::mitigation
