#include "surge/mitigation.hpp"

#include <algorithm>
#include <cmath>

#include "surge/common.hpp"

namespace surge::mitigation {

namespace {
constexpr std::uint64_t kStreamRestart = 41;
constexpr double kWindowMin = 15.0;
constexpr double kBreak = 5.0;
}  // namespace

void EvRestartPolicy::validate() const {
  require(std::isfinite(t1) && std::isfinite(t2) && 0.0 <= t1 && t1 <= t2,
          "EV restart window needs 0 <= t1 <= t2");
  require(K >= 1, "EV restart needs K >= 1");
}

double ChargerProfile::cumulative(double x) const {
  if (x <= 0.0) return 0.0;
  double acc = 0.0;
  for (double v : kw) {
    if (x <= step_min) return acc + v * x;
    acc += v * step_min;
    x -= step_min;
  }
  throw Error("charger profile evaluated beyond its span");
}

GammaEv gamma_ev(const std::vector<ChargerProfile>& profiles, const EvRestartPolicy& policy,
                 unsigned threads) {
  policy.validate();
  require(!profiles.empty(), "gamma_ev needs at least one charger profile");
  std::vector<double> full(profiles.size());
  for (std::size_t m = 0; m < profiles.size(); ++m) {
    require(profiles[m].step_min > 0.0, "charger profile step must be positive");
    require(profiles[m].span() >= kWindowMin - 1e-9,
            "charger profile must cover the 15-min window");
    full[m] = profiles[m].cumulative(kWindowMin);
  }
  GammaEv out;
  double total = 0.0;
  for (double f : full) total += f;
  out.p_ev = total / kWindowMin;
  if (out.p_ev == 0.0) {
    out.zero_load = true;
    return out;
  }

  // A charger delayed by tau contributes F((15 - tau)+) to the window integral.
  std::vector<double> trial(static_cast<std::size_t>(policy.K));
  parallel_for(trial.size(), threads, [&](std::size_t k) {
    Rng rng = make_rng(policy.seed, kStreamRestart, k);
    double acc = 0.0;
    for (const auto& p : profiles) {
      double tau = policy.t1 + (policy.t2 - policy.t1) * uniform01(rng);
      acc += p.cumulative(std::max(0.0, kWindowMin - tau));
    }
    trial[k] = acc;
  });
  double sum = 0.0;
  for (double v : trial) sum += v;
  out.p_ev_mitigated = sum / static_cast<double>(policy.K) / kWindowMin;
  out.gamma = std::clamp(1.0 - out.p_ev_mitigated / out.p_ev, 0.0, 1.0);
  return out;
}

int PiecewiseRegimeModel::regime_of(double dT) {
  if (dT < -kBreak) return 0;
  if (dT > kBreak) return 2;
  return 1;
}

double PiecewiseRegimeModel::eval(double dT) const {
  const auto& l = regimes[static_cast<std::size_t>(regime_of(dT))];
  return l.beta * dT + l.alpha;
}

namespace {

struct Ols {
  double beta = 0.0, alpha = 0.0;
};

Ols ols(const std::vector<RegimePoint>& pts) {
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) mx += p.dT, my += p.delta_hp;
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : pts) {
    sxx += (p.dT - mx) * (p.dT - mx);
    sxy += (p.dT - mx) * (p.delta_hp - my);
  }
  Ols o;
  o.beta = sxx > 0.0 ? sxy / sxx : 0.0;
  o.alpha = my - o.beta * mx;
  return o;
}

}  // namespace

PiecewiseRegimeModel fit_piecewise(const std::vector<RegimePoint>& points, int min_points) {
  require(points.size() >= 2, "piecewise fit needs at least two points");
  for (const auto& p : points)
    require(std::isfinite(p.dT) && std::isfinite(p.delta_hp), "piecewise fit needs finite points");
  std::array<std::vector<RegimePoint>, 3> by;
  for (const auto& p : points) by[static_cast<std::size_t>(PiecewiseRegimeModel::regime_of(p.dT))].push_back(p);
  const Ols pooled = ols(points);
  PiecewiseRegimeModel m;
  for (std::size_t r = 0; r < 3; ++r) {
    auto& l = m.regimes[r];
    l.n = static_cast<int>(by[r].size());
    if (l.n < min_points) {
      l.underpowered = true;
      l.beta = pooled.beta;
      l.alpha = pooled.alpha;
    } else {
      auto o = ols(by[r]);
      l.beta = o.beta;
      l.alpha = o.alpha;
    }
  }
  return m;
}

void ThermostatPolicy::validate() const {
  require(std::isfinite(offset_c) && offset_c >= 0.0, "thermostat offset must be >= 0");
  require(std::isfinite(t_set_c), "thermostat setpoint must be finite");
}

double ThermostatPolicy::dT_set(double dT) const {
  const double mag = std::min(offset_c, std::abs(dT));
  return dT < 0.0 ? -mag : mag;
}

GammaHp gamma_hp(double dT, double dT_set, const PiecewiseRegimeModel& model) {
  GammaHp out;
  const double denom = model.eval(dT);
  if (!(denom > 0.0)) {
    out.degenerate = true;
    return out;
  }
  const double g = 1.0 - model.eval(dT - dT_set) / denom;
  out.gamma = std::clamp(g, 0.0, 1.0);
  out.clamped = out.gamma != g;
  return out;
}

metrics::DelayDensity DerReconnectPolicy::density() const {
  return metrics::DelayDensity::uniform(tau_min, kWindowMin);
}

void DerReconnectPolicy::validate() const {
  require(std::isfinite(tau_min) && tau_min >= 0.0 && tau_min < kWindowMin,
          "DER reconnect tau_min must lie in [0, 15) min");
}

GammaDer gamma_der(const metrics::GenerationProfile& gen, const metrics::DelayDensity& baseline,
                   const metrics::DelayDensity& policy, const metrics::SurgeWindow& window) {
  GammaDer out;
  out.p_der = metrics::der_missing_power(gen, baseline, window).kw;
  if (out.p_der == 0.0) {
    out.zero_generation = true;
    return out;
  }
  out.p_der_mitigated = metrics::der_missing_power(gen, policy, window).kw;
  out.gamma = std::clamp(out.p_der_mitigated / out.p_der, 0.0, 1.0);
  return out;
}

GammaDer gamma_der(const metrics::GenerationProfile& gen, const metrics::DerDelayModel& baseline,
                   const DerReconnectPolicy& policy, const metrics::SurgeWindow& window) {
  policy.validate();
  return gamma_der(gen, metrics::DelayDensity::from(baseline), policy.density(), window);
}

void Factors::validate() const {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  require(unit(gamma_ev) && unit(gamma_hp) && unit(gamma_der), "mitigation factors must lie in [0,1]");
}

SurgeComponents apply(const SurgeComponents& s, const Factors& f) {
  f.validate();
  SurgeComponents o = s;
  o.s_ev = s.s_ev * (1.0 - f.gamma_ev);
  o.s_hp = s.s_hp * (1.0 - f.gamma_hp);
  o.s_der = s.s_der * f.gamma_der;
  o.s_oth = s.s_oth;
  o.s_tot = o.s_ev + o.s_hp + o.s_der + o.s_oth;
  return o;
}

void Policies::validate() const {
  ev.validate();
  hp.validate();
  der.validate();
  require(charger_count >= 1, "charger_count must be >= 1");
  require(std::isfinite(charger_kw) && charger_kw >= 0.0, "charger_kw must be >= 0");
}

Setup prepare(const Policies& policies, const std::vector<SurgeRecord>& records,
              const metrics::DerDelayModel& der_baseline, unsigned threads) {
  policies.validate();
  require(!records.empty(), "mitigation setup needs surge records");
  Setup s;
  s.policies = policies;
  s.der_baseline = der_baseline;
  std::vector<ChargerProfile> chargers(
      static_cast<std::size_t>(policies.charger_count),
      ChargerProfile{kWindowMin, std::vector<double>(1, policies.charger_kw)});
  s.ev = gamma_ev(chargers, policies.ev, threads);
  std::vector<RegimePoint> pts;
  pts.reserve(records.size());
  for (const auto& r : records) pts.push_back({r.temp_c - policies.hp.t_set_c, r.s.s_hp});
  s.hp_model = fit_piecewise(pts);
  return s;
}

EventFactors event_factors(const Setup& setup, double temp_c, const metrics::GenerationProfile& gen,
                           const metrics::SurgeWindow& window) {
  EventFactors out;
  const double dT = temp_c - setup.policies.hp.t_set_c;
  out.hp = gamma_hp(dT, setup.policies.hp.dT_set(dT), setup.hp_model);
  out.der = gamma_der(gen, setup.der_baseline, setup.policies.der, window);
  out.factors = {setup.ev.gamma, out.hp.gamma, out.der.gamma};
  return out;
}

}  // namespace surge::mitigation
