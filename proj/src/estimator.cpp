#include "surge/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "surge/binio.hpp"

namespace surge::estimator {

const std::array<const char*, kFeatureDim> kFeatureNames = {
    "hour_sin", "hour_cos", "dow_sin", "dow_cos", "month_sin", "month_cos",
    "temp_c", "ghi", "precipitable_water", "outage_active", "duration_so_far_h",
    "r_ev", "r_hp", "r_der", "duration_h", "pad"};
const std::array<const char*, kHeads> kHeadNames = {"ev", "hp", "der", "oth"};

namespace {

constexpr int kPadFeature = kFeatureDim - 1;
constexpr double kLnEps = 1e-5;
constexpr std::uint64_t kStreamInit = 31;
constexpr std::uint64_t kStreamSplit = 32;
constexpr std::uint64_t kStreamShuffle = 33;
constexpr std::uint64_t kStreamDropout = 34;
constexpr std::uint64_t kStreamProbe = 35;
constexpr int kChunk = 16;  // events per gradient chunk

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MapM = Eigen::Map<Mat>;
using MapCM = Eigen::Map<const Mat>;
using MapR = Eigen::Map<RowVec>;
using MapCR = Eigen::Map<const RowVec>;

constexpr double kTwoPi = 6.283185307179586476925286766559;

void fill_step(double* f, Minutes t, const WeatherSample& w, bool active, double so_far,
               const PenetrationRates& r, double duration_h) {
  CalendarTime c = to_calendar(t);
  double hour = hour_of_day(t);
  f[0] = std::sin(kTwoPi * hour / 24.0);
  f[1] = std::cos(kTwoPi * hour / 24.0);
  f[2] = std::sin(kTwoPi * c.day_of_week / 7.0);
  f[3] = std::cos(kTwoPi * c.day_of_week / 7.0);
  f[4] = std::sin(kTwoPi * (c.month - 1) / 12.0);
  f[5] = std::cos(kTwoPi * (c.month - 1) / 12.0);
  f[6] = w.temp_c;
  f[7] = w.ghi;
  f[8] = w.precipitable_water;
  f[9] = active ? 1.0 : 0.0;
  f[10] = so_far;
  f[11] = r.r_ev;
  f[12] = r.r_hp;
  f[13] = r.r_der;
  f[14] = duration_h;
  f[15] = 0.0;
}

template <class WeatherAt, class Covered>
EventFeatures build(Minutes restoration, Minutes start, double duration_h,
                    const PenetrationRates& r, int T, WeatherAt weather_at, Covered covered) {
  require(T >= 1, "sequence length T must be >= 1");
  EventFeatures f;
  f.x = Mat::Zero(T, kFeatureDim);
  f.pad.assign(T, 0);
  for (int k = 0; k < T; ++k) {
    Minutes t = restoration - static_cast<Minutes>(T - 1 - k) * kStepMinutes;
    if (!covered(t)) {
      f.pad[k] = 1;
      f.x(k, kPadFeature) = 1.0;
      continue;
    }
    bool active = t >= start && t < restoration;
    double so_far = std::clamp(static_cast<double>(t - start) / 60.0, 0.0, duration_h);
    fill_step(&f.x(k, 0), t, weather_at(t), active, so_far, r, duration_h);
  }
  return f;
}

double relu(double v) { return v > 0.0 ? v : 0.0; }

struct LnCache {
  Mat xhat;
  Vec rstd;
};

// Row-wise layer norm with gain g and bias b.
Mat layer_norm(const Mat& x, const RowVec& g, const RowVec& b, LnCache* c) {
  const Eigen::Index n = x.rows(), D = x.cols();
  Mat xhat(n, D);
  Vec rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  Mat y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  if (c) {
    c->xhat = std::move(xhat);
    c->rstd = std::move(rstd);
  }
  return y;
}

// Returns dx; accumulates dg, db.
Mat layer_norm_back(const Mat& dy, const LnCache& c, const RowVec& g, MapR dg, MapR db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * g.array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    double m1 = dxhat.row(i).mean();
    double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

Mat dropout_mask(Eigen::Index r, Eigen::Index c, double p, Rng& rng) {
  Mat m(r, c);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

EventFeatures featurize(const OutageEvent& event, const PenetrationRates& rates,
                        const WeatherTrace& weather, int T) {
  const Minutes R = event.restoration();
  if (!weather.covers(R))
    throw Error("missing weather at restoration " + to_iso8601(R) + " for event " +
                std::to_string(event.event_id));
  auto at = [&](Minutes t) {
    std::size_t i = weather.index(t);
    return WeatherSample{weather.temp_c[i], weather.ghi[i], weather.precipitable_water[i]};
  };
  auto covered = [&](Minutes t) { return weather.covers(t); };
  return build(R, event.start, event.duration_h, rates, T, at, covered);
}

EventFeatures featurize_fixed(Minutes restoration, double duration_h, const WeatherSample& w,
                              const PenetrationRates& rates, int T) {
  require(duration_h >= 0.0, "duration_h must be non-negative");
  Minutes start = restoration - static_cast<Minutes>(std::llround(duration_h * 60.0));
  return build(restoration, start, duration_h, rates, T, [&](Minutes) { return w; },
               [](Minutes) { return true; });
}

std::map<std::string, double> sweep_defaults() {
  return {{"hour", 18.0}, {"month", 1.0},     {"temp_c", 0.0}, {"ghi", 0.0}, {"pw", 10.0},
          {"duration_h", 2.0}, {"r_ev", 0.2}, {"r_hp", 0.3}, {"r_der", 0.1}};
}

std::vector<SweepRow> sweep(const Model& model, const SweepSpec& spec) {
  auto base = sweep_defaults();
  auto known = [&](const std::string& k) { return base.count(k) > 0; };
  require(known(spec.vary), "unknown sweep input '" + spec.vary + "'");
  require(!spec.values.empty(), "sweep needs at least one value");
  require(spec.series.empty() || known(spec.series), "unknown sweep series '" + spec.series + "'");
  require(spec.series.empty() || !spec.series_values.empty(), "sweep series needs values");
  require(spec.series != spec.vary, "sweep series must differ from the varied input");
  for (const auto& [k, v] : spec.fixed) {
    require(known(k), "unknown sweep input '" + k + "'");
    base[k] = v;
  }
  const std::vector<double> series =
      spec.series.empty() ? std::vector<double>{0.0} : spec.series_values;

  std::vector<SweepRow> rows;
  std::vector<EventFeatures> feats;
  for (double sv : series) {
    for (double v : spec.values) {
      auto in = base;
      in[spec.vary] = v;
      if (!spec.series.empty()) in[spec.series] = sv;
      const double hour = in["hour"];
      const int month = static_cast<int>(in["month"]);
      require(hour >= 0.0 && hour < 24.0, "sweep hour must lie in [0, 24)");
      require(month >= 1 && month <= 12, "sweep month must lie in 1..12");
      char date[32];
      std::snprintf(date, sizeof date, "2023-%02d-15T00:00", month);
      const Minutes restoration =
          parse_iso8601(date) + static_cast<Minutes>(std::llround(hour * 4.0)) * kStepMinutes;
      WeatherSample w{in["temp_c"], in["ghi"], in["pw"]};
      PenetrationRates r{in["r_ev"], in["r_hp"], in["r_der"]};
      feats.push_back(featurize_fixed(restoration, in["duration_h"], w, r, model.config().T));
      rows.push_back({sv, v, {}});
    }
  }
  auto pred = model.predict(feats);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].pred = pred[i];
  return rows;
}

Targets targets_of(const SurgeComponents& s) { return {s.s_ev, s.s_hp, s.s_der, s.s_oth}; }

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  require(T >= 1, "T must be >= 1");
  require(d == kFeatureDim, "d must equal the feature dimension " + std::to_string(kFeatureDim));
  require(D >= 1, "D must be >= 1");
  require(L >= 0, "L must be >= 0");
  require(n_heads >= 1 && D % n_heads == 0, "D must be divisible by n_heads");
  require(H >= 1, "H must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch >= 1, "batch must be >= 1");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(lr_final > 0.0 && lr_final <= 1.0, "lr_final must lie in (0, 1]");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(eps > 0.0, "eps must be positive");
  require(clip_norm > 0.0, "clip_norm must be positive");
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie in (0, 1)");
  require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must lie in (0, 1)");
  require(patience >= 1, "patience must be >= 1");
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::size_t off = 0;
  auto add = [&](const std::string& name, int r, int c) {
    tensors_.push_back({name, r, c, off});
    off += static_cast<std::size_t>(r) * c;
  };
  const int D = cfg_.D, F = cfg_.ffn();
  add("in.w", cfg_.d, D);
  add("in.b", 1, D);
  add("pos", cfg_.T, D);
  for (int l = 0; l < cfg_.L; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.g", 1, D);
    add(p + "ln1.b", 1, D);
    // No key bias: softmax is invariant to it, so it would never learn.
    for (const char* m : {"q", "k", "v", "o"}) {
      add(p + "attn." + m + ".w", D, D);
      if (std::string(m) != "k") add(p + "attn." + m + ".b", 1, D);
    }
    add(p + "ln2.g", 1, D);
    add(p + "ln2.b", 1, D);
    add(p + "ffn1.w", D, F);
    add(p + "ffn1.b", 1, F);
    add(p + "ffn2.w", F, D);
    add(p + "ffn2.b", 1, D);
  }
  if (cfg_.L > 0) {
    add("lnf.g", 1, D);
    add("lnf.b", 1, D);
  }
  for (int j = 0; j < kHeads; ++j) {
    std::string p = std::string("head.") + kHeadNames[j] + ".";
    add(p + "w1", D, cfg_.H);
    add(p + "b1", 1, cfg_.H);
    add(p + "w2", cfg_.H, 1);
    add(p + "b2", 1, 1);
  }
  params_.assign(off, 0.0);
  norm_.mean.assign(cfg_.d, 0.0);
  norm_.std.assign(cfg_.d, 1.0);
}

const Tensor& Model::tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw Error("unknown parameter tensor '" + name + "'");
}

void Model::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, kStreamInit);
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (const auto& t : tensors_) {
    double* p = params_.data() + t.offset;
    const std::size_t n = t.size();
    if (ends_with(t.name, ".g")) {
      std::fill(p, p + n, 1.0);
    } else if (ends_with(t.name, ".w2")) {
      std::fill(p, p + n, 0.0);  // heads start at the target mean
    } else if (t.rows == 1 && t.name != "pos") {
      std::fill(p, p + n, 0.0);  // biases
    } else if (t.name == "pos") {
      for (std::size_t i = 0; i < n; ++i) p[i] = 0.02 * standard_normal(rng);
    } else if (t.name.find("attn.") != std::string::npos || t.name == "in.w") {
      double a = std::sqrt(6.0 / (t.rows + t.cols));
      for (std::size_t i = 0; i < n; ++i) p[i] = a * (2.0 * uniform01(rng) - 1.0);
    } else {
      double s = std::sqrt(2.0 / t.rows);  // He
      for (std::size_t i = 0; i < n; ++i) p[i] = s * standard_normal(rng);
    }
  }
}

struct Model::Cache {
  std::vector<Eigen::Index> off, len, nvalid;
  std::vector<char> valid;  // per token
  Mat x0;
  struct Layer {
    Mat h_in, a, q, k, v, o, m1, h_mid, bn, u, r, m2;
    LnCache ln1, ln2;
    std::vector<Mat> p;  // per (event, head)
  };
  std::vector<Layer> layers;
  Mat h_last, hf;
  LnCache lnf;
  Mat e;
  std::array<Mat, kHeads> hu, hr, hm;
  Mat out;  // B x 4, before de-standardization
};

void Model::forward(const std::vector<const EventFeatures*>& batch, Cache& c,
                    std::uint64_t dropout_seed, bool keep) const {
  const int D = cfg_.D, nh = cfg_.n_heads, dh = D / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool train = dropout_seed != 0 && cfg_.dropout > 0.0;
  Rng rng = make_rng(dropout_seed, kStreamDropout);
  const auto B = static_cast<Eigen::Index>(batch.size());

  Eigen::Index N = 0;
  c.off.resize(B);
  c.len.resize(B);
  c.nvalid.resize(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& f = *batch[b];
    if (f.x.cols() != cfg_.d)
      throw Error("feature dimension d: expected " + std::to_string(cfg_.d) + ", got " +
                  std::to_string(f.x.cols()));
    if (f.x.rows() < 1 || f.x.rows() > cfg_.T)
      throw Error("sequence length T: expected 1.." + std::to_string(cfg_.T) + ", got " +
                  std::to_string(f.x.rows()));
    require(static_cast<Eigen::Index>(f.pad.size()) == f.x.rows(), "pad flags do not match steps");
    c.off[b] = N;
    c.len[b] = f.x.rows();
    N += f.x.rows();
  }

  // Normalized inputs; pad steps carry only the pad flag.
  c.x0 = Mat::Zero(N, cfg_.d);
  c.valid.assign(N, 0);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& f = *batch[b];
    Eigen::Index nv = 0;
    for (Eigen::Index k = 0; k < c.len[b]; ++k) {
      Eigen::Index i = c.off[b] + k;
      if (f.pad[k]) {
        c.x0(i, kPadFeature) = 1.0;
        continue;
      }
      c.valid[i] = 1;
      ++nv;
      for (int j = 0; j < cfg_.d; ++j) {
        double v = f.x(k, j);
        c.x0(i, j) = j == kPadFeature ? v : (v - norm_.mean[j]) / norm_.std[j];
      }
    }
    if (nv == 0) throw Error("event sequence has no non-pad steps");
    c.nvalid[b] = nv;
  }

  auto P = [&](const std::string& n) { return MapCM(params_.data() + tensor(n).offset, tensor(n).rows, tensor(n).cols); };
  auto Rv = [&](const std::string& n) { return MapCR(params_.data() + tensor(n).offset, tensor(n).size()); };

  Mat h = (c.x0 * P("in.w")).rowwise() + Rv("in.b");
  auto pos = P("pos");
  for (Eigen::Index b = 0; b < B; ++b)
    h.middleRows(c.off[b], c.len[b]) += pos.bottomRows(c.len[b]);

  c.layers.assign(keep ? cfg_.L : 0, {});
  for (int l = 0; l < cfg_.L; ++l) {
    Cache::Layer tmp;
    Cache::Layer& ly = keep ? c.layers[l] : tmp;
    std::string p = "layer" + std::to_string(l) + ".";
    ly.h_in = h;
    ly.a = layer_norm(h, Rv(p + "ln1.g"), Rv(p + "ln1.b"), &ly.ln1);
    ly.q = (ly.a * P(p + "attn.q.w")).rowwise() + Rv(p + "attn.q.b");
    ly.k = ly.a * P(p + "attn.k.w");
    ly.v = (ly.a * P(p + "attn.v.w")).rowwise() + Rv(p + "attn.v.b");
    ly.o = Mat::Zero(N, D);
    ly.p.assign(static_cast<std::size_t>(B * nh), Mat());
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index o0 = c.off[b], S = c.len[b];
      for (int hd = 0; hd < nh; ++hd) {
        Mat s = ly.q.block(o0, hd * dh, S, dh) * ly.k.block(o0, hd * dh, S, dh).transpose() * scale;
        for (Eigen::Index r = 0; r < S; ++r) {
          double mx = -std::numeric_limits<double>::infinity();
          for (Eigen::Index k = 0; k < S; ++k)
            if (c.valid[o0 + k]) mx = std::max(mx, s(r, k));
          double z = 0.0;
          for (Eigen::Index k = 0; k < S; ++k) {
            s(r, k) = c.valid[o0 + k] ? std::exp(s(r, k) - mx) : 0.0;
            z += s(r, k);
          }
          s.row(r) /= z;
        }
        ly.o.block(o0, hd * dh, S, dh) = s * ly.v.block(o0, hd * dh, S, dh);
        ly.p[static_cast<std::size_t>(b * nh + hd)] = std::move(s);
      }
    }
    Mat z = (ly.o * P(p + "attn.o.w")).rowwise() + Rv(p + "attn.o.b");
    if (train) {
      ly.m1 = dropout_mask(N, D, cfg_.dropout, rng);
      z.array() *= ly.m1.array();
    }
    h += z;
    ly.h_mid = h;
    ly.bn = layer_norm(h, Rv(p + "ln2.g"), Rv(p + "ln2.b"), &ly.ln2);
    ly.u = (ly.bn * P(p + "ffn1.w")).rowwise() + Rv(p + "ffn1.b");
    ly.r = ly.u.unaryExpr(&relu);
    Mat fo = (ly.r * P(p + "ffn2.w")).rowwise() + Rv(p + "ffn2.b");
    if (train) {
      ly.m2 = dropout_mask(N, D, cfg_.dropout, rng);
      fo.array() *= ly.m2.array();
    }
    h += fo;
  }

  if (cfg_.L > 0) {
    c.h_last = h;
    c.hf = layer_norm(h, Rv("lnf.g"), Rv("lnf.b"), &c.lnf);
  } else {
    c.hf = std::move(h);
  }

  c.e = Mat::Zero(B, D);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index k = 0; k < c.len[b]; ++k)
      if (c.valid[c.off[b] + k]) c.e.row(b) += c.hf.row(c.off[b] + k);
    c.e.row(b) /= static_cast<double>(c.nvalid[b]);
  }

  c.out.resize(B, kHeads);
  for (int j = 0; j < kHeads; ++j) {
    std::string p = std::string("head.") + kHeadNames[j] + ".";
    c.hu[j] = (c.e * P(p + "w1")).rowwise() + Rv(p + "b1");
    c.hr[j] = c.hu[j].unaryExpr(&relu);
    if (train) {
      c.hm[j] = dropout_mask(B, cfg_.H, cfg_.dropout, rng);
      c.hr[j].array() *= c.hm[j].array();
    }
    c.out.col(j) = (c.hr[j] * P(p + "w2")).col(0).array() + params_[tensor(p + "b2").offset];
  }
}

std::vector<Targets> Model::predict(const std::vector<EventFeatures>& batch) const {
  std::vector<Targets> out(batch.size());
  constexpr std::size_t kBlock = 256;
  Cache c;
  for (std::size_t s = 0; s < batch.size(); s += kBlock) {
    std::size_t e = std::min(batch.size(), s + kBlock);
    std::vector<const EventFeatures*> ptr;
    for (std::size_t i = s; i < e; ++i) ptr.push_back(&batch[i]);
    forward(ptr, c, 0, false);
    for (std::size_t i = s; i < e; ++i)
      for (int j = 0; j < kHeads; ++j)
        out[i][j] = norm_.y_mean[j] + norm_.y_scale[j] * c.out(static_cast<Eigen::Index>(i - s), j);
  }
  return out;
}

double Model::loss_and_grad(const std::vector<const EventFeatures*>& batch,
                            const std::vector<Targets>& targets, std::vector<double>* grad,
                            std::uint64_t dropout_seed, double denom) const {
  require(batch.size() == targets.size(), "batch and target sizes differ");
  require(!batch.empty(), "empty batch");
  if (denom <= 0.0) denom = static_cast<double>(batch.size());
  Cache c;
  forward(batch, c, dropout_seed, grad != nullptr);
  const auto B = static_cast<Eigen::Index>(batch.size());

  Mat dout(B, kHeads);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < B; ++b)
    for (int j = 0; j < kHeads; ++j) {
      double r = norm_.y_mean[j] + norm_.y_scale[j] * c.out(b, j) - targets[b][j];
      loss += r * r;
      dout(b, j) = 2.0 * r * norm_.y_scale[j] / denom;
    }
  loss /= denom;
  if (!grad) return loss;
  require(grad->size() == params_.size(), "gradient buffer has the wrong size");

  const int D = cfg_.D, nh = cfg_.n_heads, dh = D / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool train = dropout_seed != 0 && cfg_.dropout > 0.0;
  const Eigen::Index N = c.x0.rows();

  auto P = [&](const std::string& n) { return MapCM(params_.data() + tensor(n).offset, tensor(n).rows, tensor(n).cols); };
  auto Rv = [&](const std::string& n) { return MapCR(params_.data() + tensor(n).offset, tensor(n).size()); };
  auto G = [&](const std::string& n) { return MapM(grad->data() + tensor(n).offset, tensor(n).rows, tensor(n).cols); };
  auto Gr = [&](const std::string& n) { return MapR(grad->data() + tensor(n).offset, tensor(n).size()); };

  Mat de = Mat::Zero(B, D);
  for (int j = 0; j < kHeads; ++j) {
    std::string p = std::string("head.") + kHeadNames[j] + ".";
    Vec dy = dout.col(j);
    G(p + "w2") += c.hr[j].transpose() * dy;
    (*grad)[tensor(p + "b2").offset] += dy.sum();
    Mat dr = dy * P(p + "w2").transpose();
    if (train) dr.array() *= c.hm[j].array();
    Mat du = (c.hu[j].array() > 0.0).select(dr, 0.0);
    G(p + "w1") += c.e.transpose() * du;
    Gr(p + "b1") += du.colwise().sum();
    de += du * P(p + "w1").transpose();
  }

  Mat gh = Mat::Zero(N, D);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index k = 0; k < c.len[b]; ++k)
      if (c.valid[c.off[b] + k]) gh.row(c.off[b] + k) = de.row(b) / static_cast<double>(c.nvalid[b]);

  if (cfg_.L > 0) gh = layer_norm_back(gh, c.lnf, Rv("lnf.g"), Gr("lnf.g"), Gr("lnf.b"));

  for (int l = cfg_.L - 1; l >= 0; --l) {
    const auto& ly = c.layers[l];
    std::string p = "layer" + std::to_string(l) + ".";
    // Feed-forward sublayer.
    Mat dfo = gh;
    if (train) dfo.array() *= ly.m2.array();
    G(p + "ffn2.w") += ly.r.transpose() * dfo;
    Gr(p + "ffn2.b") += dfo.colwise().sum();
    Mat dr = dfo * P(p + "ffn2.w").transpose();
    Mat du = (ly.u.array() > 0.0).select(dr, 0.0);
    G(p + "ffn1.w") += ly.bn.transpose() * du;
    Gr(p + "ffn1.b") += du.colwise().sum();
    Mat dbn = du * P(p + "ffn1.w").transpose();
    gh += layer_norm_back(dbn, ly.ln2, Rv(p + "ln2.g"), Gr(p + "ln2.g"), Gr(p + "ln2.b"));
    // Attention sublayer.
    Mat dz = gh;
    if (train) dz.array() *= ly.m1.array();
    G(p + "attn.o.w") += ly.o.transpose() * dz;
    Gr(p + "attn.o.b") += dz.colwise().sum();
    Mat dout_h = dz * P(p + "attn.o.w").transpose();
    Mat dq = Mat::Zero(N, D), dk = Mat::Zero(N, D), dv = Mat::Zero(N, D);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index o0 = c.off[b], S = c.len[b];
      for (int hd = 0; hd < nh; ++hd) {
        const Mat& pm = ly.p[static_cast<std::size_t>(b * nh + hd)];
        auto dob = dout_h.block(o0, hd * dh, S, dh);
        Mat dp = dob * ly.v.block(o0, hd * dh, S, dh).transpose();
        dv.block(o0, hd * dh, S, dh) += pm.transpose() * dob;
        Vec rs = (dp.array() * pm.array()).rowwise().sum();
        Mat ds = pm.array() * (dp.colwise() - rs).array();
        dq.block(o0, hd * dh, S, dh) += ds * ly.k.block(o0, hd * dh, S, dh) * scale;
        dk.block(o0, hd * dh, S, dh) += ds.transpose() * ly.q.block(o0, hd * dh, S, dh) * scale;
      }
    }
    Mat da = Mat::Zero(N, D);
    for (auto [name, dm] : {std::pair<const char*, const Mat*>{"q", &dq}, {"k", &dk}, {"v", &dv}}) {
      std::string w = p + "attn." + name;
      G(w + ".w") += ly.a.transpose() * *dm;
      if (*name != 'k') Gr(w + ".b") += dm->colwise().sum();
      da += *dm * P(w + ".w").transpose();
    }
    gh += layer_norm_back(da, ly.ln1, Rv(p + "ln1.g"), Gr(p + "ln1.g"), Gr(p + "ln1.b"));
  }

  G("in.w") += c.x0.transpose() * gh;
  Gr("in.b") += gh.colwise().sum();
  auto gpos = G("pos");
  for (Eigen::Index b = 0; b < B; ++b) gpos.bottomRows(c.len[b]) += gh.middleRows(c.off[b], c.len[b]);
  return loss;
}

double loss(const std::vector<Targets>& pred, const std::vector<Targets>& target) {
  require(pred.size() == target.size(), "prediction and target sizes differ");
  require(!pred.empty(), "empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (int j = 0; j < kHeads; ++j) s += (pred[i][j] - target[i][j]) * (pred[i][j] - target[i][j]);
  return s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::array<HeadMetrics, kHeads> evaluate(const std::vector<Targets>& pred,
                                         const std::vector<Targets>& target) {
  require(pred.size() == target.size() && !pred.empty(), "evaluation needs matching non-empty sets");
  std::array<HeadMetrics, kHeads> m{};
  const double n = static_cast<double>(pred.size());
  for (int j = 0; j < kHeads; ++j) {
    double mean = 0.0;
    for (const auto& t : target) mean += t[j];
    mean /= n;
    double sse = 0.0, sst = 0.0, sae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      double r = pred[i][j] - target[i][j];
      sse += r * r;
      sae += std::abs(r);
      sst += (target[i][j] - mean) * (target[i][j] - mean);
    }
    m[j].rmse = std::sqrt(sse / n);
    m[j].mae = sae / n;
    if (sst <= 1e-24 * n) {
      m[j].degenerate = true;
      m[j].r2 = 0.0;
    } else {
      m[j].r2 = 1.0 - sse / sst;
    }
  }
  return m;
}

namespace {

void fit_normalization(Model& model, const std::vector<Sample>& data,
                       const std::vector<std::size_t>& idx) {
  auto& nm = model.norm();
  const int d = model.config().d;
  std::vector<double> s(d, 0.0), ss(d, 0.0);
  double cnt = 0.0;
  Targets ym{}, yv{};
  for (std::size_t i : idx) {
    const auto& f = data[i].features;
    for (int k = 0; k < f.steps(); ++k) {
      if (f.pad[k]) continue;
      cnt += 1.0;
      for (int j = 0; j < d; ++j) s[j] += f.x(k, j);
    }
    for (int j = 0; j < kHeads; ++j) ym[j] += data[i].target[j];
  }
  for (int j = 0; j < d; ++j) s[j] /= cnt;
  for (int j = 0; j < kHeads; ++j) ym[j] /= static_cast<double>(idx.size());
  for (std::size_t i : idx) {
    const auto& f = data[i].features;
    for (int k = 0; k < f.steps(); ++k) {
      if (f.pad[k]) continue;
      for (int j = 0; j < d; ++j) ss[j] += (f.x(k, j) - s[j]) * (f.x(k, j) - s[j]);
    }
    for (int j = 0; j < kHeads; ++j) yv[j] += (data[i].target[j] - ym[j]) * (data[i].target[j] - ym[j]);
  }
  for (int j = 0; j < d; ++j) {
    double sd = std::sqrt(ss[j] / cnt);
    nm.mean[j] = j == kPadFeature ? 0.0 : s[j];
    nm.std[j] = (j == kPadFeature || sd < 1e-9) ? 1.0 : sd;
  }
  for (int j = 0; j < kHeads; ++j) {
    double sd = std::sqrt(yv[j] / static_cast<double>(idx.size()));
    nm.y_mean[j] = ym[j];
    nm.y_scale[j] = sd < 1e-9 ? 1.0 : sd;
  }
}

double mean_loss(const Model& model, const std::vector<Sample>& data,
                 const std::vector<std::size_t>& idx) {
  std::vector<EventFeatures> f;
  std::vector<Targets> t;
  f.reserve(idx.size());
  for (std::size_t i : idx) {
    f.push_back(data[i].features);
    t.push_back(data[i].target);
  }
  return loss(model.predict(f), t);
}

}  // namespace

TrainReport train(Model& model, const std::vector<Sample>& data, const TrainConfig& tc,
                  unsigned threads) {
  tc.validate();
  require(data.size() >= 200, "training needs at least 200 events, got " + std::to_string(data.size()));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng srng = make_rng(tc.seed, kStreamSplit);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(srng, i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(tc.train_fraction * data.size()));
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(tc.val_fraction * n_train)));
  require(n_train > n_val && n_train < data.size(), "split leaves an empty partition");
  std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                                   order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  fit_normalization(model, data, fit_idx);
  model.init(model.config().seed);

  const std::size_t P = model.params().size();
  std::vector<double> m1(P, 0.0), m2(P, 0.0), best = model.params();
  TrainReport rep;
  rep.test_index = test_idx;
  rep.best_val_loss = mean_loss(model, data, val_idx);
  int since_best = 0;
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < tc.epochs && !rep.diverged; ++epoch) {
    std::vector<std::size_t> perm = fit_idx;
    Rng erng = make_rng(tc.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(erng, i)]);
    // Cosine decay from lr to lr * lr_final over the epoch budget.
    const double phase = tc.epochs > 1 ? static_cast<double>(epoch) / (tc.epochs - 1) : 0.0;
    const double lr = tc.lr * (tc.lr_final + 0.5 * (1.0 - tc.lr_final) * (1.0 + std::cos(M_PI * phase)));
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t s = 0; s < perm.size(); s += static_cast<std::size_t>(tc.batch)) {
      std::size_t e = std::min(perm.size(), s + static_cast<std::size_t>(tc.batch));
      const double denom = static_cast<double>(e - s);
      const std::size_t n_chunks = (e - s + kChunk - 1) / kChunk;
      std::vector<std::vector<double>> grads(n_chunks, std::vector<double>(P, 0.0));
      std::vector<double> losses(n_chunks, 0.0);
      parallel_for(n_chunks, threads, [&](std::size_t ch) {
        std::vector<const EventFeatures*> fb;
        std::vector<Targets> tb;
        for (std::size_t i = s + ch * kChunk; i < std::min(e, s + (ch + 1) * kChunk); ++i) {
          fb.push_back(&data[perm[i]].features);
          tb.push_back(data[perm[i]].target);
        }
        std::uint64_t ds = substream_seed(tc.seed, kStreamDropout, step * 1024 + ch) | 1;
        losses[ch] = model.loss_and_grad(fb, tb, &grads[ch], ds, denom);
      });
      std::vector<double>& g = grads[0];
      double bl = losses[0];
      for (std::size_t ch = 1; ch < n_chunks; ++ch) {
        bl += losses[ch];
        for (std::size_t i = 0; i < P; ++i) g[i] += grads[ch][i];
      }
      double gn = 0.0;
      for (double v : g) gn += v * v;
      gn = std::sqrt(gn);
      if (!std::isfinite(bl) || !std::isfinite(gn)) {
        rep.diverged = true;
        break;
      }
      if (gn > tc.clip_norm)
        for (double& v : g) v *= tc.clip_norm / gn;
      ++step;
      const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
      auto& p = model.params();
      for (std::size_t i = 0; i < P; ++i) {
        m1[i] = tc.beta1 * m1[i] + (1.0 - tc.beta1) * g[i];
        m2[i] = tc.beta2 * m2[i] + (1.0 - tc.beta2) * g[i] * g[i];
        p[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + tc.eps);
      }
      epoch_loss += bl;
      ++n_batches;
    }
    if (rep.diverged) break;
    double vl = mean_loss(model, data, val_idx);
    rep.train_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, n_batches)));
    rep.val_loss.push_back(vl);
    rep.epochs_run = epoch + 1;
    if (!std::isfinite(vl)) {
      rep.diverged = true;
      break;
    }
    if (vl < rep.best_val_loss) {
      rep.best_val_loss = vl;
      rep.best_epoch = epoch + 1;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
  }
  model.params() = best;

  std::vector<EventFeatures> tf;
  std::vector<Targets> tt;
  for (std::size_t i : test_idx) {
    tf.push_back(data[i].features);
    tt.push_back(data[i].target);
  }
  rep.test = evaluate(model.predict(tf), tt);
  return rep;
}

std::vector<Sample> samples_from_dataset(const synth::SyntheticDataset& ds,
                                         const std::vector<SurgeRecord>& recs, int T,
                                         unsigned threads) {
  std::unordered_map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.events.size(); ++i) by_id.emplace(ds.events[i].event_id, i);
  std::vector<Sample> out(recs.size());
  parallel_for(recs.size(), threads, [&](std::size_t i) {
    auto it = by_id.find(recs[i].event_id);
    if (it == by_id.end())
      throw Error("surge record for unknown event " + std::to_string(recs[i].event_id));
    out[i].features = featurize(ds.events[it->second], recs[i].r, ds.weather, T);
    out[i].target = targets_of(recs[i].s);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

GradCheck grad_check(const ModelConfig& cfg_in, int n_probes, double h, std::uint64_t seed) {
  require(n_probes >= 1, "n_probes must be >= 1");
  require(h > 0.0, "h must be positive");
  ModelConfig cfg = cfg_in;
  cfg.dropout = 0.0;
  Model model(cfg);
  model.init(seed);
  Rng rng = make_rng(seed, kStreamProbe);
  // Perturb gains and biases away from their structured init.
  for (double& p : model.params()) p += 0.1 * standard_normal(rng);

  std::vector<EventFeatures> fs(3);
  std::vector<Targets> ts(3);
  for (int b = 0; b < 3; ++b) {
    auto& f = fs[b];
    f.x = Mat::Zero(cfg.T, cfg.d);
    f.pad.assign(cfg.T, 0);
    for (int k = 0; k < cfg.T; ++k) {
      if (b == 1 && k < cfg.T / 2) {
        f.pad[k] = 1;
        f.x(k, kPadFeature) = 1.0;
        continue;
      }
      for (int j = 0; j < kPadFeature; ++j) f.x(k, j) = standard_normal(rng);
    }
    for (int j = 0; j < kHeads; ++j) ts[b][j] = standard_normal(rng);
  }
  std::vector<const EventFeatures*> ptr;
  for (auto& f : fs) ptr.push_back(&f);

  std::vector<double> g(model.params().size(), 0.0);
  model.loss_and_grad(ptr, ts, &g);

  GradCheck out;
  for (const auto& t : model.tensors()) {
    std::vector<std::size_t> probes;
    if (t.size() <= static_cast<std::size_t>(n_probes)) {
      for (std::size_t i = 0; i < t.size(); ++i) probes.push_back(t.offset + i);
    } else {
      for (int i = 0; i < n_probes; ++i) probes.push_back(t.offset + uniform_index(rng, t.size()));
    }
    double num = 0.0, da = 0.0, dn = 0.0;
    for (std::size_t pi : probes) {
      double& p = model.params()[pi];
      const double keep = p;
      p = keep + h;
      double lp = model.loss_and_grad(ptr, ts, nullptr);
      p = keep - h;
      double lm = model.loss_and_grad(ptr, ts, nullptr);
      p = keep;
      double fd = (lp - lm) / (2.0 * h);
      num += (fd - g[pi]) * (fd - g[pi]);
      da += g[pi] * g[pi];
      dn += fd * fd;
    }
    double denom = std::max(std::sqrt(da) + std::sqrt(dn), 1e-12);
    double rel = std::sqrt(num) / denom;
    out.per_tensor.emplace_back(t.name, rel);
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_tensor = t.name;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: "SGTX1", then little-endian fields.
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[] = "SGTX1";
}

std::string serialize(const Model& m) {
  binio::Out o;
  o.raw(std::string(kMagic, 5));
  const auto& c = m.config();
  for (int v : {c.T, c.d, c.D, c.L, c.n_heads, c.H}) o.i64(v);
  o.f64(c.dropout);
  o.u64(c.seed);
  for (double v : m.norm().mean) o.f64(v);
  for (double v : m.norm().std) o.f64(v);
  for (double v : m.norm().y_mean) o.f64(v);
  for (double v : m.norm().y_scale) o.f64(v);
  o.u64(m.params().size());
  for (double v : m.params()) o.f64(v);
  return o.take();
}

void save(const std::filesystem::path& path, const Model& model) {
  binio::write_file(path, serialize(model));
}

Model load(const std::filesystem::path& path) {
  binio::In in(binio::read_file(path), "estimator model file");
  if (in.raw(5) != std::string(kMagic, 5)) throw Error("not an SGTX1 estimator model");
  ModelConfig c;
  c.T = static_cast<int>(in.i64());
  c.d = static_cast<int>(in.i64());
  c.D = static_cast<int>(in.i64());
  c.L = static_cast<int>(in.i64());
  c.n_heads = static_cast<int>(in.i64());
  c.H = static_cast<int>(in.i64());
  c.dropout = in.f64();
  c.seed = in.u64();
  Model m(c);
  for (double& v : m.norm().mean) v = in.f64();
  for (double& v : m.norm().std) v = in.f64();
  for (double& v : m.norm().y_mean) v = in.f64();
  for (double& v : m.norm().y_scale) v = in.f64();
  if (in.u64() != m.params().size()) throw Error("estimator model parameter count mismatch");
  for (double& v : m.params()) v = in.f64();
  if (!in.done()) throw Error("trailing bytes in estimator model file");
  return m;
}

}  // namespace surge::estimator
