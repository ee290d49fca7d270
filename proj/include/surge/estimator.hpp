#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "surge/records.hpp"
#include "surge/synth.hpp"

namespace surge::estimator {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline constexpr int kHeads = 4;  // ev, hp, der, oth
inline constexpr int kFeatureDim = 16;
extern const std::array<const char*, kFeatureDim> kFeatureNames;
extern const std::array<const char*, kHeads> kHeadNames;

struct ModelConfig {
  int T = 32;
  int d = kFeatureDim;
  int D = 64;
  int L = 2;
  int n_heads = 4;
  int H = 64;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
  int ffn() const { return 2 * D; }
};

// Raw (unnormalized) per-step features; row k is the step k*15 min after the
// first step, the last row is the restoration step.
struct EventFeatures {
  Mat x;                   // S x d
  std::vector<char> pad;   // S flags

  int steps() const { return static_cast<int>(x.rows()); }
};

// Restoration-anchored window of T steps; steps before the weather start are
// padding. Missing weather at restoration is an error.
EventFeatures featurize(const OutageEvent& event, const PenetrationRates& rates,
                        const WeatherTrace& weather, int T);

// Same layout for a hypothetical restoration with constant weather.
EventFeatures featurize_fixed(Minutes restoration, double duration_h, const WeatherSample& w,
                              const PenetrationRates& rates, int T);

using Targets = std::array<double, kHeads>;
Targets targets_of(const SurgeComponents& s);

// Named parameter tensor inside the flat buffer.
struct Tensor {
  std::string name;
  int rows = 0, cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct Normalization {
  std::vector<double> mean, std;  // per feature (pad flag untouched)
  Targets y_mean{0, 0, 0, 0}, y_scale{1, 1, 1, 1};
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  Normalization& norm() { return norm_; }
  const Normalization& norm() const { return norm_; }
  const Tensor& tensor(const std::string& name) const;

  void init(std::uint64_t seed);

  // Eval-mode predictions, one row per event.
  std::vector<Targets> predict(const std::vector<EventFeatures>& batch) const;

  // Summed-MSE loss and its gradient (added into `grad`, same layout as
  // params). Dropout is applied when `dropout_seed` is non-zero. `denom`
  // overrides the batch size in the mean so chunked batches sum exactly.
  double loss_and_grad(const std::vector<const EventFeatures*>& batch,
                       const std::vector<Targets>& targets, std::vector<double>* grad,
                       std::uint64_t dropout_seed = 0, double denom = 0.0) const;

 private:
  struct Cache;
  void forward(const std::vector<const EventFeatures*>& batch, Cache& c, std::uint64_t dropout_seed,
               bool keep) const;

  ModelConfig cfg_;
  std::vector<Tensor> tensors_;
  std::vector<double> params_;
  Normalization norm_;
};

// Sum over heads of the batch mean squared error.
double loss(const std::vector<Targets>& pred, const std::vector<Targets>& target);

struct TrainConfig {
  int epochs = 40;
  int batch = 64;
  double lr = 1e-3;
  double lr_final = 0.05;  // fraction of lr reached by the last epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;  // of the training split
  int patience = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct HeadMetrics {
  double r2 = 0.0, rmse = 0.0, mae = 0.0;
  bool degenerate = false;  // zero target variance
};

struct TrainReport {
  std::array<HeadMetrics, kHeads> test;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool diverged = false;
  std::vector<double> train_loss, val_loss;
  std::vector<std::size_t> test_index;
};

struct Sample {
  EventFeatures features;
  Targets target{};
};

// Fits normalization statistics and trains. `threads` only splits the batch
// into fixed chunks whose gradients are summed in chunk order.
TrainReport train(Model& model, const std::vector<Sample>& data, const TrainConfig& tc,
                  unsigned threads = 1);

std::array<HeadMetrics, kHeads> evaluate(const std::vector<Targets>& pred,
                                         const std::vector<Targets>& target);

std::vector<Sample> samples_from_dataset(const synth::SyntheticDataset& ds,
                                         const std::vector<SurgeRecord>& recs, int T,
                                         unsigned threads = 1);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::vector<std::pair<std::string, double>> per_tensor;
};

// Central differences against backprop on random probes of every tensor.
GradCheck grad_check(const ModelConfig& cfg, int n_probes, double h = 1e-5,
                     std::uint64_t seed = 1);

// Parametric response tables: one input varied over `values` (optionally for
// each value of a second `series` input), everything else held at `fixed`.
// Inputs: hour, month, temp_c, ghi, pw, duration_h, r_ev, r_hp, r_der.
struct SweepSpec {
  std::string vary = "duration_h";
  std::vector<double> values;
  std::string series;  // empty for a single curve
  std::vector<double> series_values;
  std::map<std::string, double> fixed;  // overrides of sweep_defaults()
};

std::map<std::string, double> sweep_defaults();

struct SweepRow {
  double series_value = 0.0;
  double value = 0.0;
  Targets pred{};
  double total() const { return pred[0] + pred[1] + pred[2] + pred[3]; }
};

std::vector<SweepRow> sweep(const Model& model, const SweepSpec& spec);

void save(const std::filesystem::path& path, const Model& model);
Model load(const std::filesystem::path& path);
std::string serialize(const Model& model);

}  // namespace surge::estimator

namespace surge::estimator {
template <class V>
void visit_fields(V& v, ModelConfig& c) {
  v("T", c.T);
  v("D", c.D);
  v("L", c.L);
  v("n_heads", c.n_heads);
  v("H", c.H);
  v("dropout", c.dropout);
  v("seed", c.seed);
}
template <class V>
void visit_fields(V& v, TrainConfig& c) {
  v("epochs", c.epochs);
  v("batch", c.batch);
  v("lr", c.lr);
  v("lr_final", c.lr_final);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("eps", c.eps);
  v("clip_norm", c.clip_norm);
  v("train_fraction", c.train_fraction);
  v("val_fraction", c.val_fraction);
  v("patience", c.patience);
  v("seed", c.seed);
}
}  // namespace surge::estimator
