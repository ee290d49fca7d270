#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "surge/empirics.hpp"
#include "surge/records.hpp"

namespace surge::causal {

struct CausalSample {
  double x = 0.0;          // treatment (penetration, fraction)
  double y = 0.0;          // outcome (surge ratio)
  std::vector<double> z;   // confounders
};

// Confounders: temp, duration, customers, hour (sin, cos, raw), plus ghi for DER.
std::vector<std::string> confounder_names(empirics::Asset asset);
std::vector<CausalSample> samples_from_records(const std::vector<SurgeRecord>& recs,
                                               empirics::Asset asset);

struct ForestConfig {
  int n_trees = 500;
  double subsample_fraction = 0.5;  // of each little bag's half-sample
  int min_leaf = 10;
  double honesty_fraction = 0.5;    // share of a tree's sample used for splits
  int n_folds = 5;
  int max_depth = 20;
  int mtry = 0;                     // 0 = ceil(sqrt(dim))
  int ci_group_size = 2;
  bool local_centering = true;
  int nuisance_trees = 100;
  int nuisance_min_leaf = 15;
  std::uint64_t seed = 1;

  void validate() const;
};

// Estimation-half sufficient statistics of a node.
struct Moments {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;

  void add(double x, double y) {
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double var_x() const { return sxx - sx * sx / n; }
  bool usable() const;
  double slope() const { return (sxy - sx * sy / n) / var_x(); }
};

struct Node {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1, parent = -1;
  Moments est;
};

struct Tree {
  int fold = 0;   // held-out fold: the tree never saw these samples
  int group = 0;  // little bag sharing one half-sample
  std::vector<Node> nodes;

  // Index of the node whose estimation moments answer a query at z: the leaf,
  // or the nearest ancestor when the leaf is degenerate.
  int locate(const std::vector<double>& z) const;
};

struct ForestModel {
  ForestConfig config;
  std::size_t dim = 0;
  std::vector<Tree> trees;
  // Training data after local centering, with fold labels.
  std::vector<CausalSample> train;
  std::vector<double> x_hat, y_hat;  // out-of-fold nuisance fits
  std::vector<int> fold;
  std::vector<double> z_min, z_max;

  bool extrapolates(const std::vector<double>& z) const;
};

ForestModel fit(const std::vector<CausalSample>& samples, const ForestConfig& config,
                unsigned threads = 1);

// Samples drawn by tree t: a subsample of its little bag's half of the
// out-of-fold pool, split at random into structure and estimation halves.
struct TreeHalves {
  int fold = 0, group = 0;
  std::vector<std::size_t> structure, estimation;
};
TreeHalves tree_halves(const ForestConfig& config, const std::vector<int>& fold, std::size_t t);

struct LocalEffect {
  double tau = 0.0;  // per unit treatment
  bool extrapolated = false;
  int trees_used = 0;
};

// Fresh query: aggregates every tree.
LocalEffect local_effect(const ForestModel& model, const std::vector<double>& z);
// Training sample i: aggregates only trees whose held-out fold holds i.
LocalEffect local_effect_crossfit(const ForestModel& model, std::size_t i);

struct AteResult {
  std::vector<double> local_effects;  // scaled
  double ate_mean = 0.0;
  double se = 0.0;
  double se_score = 0.0;   // doubly robust score part (training ATE only)
  double se_forest = 0.0;  // tree-group half-sample part
  double ci_lo = 0.0, ci_hi = 0.0;
  double scale = 0.1;
};

// ATE over the training samples with cross-fit local effects. The variance
// adds the doubly robust score variance to the tree-group variance.
AteResult ate(const ForestModel& model, double scale = 0.1, unsigned threads = 1);
// ATE over fresh confounder vectors using all trees; tree-group variance only.
AteResult ate(const ForestModel& model, const std::vector<std::vector<double>>& zs,
              double scale = 0.1, unsigned threads = 1);

void save(const std::filesystem::path& path, const ForestModel& model);
ForestModel load(const std::filesystem::path& path);
std::string serialize(const ForestModel& model);

}  // namespace surge::causal

namespace surge::causal {
template <class V>
void visit_fields(V& v, ForestConfig& c) {
  v("n_trees", c.n_trees);
  v("subsample_fraction", c.subsample_fraction);
  v("min_leaf", c.min_leaf);
  v("honesty_fraction", c.honesty_fraction);
  v("n_folds", c.n_folds);
  v("max_depth", c.max_depth);
  v("mtry", c.mtry);
  v("ci_group_size", c.ci_group_size);
  v("local_centering", c.local_centering);
  v("nuisance_trees", c.nuisance_trees);
  v("nuisance_min_leaf", c.nuisance_min_leaf);
  v("seed", c.seed);
}
}  // namespace surge::causal
