#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graph.hpp"

namespace digl {

struct SynthConfig {
  int64_t num_nodes = 300;
  int64_t steps = 12;  // prediction steps; the dataset gets steps + 1 snapshots
  int64_t communities = 5;
  double p_intra = 0.10;
  double p_inter = 0.01;
  double drift = 0.5;  // oscillation of the inter-community affinities
  int64_t half_dim = 16;

  double pbar_train = 0.6;
  double sigma_train = 0.05;
  double pbar_test = 0.1;
  double sigma_test = 0.0;
  int64_t train_steps = -1;  // -1: steps - round(steps/4) - 1
  int64_t val_steps = 1;

  uint64_t seed = 1;

  double recon_lr = 0.1;
  double recon_weight_decay = 1e-5;
  int64_t recon_patience = 50;
  int64_t recon_max_steps = 2000;
  double recon_auc_gate = 0.99;

  int64_t resolved_train_steps() const;
  int64_t test_steps() const { return steps - resolved_train_steps() - val_steps; }
  void check() const;
};

struct GenReport {
  std::vector<double> recon_auc;  // per feature time 0..steps-1
  std::vector<double> p_trace;
  std::string config_json;
  std::string to_json() const;
};

// p(t) = clip(pbar + sigma * cos t, 0, 1), t in raw integer radians.
double shift_probability(int64_t t, double pbar, double sigma);

// Drifting stochastic block model with static Gaussian features
// (rows normalized); community assignment fixed, inter-community
// affinities rotate slowly across snapshots.
DynamicGraph generate_base_graph(const SynthConfig& cfg);

// Expected edge count of snapshot t under the block model (for tests).
double expected_edges(const SynthConfig& cfg, int64_t t);

// floor(p * |E^{t+1}|) true future edges plus enough uniformly drawn
// non-edges to reach |E^{t+1}| sampled links.
std::vector<Edge> sample_shift_links(const DynamicGraph& g, int64_t t_next, double p,
                                     uint64_t seed);

struct VariantFeatures {
  int64_t half_dim = 0;
  std::vector<std::vector<double>> x2;  // steps matrices, N x half_dim
  std::vector<double> auc;              // achieved reconstruction AUC per t
};

// Trains X_2^t against the sampled-link sets by inner-product
// reconstruction (Adam, fresh negatives per step, pinned eval
// negatives, early stopping on AUC). Errors if any t misses the gate.
VariantFeatures train_variant_features(const DynamicGraph& base,
                                       const std::vector<std::vector<Edge>>& sampled,
                                       const SynthConfig& cfg);

// Full pipeline: base graph, p(t) schedule, sampled links, variant
// features, assembly, pinned eval negatives; writes the dataset plus
// genreport.json into out_dir when non-empty.
GenReport generate_dataset(const SynthConfig& cfg, const std::string& out_dir,
                           DynamicGraph* out_graph = nullptr);

}  // namespace digl
