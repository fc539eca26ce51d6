#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace digl {

enum class Task { kLink, kNode };

struct Edge {
  int64_t u = 0;
  int64_t v = 0;
  bool operator==(const Edge&) const = default;
  bool operator<(const Edge& o) const { return u != o.u ? u < o.u : v < o.v; }
};

struct NodeLabel {
  int64_t t = 0;
  int64_t u = 0;
  int64_t cls = 0;
  bool operator==(const NodeLabel&) const = default;
};

// T ordered snapshots over a shared node set. Edges are undirected and
// stored canonically (u <= v, deduplicated, self-loops dropped).
// Features are one N x d matrix, or T of them when temporal.
struct DynamicGraph {
  int64_t num_nodes = 0;
  int64_t num_times = 0;
  int64_t feat_dim = 0;
  bool temporal_features = false;
  Task task = Task::kLink;
  int64_t num_classes = 0;

  std::vector<std::vector<Edge>> snapshots;
  std::vector<std::vector<double>> features;  // row-major N x feat_dim each
  std::vector<NodeLabel> labels;
  std::vector<std::vector<Edge>> pinned_negatives;  // per time, may be empty
  std::string provenance_json;  // generator settings carried in meta.json

  const std::vector<double>& features_at(int64_t t) const {
    return temporal_features ? features[t] : features[0];
  }
  bool has_edge(int64_t t, int64_t u, int64_t v) const;
  void validate() const;
};

DynamicGraph load_dataset(const std::string& dir);
void write_dataset(const DynamicGraph& g, const std::string& dir);

// For each (node u, time t), the pairs (v, t') with t' in
// (t - W, t], v adjacent to u in snapshot t', plus the self pair (u, t)
// which always comes first. Rows are indexed time-major: t * N + u.
struct NeighborhoodIndex {
  int64_t num_nodes = 0;
  int64_t num_times = 0;
  int64_t window = 0;  // 0 means full history
  std::vector<int64_t> offsets;    // size N*T + 1
  std::vector<int64_t> neighbors;  // flat row ids t' * N + v

  int64_t row(int64_t u, int64_t t) const { return t * num_nodes + u; }
  // offsets restricted to rows with t <= t_max (they form a prefix)
  int64_t rows_up_to(int64_t t_max) const { return (t_max + 1) * num_nodes; }
};

NeighborhoodIndex build_neighborhood_index(const DynamicGraph& g, int64_t window);

// Fixed sinusoidal encoding, parameter free:
// TE(t)[2i] = sin(t / 10000^(2i/d)), TE(t)[2i+1] = cos(t / 10000^(2i/d)).
std::vector<double> temporal_encoding(int64_t t, int64_t d_te);

struct SplitPlan {
  Task task = Task::kLink;
  // link task: target snapshot indices (predictions at target - 1);
  // node task: label times
  int64_t train_lo = 0, train_hi = 0;  // [lo, hi)
  int64_t val_lo = 0, val_hi = 0;
  int64_t test_lo = 0, test_hi = 0;
  std::map<int64_t, std::vector<Edge>> negatives;  // pinned per target time
};

// Chronological split; for link prediction usable targets are
// 1..num_times-1. Fills the negative table for every split from
// pinned_negatives when present, otherwise from a fixed seed so that
// evaluation negatives are identical across runs.
SplitPlan chronological_split(const DynamicGraph& g, int64_t train_len, int64_t val_len,
                              int64_t test_len);

// Uniform distinct non-edges (unordered pairs) of snapshot t.
std::vector<Edge> sample_negatives(const DynamicGraph& g, int64_t t, int64_t count,
                                   uint64_t seed);

}  // namespace digl
