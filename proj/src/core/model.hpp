#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graph.hpp"
#include "optim.hpp"
#include "tape.hpp"

namespace digl {

struct NetworkConfig {
  int64_t layers = 2;
  int64_t hidden = 16;
  int64_t heads = 1;
  int64_t te_dim = 8;
  Task task = Task::kLink;
  int64_t num_classes = 0;
  // single-branch attention without masks when false (the bottom rung
  // of the ablation ladder)
  bool disentangled = true;

  void check() const;
};

// Summaries for one forward pass. Rows are time-major (t * N + u) over
// times 0..n_times-1; z_i and z_v are {rows, hidden}.
struct LayerSummaries {
  Var z_i;
  Var z_v;
};

struct ForwardOut {
  int64_t num_nodes = 0;
  int64_t n_times = 0;  // times covered by this pass (t_max + 1)
  std::vector<LayerSummaries> layers;
  Var z_i;  // top layer
  Var z_v;
  int64_t row(int64_t u, int64_t t) const { return t * num_nodes + u; }
  int64_t rows() const { return num_nodes * n_times; }
};

// Disentangled spatio-temporal attention network. Parameters live in a
// ParameterStore under the paths
//   input_fc.{W,b}
//   layer{i}.head{j}.{Wq,Wk,Wv}
//   layer{i}.wf
//   layer{i}.{inv,var}.{ln_gain,ln_bias,mlp.W1,mlp.b1,mlp.W2,mlp.b2,alpha}
//   head.{W,b} and variant_head.{W,b} on node tasks
struct Network {
  NetworkConfig cfg;
  int64_t feat_dim = 0;
  ParameterStore params;

  static Network init(const NetworkConfig& cfg, int64_t feat_dim, uint64_t seed);

  // Forward over all (u, t) with t <= t_max.
  ForwardOut forward(Tape& tape, const DynamicGraph& g, const NeighborhoodIndex& index,
                     int64_t t_max);

  Tensor& param(const std::string& path);
  const Tensor& param(const std::string& path) const;
};

// f for link prediction: logit(u,v) = z(u) . z(v)
Var predict_link(Tape& tape, Var z, const std::vector<int64_t>& src_rows,
                 const std::vector<int64_t>& dst_rows);

// f for node classification: one logit row per selected summary row
Var predict_node(Tape& tape, Var z, const std::vector<int64_t>& rows, Tensor& head_w,
                 Tensor& head_b);

// g: invariant logit gated by the sigmoid of the variant logit
Var predict_mixed_link(Tape& tape, Var z_i, Var z_v, const std::vector<int64_t>& src_rows,
                       const std::vector<int64_t>& dst_rows);
Var predict_mixed_node(Tape& tape, Var z_i, Var z_v, const std::vector<int64_t>& rows,
                       Tensor& head_w, Tensor& head_b, Tensor& variant_w, Tensor& variant_b);

}  // namespace digl
