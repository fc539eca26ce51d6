#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "model.hpp"
#include "tape.hpp"

namespace digl {

// One training batch of link samples; rows index the summary matrix at
// prediction time (the summaries at t predict edges at t + 1).
struct LinkBatch {
  std::vector<int64_t> src_rows;
  std::vector<int64_t> dst_rows;
  std::vector<double> labels;  // 1 edge, 0 sampled non-edge
  size_t size() const { return labels.size(); }
};

struct NodeBatch {
  std::vector<int64_t> rows;
  std::vector<int64_t> labels;
  size_t size() const { return labels.size(); }
};

// Variant summarizations of every active (node, time), node-major.
struct VariantBank {
  int64_t dim = 0;
  std::vector<std::pair<int64_t, int64_t>> keys;  // (node, time)
  std::vector<double> vectors;                    // keys.size() x dim
  int64_t size() const { return static_cast<int64_t>(keys.size()); }
  const double* vec(int64_t i) const { return &vectors[i * dim]; }
  // bank position of (u, t); valid for t < t_limit used at collection
  int64_t position(int64_t u, int64_t t, int64_t t_limit) const { return u * t_limit + t; }
};

// Collects z_V values (bitwise) for times [0, t_limit).
VariantBank collect_variant_bank(const Tape& tape, const ForwardOut& fwd, int64_t t_limit);

struct InterventionSet {
  int64_t dim = 0;
  uint64_t seed = 0;
  std::vector<int64_t> bank_indices;
  std::vector<double> vectors;  // S x dim, constants in the graph
  int64_t size() const { return static_cast<int64_t>(bank_indices.size()); }
  const double* vec(int64_t i) const { return &vectors[i * dim]; }
};

// Uniform sample of S bank entries: without replacement while S fits in
// the bank, with replacement beyond that.
InterventionSet sample_interventions(const VariantBank& bank, int64_t s, uint64_t seed);

// do(P_V = s): every row of z_v becomes s (a constant; no gradient
// flows to the donor). z_i is the same tape node, untouched.
ForwardOut apply_intervention(Tape& tape, const ForwardOut& fwd, const std::vector<double>& s);

Var task_loss_link(Tape& tape, Var z_i, const LinkBatch& batch);
Var task_loss_node(Tape& tape, Var z_i, const NodeBatch& batch, Tensor& head_w, Tensor& head_b);

Var mixed_loss_link(Tape& tape, Var z_i, Var z_v, const LinkBatch& batch);
Var mixed_loss_node(Tape& tape, Var z_i, Var z_v, const NodeBatch& batch, Tensor& head_w,
                    Tensor& head_b, Tensor& variant_w, Tensor& variant_b);

// Variance of the mixed loss across the intervention rounds. The
// shared replacement makes the variant logit one value per round, so
// these run fused in O(S * batch); they equal the composed
// apply_intervention + mixed loss + variance_of_scalars route.
// `gate_variant = false` ablates the variant branch of g entirely.
Var intervention_variance_link(Tape& tape, Var z_i, const LinkBatch& batch,
                               const InterventionSet& set, bool gate_variant = true);
Var intervention_variance_node(Tape& tape, Var z_i, const NodeBatch& batch,
                               const InterventionSet& set, Tensor& head_w, Tensor& head_b,
                               Tensor& variant_w, Tensor& variant_b, bool gate_variant = true);

// Reference composition of the same quantity, one round at a time.
Var intervention_variance_composed_link(Tape& tape, const ForwardOut& fwd,
                                        const LinkBatch& batch, const InterventionSet& set);
Var intervention_variance_composed_node(Tape& tape, const ForwardOut& fwd,
                                        const NodeBatch& batch, const InterventionSet& set,
                                        Tensor& head_w, Tensor& head_b, Tensor& variant_w,
                                        Tensor& variant_b);

// Node-task shortcut loss: trains only the variant classifier head;
// z_v enters as a detached constant.
Var shortcut_loss(Tape& tape, Var z_v, const NodeBatch& batch, Tensor& variant_w,
                  Tensor& variant_b);

}  // namespace digl
