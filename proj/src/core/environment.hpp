#pragma once

#include <cstdint>
#include <vector>

#include "objectives.hpp"
#include "tape.hpp"

namespace digl {

struct EnvironmentAssignment {
  int64_t k = 0;
  int64_t dim = 0;
  std::vector<int32_t> assign;      // aligned with the bank order
  std::vector<double> centroids;    // k x dim, unit norm
  double inertia = 0.0;             // final sum of squared distances
  std::vector<double> objective_trace;  // one value per Lloyd iteration
};

// Spherical k-means over detached variant vectors: rows are
// L2-normalized (zero rows map to e0), k-means++ seeding, Lloyd
// iterations to an assignment fixpoint or 100 rounds. Empty clusters
// are reseeded at the point farthest from its assigned centroid.
EnvironmentAssignment infer_environments(const VariantBank& bank, int64_t k, uint64_t seed);

// Per-environment task losses and their population variance. Empty
// environments are skipped; errors if every environment is empty.
Var environment_loss_link(Tape& tape, Var z_i, const LinkBatch& batch,
                          const std::vector<int32_t>& sample_env, int64_t k,
                          std::vector<double>* per_env = nullptr);
Var environment_loss_node(Tape& tape, Var z_i, const NodeBatch& batch,
                          const std::vector<int32_t>& sample_env, int64_t k, Tensor& head_w,
                          Tensor& head_b, std::vector<double>* per_env = nullptr);

}  // namespace digl
