#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace digl {

// Named parameters with deterministic (lexicographic) iteration order.
using ParameterStore = std::map<std::string, Tensor>;

Tensor& add_parameter(ParameterStore& store, const std::string& path, Tensor t);

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
void init_fan_in(Tensor& t, int64_t fan_in, std::mt19937_64& rng);

struct AdamState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::map<std::string, Slot> slots;
  int64_t step = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Bias-corrected Adam with L2 decay added to the gradient before the
// moment updates. Clears gradients afterwards. Throws if any parameter
// is missing its gradient.
void adam_step(ParameterStore& store, AdamState& state);

struct GradCheckEntry {
  std::string path;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool all_pass = true;
  double worst() const;
};

// Central-difference check of the analytic gradients produced by
// `loss_fn` (which must rebuild the loss on the given tape and be
// deterministic; two baseline evaluations are compared bitwise).
// Tensors above 200 elements are spot-checked on a seeded subsample.
GradCheckReport finite_diff_check(ParameterStore& store,
                                  const std::function<Var(Tape&)>& loss_fn, double step,
                                  double tolerance, uint64_t subsample_seed = 0);

}  // namespace digl
