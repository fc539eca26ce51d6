#include "environment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "common.hpp"

namespace digl {

namespace {

std::vector<double> normalize_rows(const VariantBank& bank) {
  const int64_t n = bank.size(), d = bank.dim;
  std::vector<double> out(bank.vectors);
  for (int64_t i = 0; i < n; ++i) {
    double* row = &out[i * d];
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) norm += row[j] * row[j];
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (int64_t j = 0; j < d; ++j) row[j] /= norm;
    } else {
      std::fill(row, row + d, 0.0);
      row[0] = 1.0;  // zero vectors pin to a fixed unit basis vector
    }
  }
  return out;
}

double sq_dist(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

}  // namespace

EnvironmentAssignment infer_environments(const VariantBank& bank, int64_t k, uint64_t seed) {
  const int64_t n = bank.size(), d = bank.dim;
  if (n == 0) throw ValidationError("environment inference: empty variant bank");
  if (k < 1) throw UsageError("environment inference: K must be >= 1");
  if (k > n) {
    throw ValidationError("environment inference: K = " + std::to_string(k) +
                          " exceeds bank size " + std::to_string(n));
  }

  const std::vector<double> x = normalize_rows(bank);
  EnvironmentAssignment env;
  env.k = k;
  env.dim = d;
  env.assign.assign(n, 0);
  env.centroids.assign(k * d, 0.0);

  // k-means++ seeding
  std::mt19937_64 rng = make_rng(seed, 0x6e5);
  {
    std::uniform_int_distribution<int64_t> first(0, n - 1);
    const int64_t c0 = first(rng);
    std::copy(&x[c0 * d], &x[c0 * d] + d, &env.centroids[0]);
    std::vector<double> dist2(n);
    for (int64_t i = 0; i < n; ++i) dist2[i] = sq_dist(&x[i * d], &env.centroids[0], d);
    for (int64_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (double v : dist2) total += v;
      int64_t pick = 0;
      if (total <= 0.0) {
        std::uniform_int_distribution<int64_t> any(0, n - 1);
        pick = any(rng);
      } else {
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng);
        for (int64_t i = 0; i < n; ++i) {
          r -= dist2[i];
          if (r <= 0.0) {
            pick = i;
            break;
          }
        }
      }
      std::copy(&x[pick * d], &x[pick * d] + d, &env.centroids[c * d]);
      for (int64_t i = 0; i < n; ++i) {
        dist2[i] = std::min(dist2[i], sq_dist(&x[i * d], &env.centroids[c * d], d));
      }
    }
  }

  std::vector<int32_t> prev(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    // assignment step
    double objective = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double best = sq_dist(&x[i * d], &env.centroids[0], d);
      int32_t best_c = 0;
      for (int64_t c = 1; c < k; ++c) {
        const double dd = sq_dist(&x[i * d], &env.centroids[c * d], d);
        if (dd < best) {
          best = dd;
          best_c = static_cast<int32_t>(c);
        }
      }
      env.assign[i] = best_c;
      objective += best;
    }

    // empty-cluster repair: reseed at the point farthest from its centroid
    std::vector<int64_t> counts(k, 0);
    for (int32_t a : env.assign) counts[a] += 1;
    for (int64_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int64_t far = 0;
      double far_d = -1.0;
      for (int64_t i = 0; i < n; ++i) {
        if (counts[env.assign[i]] <= 1) continue;  // keep singleton clusters alive
        const double dd = sq_dist(&x[i * d], &env.centroids[env.assign[i] * d], d);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      std::copy(&x[far * d], &x[far * d] + d, &env.centroids[c * d]);
      objective -= far_d;  // that point now sits on its own centroid
      counts[env.assign[far]] -= 1;
      env.assign[far] = static_cast<int32_t>(c);
      counts[c] = 1;
    }

    env.objective_trace.push_back(objective);
    env.inertia = objective;
    if (env.assign == prev) break;
    prev = env.assign;

    // update step: unit-normalized means
    std::vector<double> sums(k * d, 0.0);
    std::vector<int64_t> sizes(k, 0);
    for (int64_t i = 0; i < n; ++i) {
      const int32_t c = env.assign[i];
      sizes[c] += 1;
      for (int64_t j = 0; j < d; ++j) sums[c * d + j] += x[i * d + j];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) continue;
      double norm = 0.0;
      for (int64_t j = 0; j < d; ++j) norm += sums[c * d + j] * sums[c * d + j];
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (int64_t j = 0; j < d; ++j) env.centroids[c * d + j] = sums[c * d + j] / norm;
      }
      // a zero mean keeps the previous centroid
    }
  }
  return env;
}

namespace {

Var env_variance(Tape& tape, Var logits_2d, const std::vector<std::vector<int64_t>>& members,
                 const std::function<Var(Tape&, Var, const std::vector<int64_t>&)>& subset_loss,
                 std::vector<double>* per_env) {
  std::vector<Var> losses;
  for (const auto& m : members) {
    if (m.empty()) continue;
    losses.push_back(subset_loss(tape, logits_2d, m));
  }
  if (losses.empty()) throw ValidationError("environment loss: every environment is empty");
  if (per_env) {
    per_env->clear();
    for (Var l : losses) per_env->push_back(tape.scalar_value(l));
  }
  return tape.variance_of_scalars(losses);
}

}  // namespace

Var environment_loss_link(Tape& tape, Var z_i, const LinkBatch& batch,
                          const std::vector<int32_t>& sample_env, int64_t k,
                          std::vector<double>* per_env) {
  if (sample_env.size() != batch.size()) {
    throw UsageError("environment loss: sample/environment size mismatch");
  }
  const int64_t n = static_cast<int64_t>(batch.size());
  Var logits = predict_link(tape, z_i, batch.src_rows, batch.dst_rows);
  Var logits_2d = tape.reshape(logits, {n, 1});
  std::vector<std::vector<int64_t>> members(k);
  for (int64_t i = 0; i < n; ++i) members[sample_env[i]].push_back(i);
  auto subset_loss = [&batch](Tape& t, Var logits_2d, const std::vector<int64_t>& m) {
    Var sel = t.reshape(t.gather_rows(logits_2d, m), {static_cast<int64_t>(m.size())});
    std::vector<double> y;
    y.reserve(m.size());
    for (int64_t i : m) y.push_back(batch.labels[i]);
    return t.bce_with_logits(sel, y);
  };
  return env_variance(tape, logits_2d, members, subset_loss, per_env);
}

Var environment_loss_node(Tape& tape, Var z_i, const NodeBatch& batch,
                          const std::vector<int32_t>& sample_env, int64_t k, Tensor& head_w,
                          Tensor& head_b, std::vector<double>* per_env) {
  if (sample_env.size() != batch.size()) {
    throw UsageError("environment loss: sample/environment size mismatch");
  }
  const int64_t n = static_cast<int64_t>(batch.size());
  Var logits = predict_node(tape, z_i, batch.rows, head_w, head_b);
  std::vector<std::vector<int64_t>> members(k);
  for (int64_t i = 0; i < n; ++i) members[sample_env[i]].push_back(i);
  auto subset_loss = [&batch](Tape& t, Var logits, const std::vector<int64_t>& m) {
    Var sel = t.gather_rows(logits, m);
    std::vector<int64_t> y;
    y.reserve(m.size());
    for (int64_t i : m) y.push_back(batch.labels[i]);
    return t.softmax_ce_with_logits(sel, y);
  };
  return env_variance(tape, logits, members, subset_loss, per_env);
}

}  // namespace digl
