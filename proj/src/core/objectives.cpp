#include "objectives.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace digl {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_term(double z, double y) {
  if (z > 0.0) return z * (1.0 - y) + std::log1p(std::exp(-z));
  return -z * y + std::log1p(std::exp(z));
}

double pop_variance(const std::vector<double>& xs, double* mean_out) {
  bool all_equal = true;
  for (double x : xs) all_equal = all_equal && (x == xs[0]);
  if (all_equal) {
    *mean_out = xs[0];
    return 0.0;
  }
  double mu = 0.0;
  for (double x : xs) mu += x;
  mu /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mu) * (x - mu);
  *mean_out = mu;
  return var / static_cast<double>(xs.size());
}

}  // namespace

VariantBank collect_variant_bank(const Tape& tape, const ForwardOut& fwd, int64_t t_limit) {
  if (t_limit < 1 || t_limit > fwd.n_times) {
    throw UsageError("variant bank: t_limit out of range");
  }
  const Tensor& zv = tape.value(fwd.z_v);
  VariantBank bank;
  bank.dim = zv.shape[1];
  bank.keys.reserve(fwd.num_nodes * t_limit);
  bank.vectors.reserve(fwd.num_nodes * t_limit * bank.dim);
  for (int64_t u = 0; u < fwd.num_nodes; ++u) {
    for (int64_t t = 0; t < t_limit; ++t) {
      bank.keys.emplace_back(u, t);
      const double* row = &zv.values[fwd.row(u, t) * bank.dim];
      bank.vectors.insert(bank.vectors.end(), row, row + bank.dim);
    }
  }
  return bank;
}

InterventionSet sample_interventions(const VariantBank& bank, int64_t s, uint64_t seed) {
  if (bank.size() == 0) throw ValidationError("sample_interventions: empty variant bank");
  if (s < 1) throw UsageError("sample_interventions: S must be >= 1");
  InterventionSet set;
  set.dim = bank.dim;
  set.seed = seed;
  std::mt19937_64 rng = make_rng(seed, 0x1f7);
  const int64_t n = bank.size();
  if (s <= n) {
    // partial Fisher-Yates over bank indices
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    for (int64_t i = 0; i < s; ++i) {
      std::uniform_int_distribution<int64_t> dist(i, n - 1);
      std::swap(idx[i], idx[dist(rng)]);
      set.bank_indices.push_back(idx[i]);
    }
  } else {
    std::uniform_int_distribution<int64_t> dist(0, n - 1);
    for (int64_t i = 0; i < s; ++i) set.bank_indices.push_back(dist(rng));
  }
  set.vectors.reserve(s * set.dim);
  for (int64_t i : set.bank_indices) {
    const double* v = bank.vec(i);
    set.vectors.insert(set.vectors.end(), v, v + set.dim);
  }
  return set;
}

ForwardOut apply_intervention(Tape& tape, const ForwardOut& fwd, const std::vector<double>& s) {
  const Tensor& zv = tape.value(fwd.z_v);
  if (static_cast<int64_t>(s.size()) != zv.shape[1]) {
    throw UsageError("apply_intervention: vector dimension " + std::to_string(s.size()) +
                     " does not match summaries " + std::to_string(zv.shape[1]));
  }
  Tensor tiled({zv.shape[0], zv.shape[1]});
  for (int64_t r = 0; r < zv.shape[0]; ++r) {
    std::copy(s.begin(), s.end(), tiled.values.begin() + r * zv.shape[1]);
  }
  ForwardOut out = fwd;
  out.z_v = tape.constant(std::move(tiled));
  if (!out.layers.empty()) out.layers.back().z_v = out.z_v;
  return out;
}

Var task_loss_link(Tape& tape, Var z_i, const LinkBatch& batch) {
  if (batch.size() == 0) throw UsageError("task_loss: empty batch");
  return tape.bce_with_logits(predict_link(tape, z_i, batch.src_rows, batch.dst_rows),
                              batch.labels);
}

Var task_loss_node(Tape& tape, Var z_i, const NodeBatch& batch, Tensor& head_w,
                   Tensor& head_b) {
  if (batch.size() == 0) throw UsageError("task_loss: empty batch");
  return tape.softmax_ce_with_logits(predict_node(tape, z_i, batch.rows, head_w, head_b),
                                     batch.labels);
}

Var mixed_loss_link(Tape& tape, Var z_i, Var z_v, const LinkBatch& batch) {
  return tape.bce_with_logits(
      predict_mixed_link(tape, z_i, z_v, batch.src_rows, batch.dst_rows), batch.labels);
}

Var mixed_loss_node(Tape& tape, Var z_i, Var z_v, const NodeBatch& batch, Tensor& head_w,
                    Tensor& head_b, Tensor& variant_w, Tensor& variant_b) {
  return tape.softmax_ce_with_logits(
      predict_mixed_node(tape, z_i, z_v, batch.rows, head_w, head_b, variant_w, variant_b),
      batch.labels);
}

Var intervention_variance_link(Tape& tape, Var z_i, const LinkBatch& batch,
                               const InterventionSet& set, bool gate_variant) {
  if (set.size() == 0) throw UsageError("intervention variance: S must be >= 1");
  if (batch.size() == 0) throw UsageError("intervention variance: empty batch");
  const int64_t s = set.size();
  const int64_t n = static_cast<int64_t>(batch.size());

  Var logits = predict_link(tape, z_i, batch.src_rows, batch.dst_rows);
  // one shared s per round: the variant logit is s . s for every pair
  std::vector<double> gates(s, 1.0);
  if (gate_variant) {
    for (int64_t i = 0; i < s; ++i) {
      const double* v = set.vec(i);
      double dot = 0.0;
      for (int64_t j = 0; j < set.dim; ++j) dot += v[j] * v[j];
      gates[i] = stable_sigmoid(dot);
    }
  }
  const Tensor& lv = tape.value(logits);
  std::vector<double> losses(s, 0.0);
  for (int64_t i = 0; i < s; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < n; ++j) acc += bce_term(gates[i] * lv.values[j], batch.labels[j]);
    losses[i] = acc / static_cast<double>(n);
  }
  double mu = 0.0;
  const double var = pop_variance(losses, &mu);
  auto labels = batch.labels;
  return tape.custom(Tensor::scalar(var),
                     [logits, gates, losses, labels, mu, s, n](Tape& t, Tape::Node& self) {
                       const double go = self.grad[0];
                       const Tensor& lv = t.value(logits);
                       std::vector<double>& gl = t.grad_buffer(logits);
                       for (int64_t i = 0; i < s; ++i) {
                         const double coeff =
                             go * 2.0 * (losses[i] - mu) / static_cast<double>(s);
                         if (coeff == 0.0) continue;
                         const double gate = gates[i];
                         for (int64_t j = 0; j < n; ++j) {
                           const double p = stable_sigmoid(gate * lv.values[j]);
                           gl[j] += coeff * gate * (p - labels[j]) / static_cast<double>(n);
                         }
                       }
                     });
}

Var intervention_variance_node(Tape& tape, Var z_i, const NodeBatch& batch,
                               const InterventionSet& set, Tensor& head_w, Tensor& head_b,
                               Tensor& variant_w, Tensor& variant_b, bool gate_variant) {
  if (set.size() == 0) throw UsageError("intervention variance: S must be >= 1");
  if (batch.size() == 0) throw UsageError("intervention variance: empty batch");
  const int64_t s = set.size();
  const int64_t n = static_cast<int64_t>(batch.size());
  const int64_t c = head_b.numel();

  Var inv_logits = predict_node(tape, z_i, batch.rows, head_w, head_b);
  if (!gate_variant) {
    // g collapses to f(z_I): every round yields the same loss
    std::vector<Var> one = {
        tape.softmax_ce_with_logits(inv_logits, batch.labels)};
    std::vector<Var> all(s, one[0]);
    return tape.variance_of_scalars(all);
  }

  // per-round gate logits: f_variant(s_i), one row per round
  Tensor smat({s, set.dim}, set.vectors);
  Var gate_logits = tape.add_row_vector(tape.matmul(tape.constant(std::move(smat)),
                                                    tape.leaf(variant_w)),
                                        tape.leaf(variant_b));

  const Tensor& av = tape.value(inv_logits);
  const Tensor& gv = tape.value(gate_logits);
  auto labels = batch.labels;
  std::vector<double> losses(s, 0.0);
  std::vector<double> mixed(c);
  for (int64_t i = 0; i < s; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double mx = -1e300;
      for (int64_t k = 0; k < c; ++k) {
        mixed[k] = av.values[j * c + k] * stable_sigmoid(gv.values[i * c + k]);
        mx = std::max(mx, mixed[k]);
      }
      double sum = 0.0;
      for (int64_t k = 0; k < c; ++k) sum += std::exp(mixed[k] - mx);
      acc += mx + std::log(sum) - mixed[labels[j]];
    }
    losses[i] = acc / static_cast<double>(n);
  }
  double mu = 0.0;
  const double var = pop_variance(losses, &mu);
  return tape.custom(
      Tensor::scalar(var),
      [inv_logits, gate_logits, losses, labels, mu, s, n, c](Tape& t, Tape::Node& self) {
        const double go = self.grad[0];
        const Tensor& av = t.value(inv_logits);
        const Tensor& gv = t.value(gate_logits);
        std::vector<double>& ga = t.grad_buffer(inv_logits);
        std::vector<double>& gg = t.grad_buffer(gate_logits);
        std::vector<double> mixed(c), prob(c), sig(c);
        for (int64_t i = 0; i < s; ++i) {
          const double coeff = go * 2.0 * (losses[i] - mu) / static_cast<double>(s);
          if (coeff == 0.0) continue;
          for (int64_t k = 0; k < c; ++k) sig[k] = stable_sigmoid(gv.values[i * c + k]);
          for (int64_t j = 0; j < n; ++j) {
            double mx = -1e300;
            for (int64_t k = 0; k < c; ++k) {
              mixed[k] = av.values[j * c + k] * sig[k];
              mx = std::max(mx, mixed[k]);
            }
            double sum = 0.0;
            for (int64_t k = 0; k < c; ++k) {
              prob[k] = std::exp(mixed[k] - mx);
              sum += prob[k];
            }
            for (int64_t k = 0; k < c; ++k) {
              const double dmix =
                  (prob[k] / sum - (k == labels[j] ? 1.0 : 0.0)) / static_cast<double>(n);
              ga[j * c + k] += coeff * dmix * sig[k];
              gg[i * c + k] +=
                  coeff * dmix * av.values[j * c + k] * sig[k] * (1.0 - sig[k]);
            }
          }
        }
      });
}

Var intervention_variance_composed_link(Tape& tape, const ForwardOut& fwd,
                                        const LinkBatch& batch, const InterventionSet& set) {
  std::vector<Var> losses;
  for (int64_t i = 0; i < set.size(); ++i) {
    std::vector<double> s(set.vec(i), set.vec(i) + set.dim);
    ForwardOut intervened = apply_intervention(tape, fwd, s);
    losses.push_back(mixed_loss_link(tape, intervened.z_i, intervened.z_v, batch));
  }
  return tape.variance_of_scalars(losses);
}

Var intervention_variance_composed_node(Tape& tape, const ForwardOut& fwd,
                                        const NodeBatch& batch, const InterventionSet& set,
                                        Tensor& head_w, Tensor& head_b, Tensor& variant_w,
                                        Tensor& variant_b) {
  std::vector<Var> losses;
  for (int64_t i = 0; i < set.size(); ++i) {
    std::vector<double> s(set.vec(i), set.vec(i) + set.dim);
    ForwardOut intervened = apply_intervention(tape, fwd, s);
    losses.push_back(mixed_loss_node(tape, intervened.z_i, intervened.z_v, batch, head_w,
                                     head_b, variant_w, variant_b));
  }
  return tape.variance_of_scalars(losses);
}

Var shortcut_loss(Tape& tape, Var z_v, const NodeBatch& batch, Tensor& variant_w,
                  Tensor& variant_b) {
  if (batch.size() == 0) throw UsageError("shortcut_loss: empty batch");
  // detach: gradients reach the variant head only
  Var detached = tape.constant(tape.value(z_v));
  return tape.softmax_ce_with_logits(
      predict_node(tape, detached, batch.rows, variant_w, variant_b), batch.labels);
}

}  // namespace digl
