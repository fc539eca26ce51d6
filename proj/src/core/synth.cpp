#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "common.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "tape.hpp"

using nlohmann::json;

namespace digl {

int64_t SynthConfig::resolved_train_steps() const {
  if (train_steps > 0) return train_steps;
  const int64_t test = std::max<int64_t>(1, (steps + 2) / 4);
  return steps - test - val_steps;
}

void SynthConfig::check() const {
  if (num_nodes < 10) throw UsageError("synth: need at least 10 nodes");
  if (steps + 1 < 4) throw UsageError("synth: need at least 4 snapshots (3 steps)");
  if (communities < 1 || communities > num_nodes) throw UsageError("synth: bad community count");
  if (p_intra <= 0.0 && p_inter <= 0.0) {
    throw UsageError("synth: zero edge probability everywhere");
  }
  if (half_dim < 1) throw UsageError("synth: half_dim must be >= 1");
  if (resolved_train_steps() < 1 || test_steps() < 1) {
    throw UsageError("synth: schedule split leaves an empty range");
  }
}

double shift_probability(int64_t t, double pbar, double sigma) {
  const double p = pbar + sigma * std::cos(static_cast<double>(t));
  return std::clamp(p, 0.0, 1.0);
}

namespace {

int64_t community_of(int64_t u, int64_t n, int64_t c) { return u * c / n; }

double block_probability(const SynthConfig& cfg, int64_t t, int64_t ca, int64_t cb) {
  if (ca == cb) return std::clamp(cfg.p_intra, 0.0, 1.0);
  const double snapshots = static_cast<double>(cfg.steps + 1);
  const double phase = 2.0 * M_PI * static_cast<double>(ca + cb) /
                       static_cast<double>(cfg.communities);
  const double wobble =
      1.0 + cfg.drift * std::cos(2.0 * M_PI * static_cast<double>(t) / snapshots + phase);
  return std::clamp(cfg.p_inter * wobble, 0.0, 1.0);
}

}  // namespace

double expected_edges(const SynthConfig& cfg, int64_t t) {
  double e = 0.0;
  for (int64_t u = 0; u < cfg.num_nodes; ++u) {
    for (int64_t v = u + 1; v < cfg.num_nodes; ++v) {
      e += block_probability(cfg, t, community_of(u, cfg.num_nodes, cfg.communities),
                             community_of(v, cfg.num_nodes, cfg.communities));
    }
  }
  return e;
}

DynamicGraph generate_base_graph(const SynthConfig& cfg) {
  cfg.check();
  const int64_t n = cfg.num_nodes;
  const int64_t snapshots = cfg.steps + 1;

  DynamicGraph g;
  g.num_nodes = n;
  g.num_times = snapshots;
  g.feat_dim = cfg.half_dim;  // X_1 only; assembly widens to 2 * half_dim
  g.snapshots.assign(snapshots, {});

  std::mt19937_64 rng = make_rng(cfg.seed, 0xBA5E);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int64_t t = 0; t < snapshots; ++t) {
    for (int64_t u = 0; u < n; ++u) {
      const int64_t cu = community_of(u, n, cfg.communities);
      for (int64_t v = u + 1; v < n; ++v) {
        const int64_t cv = community_of(v, n, cfg.communities);
        if (coin(rng) < block_probability(cfg, t, cu, cv)) g.snapshots[t].push_back({u, v});
      }
    }
  }

  std::mt19937_64 frng = make_rng(cfg.seed, 0xF3A7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x1(n * cfg.half_dim);
  for (int64_t u = 0; u < n; ++u) {
    double norm = 0.0;
    for (int64_t j = 0; j < cfg.half_dim; ++j) {
      x1[u * cfg.half_dim + j] = gauss(frng);
      norm += x1[u * cfg.half_dim + j] * x1[u * cfg.half_dim + j];
    }
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (int64_t j = 0; j < cfg.half_dim; ++j) x1[u * cfg.half_dim + j] /= norm;
    }
  }
  g.features.push_back(std::move(x1));
  return g;
}

std::vector<Edge> sample_shift_links(const DynamicGraph& g, int64_t t_next, double p,
                                     uint64_t seed) {
  if (t_next < 1 || t_next >= g.num_times) throw UsageError("sample_shift_links: bad timestamp");
  const auto& edges = g.snapshots[t_next];
  const int64_t m = static_cast<int64_t>(edges.size());
  const int64_t n_pos = static_cast<int64_t>(std::floor(p * static_cast<double>(m)));
  const int64_t n_neg = m - n_pos;

  std::mt19937_64 rng = make_rng(seed, 0x5A9);
  std::vector<Edge> pool = edges;
  std::vector<Edge> out;
  out.reserve(m);
  for (int64_t i = 0; i < n_pos; ++i) {
    std::uniform_int_distribution<int64_t> dist(i, m - 1);
    std::swap(pool[i], pool[dist(rng)]);
    out.push_back(pool[i]);
  }
  if (n_neg > 0) {
    const auto negs = sample_negatives(g, t_next, n_neg, mix_seed(seed, 0x5AA));
    out.insert(out.end(), negs.begin(), negs.end());
  }
  return out;
}

namespace {

// inner-product AUC of embedding x2 on positives vs fixed negatives
double recon_auc(const std::vector<double>& x2, int64_t d, const std::vector<Edge>& pos,
                 const std::vector<Edge>& neg) {
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(pos.size() + neg.size());
  auto dot = [&](const Edge& e) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += x2[e.u * d + j] * x2[e.v * d + j];
    return s;
  };
  for (const Edge& e : pos) {
    scores.push_back(dot(e));
    labels.push_back(1);
  }
  for (const Edge& e : neg) {
    scores.push_back(dot(e));
    labels.push_back(0);
  }
  return auc_score(scores, labels);
}

std::vector<Edge> sample_non_members(const std::unordered_set<uint64_t>& member_keys, int64_t n,
                                     int64_t count, std::mt19937_64& rng) {
  std::vector<Edge> out;
  out.reserve(count);
  std::unordered_set<uint64_t> seen;
  std::uniform_int_distribution<int64_t> dist(0, n - 1);
  while (static_cast<int64_t>(out.size()) < count) {
    int64_t u = dist(rng);
    int64_t v = dist(rng);
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    const uint64_t key = static_cast<uint64_t>(u) * n + v;
    if (member_keys.count(key) || seen.count(key)) continue;
    seen.insert(key);
    out.push_back({u, v});
  }
  return out;
}

}  // namespace

VariantFeatures train_variant_features(const DynamicGraph& base,
                                       const std::vector<std::vector<Edge>>& sampled,
                                       const SynthConfig& cfg) {
  const int64_t n = base.num_nodes;
  const int64_t d = cfg.half_dim;
  VariantFeatures out;
  out.half_dim = d;

  for (int64_t t = 0; t < cfg.steps; ++t) {
    const std::vector<Edge>& pos = sampled[t];
    if (pos.empty()) {
      throw ValidationError("variant features: no sampled links at time " + std::to_string(t));
    }
    std::unordered_set<uint64_t> member_keys;
    member_keys.reserve(pos.size() * 2);
    for (const Edge& e : pos) {
      member_keys.insert(static_cast<uint64_t>(e.u) * n + e.v);
    }

    ParameterStore store;
    std::mt19937_64 init_rng = make_rng(cfg.seed, 0xE2B0 + t);
    Tensor embedding({n, d});
    init_fan_in(embedding, d, init_rng);
    Tensor& x2 = add_parameter(store, "x2", std::move(embedding));

    AdamState adam;
    adam.lr = cfg.recon_lr;
    adam.weight_decay = cfg.recon_weight_decay;

    std::mt19937_64 eval_rng = make_rng(cfg.seed, 0xE7E0 + t);
    const std::vector<Edge> eval_neg =
        sample_non_members(member_keys, n, static_cast<int64_t>(pos.size()), eval_rng);

    std::vector<int64_t> src, dst;
    std::vector<double> labels;
    double best_auc = 0.0;
    std::vector<double> best_x2 = x2.values;
    int64_t since_best = 0;
    for (int64_t step = 0; step < cfg.recon_max_steps; ++step) {
      std::mt19937_64 step_rng = make_rng(cfg.seed, 0xE500 + t * 4096 + step);
      const std::vector<Edge> negs =
          sample_non_members(member_keys, n, static_cast<int64_t>(pos.size()), step_rng);
      src.clear();
      dst.clear();
      labels.clear();
      for (const Edge& e : pos) {
        src.push_back(e.u);
        dst.push_back(e.v);
        labels.push_back(1.0);
      }
      for (const Edge& e : negs) {
        src.push_back(e.u);
        dst.push_back(e.v);
        labels.push_back(0.0);
      }
      Tape tape;
      Var emb = tape.leaf(x2);
      Var logits =
          tape.row_sum(tape.mul(tape.gather_rows(emb, src), tape.gather_rows(emb, dst)));
      Var loss = tape.bce_with_logits(logits, labels);
      tape.backward(loss);
      adam_step(store, adam);

      const double auc = recon_auc(x2.values, d, pos, eval_neg);
      if (auc > best_auc) {
        best_auc = auc;
        best_x2 = x2.values;
        since_best = 0;
      } else {
        since_best += 1;
        // patience binds once the gate is reached; below it the budget
        // of recon_max_steps is the only stop
        if (best_auc > cfg.recon_auc_gate && since_best >= cfg.recon_patience) break;
      }
    }
    if (best_auc <= cfg.recon_auc_gate) {
      throw ValidationError("variant features: reconstruction AUC " + std::to_string(best_auc) +
                            " at time " + std::to_string(t) + " misses the " +
                            std::to_string(cfg.recon_auc_gate) + " gate");
    }
    out.x2.push_back(std::move(best_x2));
    out.auc.push_back(best_auc);
  }
  return out;
}

std::string GenReport::to_json() const {
  json j;
  j["recon_auc"] = recon_auc;
  j["p_trace"] = p_trace;
  j["config"] = json::parse(config_json);
  return j.dump(2);
}

GenReport generate_dataset(const SynthConfig& cfg, const std::string& out_dir,
                           DynamicGraph* out_graph) {
  cfg.check();
  DynamicGraph base = generate_base_graph(cfg);

  GenReport report;
  const int64_t train_steps = cfg.resolved_train_steps();
  std::vector<std::vector<Edge>> sampled(cfg.steps);
  for (int64_t t = 0; t < cfg.steps; ++t) {
    const bool train_phase = t < train_steps;
    const double p = shift_probability(t, train_phase ? cfg.pbar_train : cfg.pbar_test,
                                       train_phase ? cfg.sigma_train : cfg.sigma_test);
    report.p_trace.push_back(p);
    sampled[t] = sample_shift_links(base, t + 1, p, mix_seed(cfg.seed, 0xA3E0 + t));
  }

  VariantFeatures variant = train_variant_features(base, sampled, cfg);
  report.recon_auc = variant.auc;

  // assemble X^t = [X_1, X_2^t]; the last snapshot repeats the final
  // X_2 (no sampled-link target exists for it and no prediction reads it)
  DynamicGraph g = base;
  g.feat_dim = 2 * cfg.half_dim;
  g.temporal_features = true;
  g.features.clear();
  for (int64_t t = 0; t < g.num_times; ++t) {
    const std::vector<double>& x2 = variant.x2[std::min(t, cfg.steps - 1)];
    std::vector<double> mat(g.num_nodes * g.feat_dim);
    for (int64_t u = 0; u < g.num_nodes; ++u) {
      std::copy_n(&base.features[0][u * cfg.half_dim], cfg.half_dim, &mat[u * g.feat_dim]);
      std::copy_n(&x2[u * cfg.half_dim], cfg.half_dim, &mat[u * g.feat_dim + cfg.half_dim]);
    }
    g.features.push_back(std::move(mat));
  }

  // pinned evaluation negatives for every prediction target
  g.pinned_negatives.assign(g.num_times, {});
  for (int64_t tau = 1; tau < g.num_times; ++tau) {
    const int64_t count = static_cast<int64_t>(g.snapshots[tau].size());
    if (count > 0) {
      g.pinned_negatives[tau] = sample_negatives(g, tau, count, mix_seed(cfg.seed, 0xE7A + tau));
    }
  }

  json prov;
  prov["generator"] = {{"num_nodes", cfg.num_nodes},
                       {"steps", cfg.steps},
                       {"communities", cfg.communities},
                       {"p_intra", cfg.p_intra},
                       {"p_inter", cfg.p_inter},
                       {"drift", cfg.drift},
                       {"half_dim", cfg.half_dim},
                       {"pbar_train", cfg.pbar_train},
                       {"sigma_train", cfg.sigma_train},
                       {"pbar_test", cfg.pbar_test},
                       {"sigma_test", cfg.sigma_test},
                       {"seed", cfg.seed}};
  prov["split"] = {{"train", train_steps}, {"val", cfg.val_steps}, {"test", cfg.test_steps()}};
  g.provenance_json = prov.dump();
  report.config_json = prov.dump();

  if (!out_dir.empty()) {
    write_dataset(g, out_dir);
    std::ofstream rep(std::filesystem::path(out_dir) / "genreport.json");
    if (!rep) throw ValidationError("cannot write genreport.json in " + out_dir);
    rep << report.to_json() << "\n";
  }
  if (out_graph) *out_graph = std::move(g);
  return report;
}

}  // namespace digl
