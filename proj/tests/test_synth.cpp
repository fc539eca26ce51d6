#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "core/common.hpp"
#include "core/metrics.hpp"
#include "core/synth.hpp"

using namespace digl;
namespace fs = std::filesystem;

namespace {

SynthConfig small_cfg(uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.num_nodes = 60;
  cfg.steps = 4;
  cfg.communities = 3;
  cfg.p_intra = 0.25;
  cfg.p_inter = 0.03;
  cfg.half_dim = 16;
  cfg.seed = seed;
  return cfg;
}

double spearman(const std::vector<double>& xs) {
  // ranks against the identity ordering
  const size_t n = xs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> rank(n);
  for (size_t i = 0; i < n; ++i) rank[order[i]] = static_cast<double>(i);
  double num = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = rank[i] - static_cast<double>(i);
    num += d * d;
  }
  return 1.0 - 6.0 * num / (static_cast<double>(n) * (n * n - 1.0));
}

}  // namespace

TEST_CASE("shift probability") {
  CHECK(shift_probability(0, 0.4, 0.05) == doctest::Approx(0.45).epsilon(1e-12));
  for (int64_t t = 0; t < 20; ++t) CHECK(shift_probability(t, 0.1, 0.0) == 0.1);
  CHECK(shift_probability(0, 1.0, 0.5) == 1.0);
  CHECK(shift_probability(0, -0.2, 0.1) == 0.0);
}

TEST_CASE("base graph: fixed seed is bitwise deterministic") {
  SynthConfig cfg = small_cfg(9);
  DynamicGraph a = generate_base_graph(cfg);
  DynamicGraph b = generate_base_graph(cfg);
  CHECK(a.snapshots == b.snapshots);
  CHECK(a.features == b.features);
}

TEST_CASE("base graph: two disjoint cliques in the degenerate SBM") {
  SynthConfig cfg;
  cfg.num_nodes = 12;
  cfg.steps = 3;
  cfg.communities = 2;
  cfg.p_intra = 1.0;
  cfg.p_inter = 0.0;
  cfg.half_dim = 4;
  DynamicGraph g = generate_base_graph(cfg);
  for (int64_t t = 0; t < g.num_times; ++t) {
    CHECK(g.snapshots[t].size() == 2 * (6 * 5 / 2));
    for (const Edge& e : g.snapshots[t]) {
      CHECK((e.u < 6) == (e.v < 6));  // never across the cut
    }
  }
}

TEST_CASE("base graph: degenerate zero probabilities rejected") {
  SynthConfig cfg = small_cfg();
  cfg.p_intra = 0.0;
  cfg.p_inter = 0.0;
  CHECK_THROWS_AS(generate_base_graph(cfg), UsageError);
}

TEST_CASE("base graph: edge counts track the analytic expectation") {
  SynthConfig cfg = small_cfg();
  const int64_t t_probe = 1;
  const double want = expected_edges(cfg, t_probe);
  // binomial variance bound: sum p(1-p) <= want
  const double sigma = std::sqrt(want);
  double total = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    SynthConfig c = cfg;
    c.seed = 1000 + s;
    total += static_cast<double>(generate_base_graph(c).snapshots[t_probe].size());
  }
  const double mean_count = total / seeds;
  CHECK(std::abs(mean_count - want) < 3.0 * sigma / std::sqrt(static_cast<double>(seeds)));
}

TEST_CASE("sampled shift links") {
  SynthConfig cfg = small_cfg(21);
  DynamicGraph g = generate_base_graph(cfg);
  const int64_t m = static_cast<int64_t>(g.snapshots[2].size());
  SUBCASE("p = 1 is a subset of the future edges, full size") {
    auto links = sample_shift_links(g, 2, 1.0, 3);
    CHECK(static_cast<int64_t>(links.size()) == m);
    for (const Edge& e : links) CHECK(g.has_edge(2, e.u, e.v));
  }
  SUBCASE("p = 0 is disjoint from the future edges") {
    auto links = sample_shift_links(g, 2, 0.0, 3);
    CHECK(static_cast<int64_t>(links.size()) == m);
    for (const Edge& e : links) CHECK(!g.has_edge(2, e.u, e.v));
  }
  SUBCASE("size is preserved for any p") {
    for (double p : {0.25, 0.5, 0.8}) {
      CHECK(static_cast<int64_t>(sample_shift_links(g, 2, p, 3).size()) == m);
    }
  }
}

TEST_CASE("variant features hit the reconstruction gate") {
  SynthConfig cfg = small_cfg(33);
  DynamicGraph base = generate_base_graph(cfg);
  std::vector<std::vector<Edge>> sampled(cfg.steps);
  for (int64_t t = 0; t < cfg.steps; ++t) {
    sampled[t] = sample_shift_links(base, t + 1, 0.5, mix_seed(cfg.seed, t));
  }
  VariantFeatures vf = train_variant_features(base, sampled, cfg);
  CHECK(vf.x2.size() == static_cast<size_t>(cfg.steps));
  for (double a : vf.auc) CHECK(a > 0.99);

  SUBCASE("fixed seed reproduces the features") {
    VariantFeatures again = train_variant_features(base, sampled, cfg);
    CHECK(again.x2 == vf.x2);
  }
}

TEST_CASE("full-capacity embedding memorizes quickly") {
  SynthConfig cfg = small_cfg(41);
  cfg.num_nodes = 24;
  cfg.half_dim = 24;  // d = N
  cfg.recon_max_steps = 600;
  DynamicGraph base = generate_base_graph(cfg);
  std::vector<std::vector<Edge>> sampled(cfg.steps);
  for (int64_t t = 0; t < cfg.steps; ++t) {
    sampled[t] = sample_shift_links(base, t + 1, 0.5, mix_seed(cfg.seed, t));
  }
  VariantFeatures vf = train_variant_features(base, sampled, cfg);
  for (double a : vf.auc) CHECK(a > 0.995);
}

TEST_CASE("assembled dataset round-trips and has the stated geometry") {
  SynthConfig cfg = small_cfg(55);
  fs::path dir = fs::temp_directory_path() / "digl_test_synth";
  fs::remove_all(dir);
  DynamicGraph g;
  GenReport report = generate_dataset(cfg, dir.string(), &g);

  CHECK(g.feat_dim == 2 * cfg.half_dim);
  CHECK(g.temporal_features);
  CHECK(g.num_times == cfg.steps + 1);
  CHECK(report.recon_auc.size() == static_cast<size_t>(cfg.steps));
  for (double a : report.recon_auc) CHECK(a > 0.99);

  DynamicGraph loaded = load_dataset(dir.string());
  CHECK(loaded.snapshots == g.snapshots);
  CHECK(loaded.features == g.features);
  CHECK(loaded.pinned_negatives == g.pinned_negatives);
  CHECK(fs::exists(dir / "genreport.json"));

  // X_1 half static, X_2 half varies over t
  for (int64_t t = 1; t < g.num_times - 1; ++t) {
    bool x1_same = true;
    bool x2_diff = false;
    for (int64_t u = 0; u < g.num_nodes; ++u) {
      for (int64_t j = 0; j < cfg.half_dim; ++j) {
        x1_same = x1_same && g.features[t][u * g.feat_dim + j] ==
                                 g.features[0][u * g.feat_dim + j];
        x2_diff = x2_diff || g.features[t][u * g.feat_dim + cfg.half_dim + j] !=
                                 g.features[0][u * g.feat_dim + cfg.half_dim + j];
      }
    }
    CHECK(x1_same);
    CHECK(x2_diff);
  }
}

TEST_CASE("whole pipeline is deterministic under one seed") {
  SynthConfig cfg = small_cfg(66);
  DynamicGraph a, b;
  generate_dataset(cfg, "", &a);
  generate_dataset(cfg, "", &b);
  CHECK(a.snapshots == b.snapshots);
  CHECK(a.features == b.features);
  CHECK(a.pinned_negatives == b.pinned_negatives);
}

TEST_CASE("correlation dial: X_2 predictiveness rises with p") {
  // X_2-only inner-product AUC against the true next edges must be
  // monotone in p (Spearman 1.0 over the four paper levels)
  const std::vector<double> levels = {0.1, 0.4, 0.6, 0.8};
  std::vector<double> mean_auc(levels.size(), 0.0);
  const int n_seeds = 5;
  for (int s = 0; s < n_seeds; ++s) {
    for (size_t li = 0; li < levels.size(); ++li) {
      SynthConfig cfg = small_cfg(100 + s);
      cfg.pbar_train = levels[li];
      cfg.sigma_train = 0.0;
      cfg.pbar_test = levels[li];
      cfg.sigma_test = 0.0;
      DynamicGraph g;
      generate_dataset(cfg, "", &g);
      double auc_sum = 0.0;
      int64_t counted = 0;
      for (int64_t t = 0; t + 1 < g.num_times - 1; ++t) {
        std::vector<double> scores;
        std::vector<int> labels;
        auto dot2 = [&](int64_t u, int64_t v) {
          double acc = 0.0;
          for (int64_t j = cfg.half_dim; j < 2 * cfg.half_dim; ++j) {
            acc += g.features[t][u * g.feat_dim + j] * g.features[t][v * g.feat_dim + j];
          }
          return acc;
        };
        for (const Edge& e : g.snapshots[t + 1]) {
          scores.push_back(dot2(e.u, e.v));
          labels.push_back(1);
        }
        for (const Edge& e : g.pinned_negatives[t + 1]) {
          scores.push_back(dot2(e.u, e.v));
          labels.push_back(0);
        }
        if (labels.empty()) continue;
        auc_sum += auc_score(scores, labels);
        counted += 1;
      }
      mean_auc[li] += auc_sum / static_cast<double>(counted) / n_seeds;
    }
  }
  CHECK(spearman(mean_auc) > 0.9);
  CHECK(mean_auc.front() < mean_auc.back());
}
