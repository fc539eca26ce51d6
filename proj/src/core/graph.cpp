#include "graph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace digl {

namespace {

uint64_t pair_key(int64_t u, int64_t v, int64_t n) {
  return static_cast<uint64_t>(u) * static_cast<uint64_t>(n) + static_cast<uint64_t>(v);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int64_t parse_int(const std::string& s, const std::string& file, int64_t line_no) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(file + " line " + std::to_string(line_no) + ": malformed integer '" +
                          s + "'");
  }
}

double parse_double(const std::string& s, const std::string& file, int64_t line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(file + " line " + std::to_string(line_no) + ": malformed number '" + s +
                          "'");
  }
}

std::vector<double> read_feature_file(const fs::path& path, int64_t n, int64_t d) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file: " + path.string());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n * d));
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    int64_t got = 0;
    while (ss >> tok) {
      out.push_back(parse_double(tok, path.filename().string(), line_no));
      ++got;
    }
    if (got != d) {
      throw ValidationError(path.filename().string() + " line " + std::to_string(line_no) +
                            ": expected " + std::to_string(d) + " values, got " +
                            std::to_string(got));
    }
  }
  if (line_no < n || static_cast<int64_t>(out.size()) != n * d) {
    throw ValidationError(path.filename().string() + ": expected " + std::to_string(n) +
                          " rows of " + std::to_string(d) + " values");
  }
  return out;
}

void canonicalize(std::vector<Edge>& edges) {
  for (Edge& e : edges) {
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

}  // namespace

bool DynamicGraph::has_edge(int64_t t, int64_t u, int64_t v) const {
  if (u > v) std::swap(u, v);
  const auto& es = snapshots[t];
  return std::binary_search(es.begin(), es.end(), Edge{u, v});
}

void DynamicGraph::validate() const {
  if (num_nodes <= 0 || num_times <= 0 || feat_dim <= 0) {
    throw ValidationError("dataset: non-positive num_nodes, num_times or feat_dim");
  }
  if (static_cast<int64_t>(snapshots.size()) != num_times) {
    throw ValidationError("dataset: expected " + std::to_string(num_times) + " snapshots, got " +
                          std::to_string(snapshots.size()));
  }
  const size_t want_mats = temporal_features ? static_cast<size_t>(num_times) : 1;
  if (features.size() != want_mats) {
    throw ValidationError("dataset: expected " + std::to_string(want_mats) +
                          " feature matrices, got " + std::to_string(features.size()));
  }
  for (const auto& f : features) {
    if (static_cast<int64_t>(f.size()) != num_nodes * feat_dim) {
      throw ValidationError("dataset: feature matrix size mismatch");
    }
  }
  for (int64_t t = 0; t < num_times; ++t) {
    for (const Edge& e : snapshots[t]) {
      if (e.u < 0 || e.v < 0 || e.u >= num_nodes || e.v >= num_nodes) {
        throw ValidationError("dataset: edge endpoint out of range at time " + std::to_string(t));
      }
    }
  }
  if (task == Task::kNode) {
    if (num_classes <= 0) throw ValidationError("dataset: node task requires num_classes");
    if (labels.empty()) throw ValidationError("dataset: node task requires labels");
    for (const NodeLabel& l : labels) {
      if (l.t < 0 || l.t >= num_times || l.u < 0 || l.u >= num_nodes) {
        throw ValidationError("dataset: label references invalid (node, time)");
      }
      if (l.cls < 0 || l.cls >= num_classes) {
        throw ValidationError("dataset: label class " + std::to_string(l.cls) +
                              " outside [0," + std::to_string(num_classes) + ")");
      }
    }
  } else if (!labels.empty()) {
    throw ValidationError("dataset: link task must not carry labels");
  }
  if (!pinned_negatives.empty()) {
    for (int64_t t = 0; t < num_times; ++t) {
      for (const Edge& e : pinned_negatives[t]) {
        if (has_edge(t, e.u, e.v)) {
          throw ValidationError("dataset: pinned negative (" + std::to_string(e.u) + "," +
                                std::to_string(e.v) + ") is an edge at time " +
                                std::to_string(t));
        }
      }
    }
  }
}

DynamicGraph load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path meta_path = root / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw ValidationError("missing file: " + meta_path.string());
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }

  DynamicGraph g;
  try {
    g.num_nodes = meta.at("num_nodes").get<int64_t>();
    g.num_times = meta.at("num_times").get<int64_t>();
    g.feat_dim = meta.at("feat_dim").get<int64_t>();
    g.temporal_features = meta.value("temporal_features", false);
    const std::string task = meta.at("task").get<std::string>();
    if (task == "link") {
      g.task = Task::kLink;
    } else if (task == "node") {
      g.task = Task::kNode;
      g.num_classes = meta.at("num_classes").get<int64_t>();
    } else {
      throw ValidationError("meta.json: unknown task '" + task + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  g.provenance_json = meta.dump();

  g.snapshots.assign(g.num_times, {});
  {
    const fs::path path = root / "edges.tsv";
    std::ifstream in(path);
    if (!in) throw ValidationError("missing file: " + path.string());
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto parts = split_tabs(line);
      if (parts.size() != 3) {
        throw ValidationError("edges.tsv line " + std::to_string(line_no) +
                              ": expected t<TAB>u<TAB>v");
      }
      const int64_t t = parse_int(parts[0], "edges.tsv", line_no);
      const int64_t u = parse_int(parts[1], "edges.tsv", line_no);
      const int64_t v = parse_int(parts[2], "edges.tsv", line_no);
      if (t < 0 || t >= g.num_times) {
        throw ValidationError("edges.tsv line " + std::to_string(line_no) + ": timestamp " +
                              std::to_string(t) + " out of range [0," +
                              std::to_string(g.num_times) + ")");
      }
      if (u < 0 || u >= g.num_nodes || v < 0 || v >= g.num_nodes) {
        throw ValidationError("edges.tsv line " + std::to_string(line_no) + ": node index " +
                              std::to_string(u < 0 || u >= g.num_nodes ? u : v) +
                              " out of range [0," + std::to_string(g.num_nodes) + ")");
      }
      if (u == v) continue;  // self pairs are implicit in the neighborhood
      g.snapshots[t].push_back({u, v});
    }
    for (auto& es : g.snapshots) canonicalize(es);
  }

  if (g.temporal_features) {
    for (int64_t t = 0; t < g.num_times; ++t) {
      g.features.push_back(
          read_feature_file(root / ("features_t" + std::to_string(t) + ".tsv"), g.num_nodes,
                            g.feat_dim));
    }
  } else {
    g.features.push_back(read_feature_file(root / "features.tsv", g.num_nodes, g.feat_dim));
  }

  if (g.task == Task::kNode) {
    const fs::path path = root / "labels.tsv";
    std::ifstream in(path);
    if (!in) throw ValidationError("missing file: " + path.string());
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto parts = split_tabs(line);
      if (parts.size() != 3) {
        throw ValidationError("labels.tsv line " + std::to_string(line_no) +
                              ": expected t<TAB>u<TAB>class");
      }
      NodeLabel l;
      l.t = parse_int(parts[0], "labels.tsv", line_no);
      l.u = parse_int(parts[1], "labels.tsv", line_no);
      l.cls = parse_int(parts[2], "labels.tsv", line_no);
      if (l.cls < 0 || l.cls >= g.num_classes) {
        throw ValidationError("labels.tsv line " + std::to_string(line_no) + ": class " +
                              std::to_string(l.cls) + " outside [0," +
                              std::to_string(g.num_classes) + ")");
      }
      g.labels.push_back(l);
    }
  }

  if (fs::exists(root / "negatives.tsv")) {
    g.pinned_negatives.assign(g.num_times, {});
    std::ifstream in(root / "negatives.tsv");
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto parts = split_tabs(line);
      if (parts.size() != 3) {
        throw ValidationError("negatives.tsv line " + std::to_string(line_no) +
                              ": expected t<TAB>u<TAB>v");
      }
      const int64_t t = parse_int(parts[0], "negatives.tsv", line_no);
      int64_t u = parse_int(parts[1], "negatives.tsv", line_no);
      int64_t v = parse_int(parts[2], "negatives.tsv", line_no);
      if (t < 0 || t >= g.num_times || u < 0 || u >= g.num_nodes || v < 0 || v >= g.num_nodes) {
        throw ValidationError("negatives.tsv line " + std::to_string(line_no) +
                              ": index out of range");
      }
      if (u > v) std::swap(u, v);
      g.pinned_negatives[t].push_back({u, v});
    }
  }

  g.validate();
  return g;
}

void write_dataset(const DynamicGraph& g, const std::string& dir) {
  g.validate();
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);

  auto open_out = [&](const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw ValidationError("cannot write file: " + p.string());
    return out;
  };

  {
    json meta;
    if (!g.provenance_json.empty()) meta = json::parse(g.provenance_json);
    meta["num_nodes"] = g.num_nodes;
    meta["num_times"] = g.num_times;
    meta["feat_dim"] = g.feat_dim;
    meta["temporal_features"] = g.temporal_features;
    meta["task"] = g.task == Task::kLink ? "link" : "node";
    if (g.task == Task::kNode) meta["num_classes"] = g.num_classes;
    auto out = open_out(root / "meta.json");
    out << meta.dump(2) << "\n";
  }
  {
    auto out = open_out(root / "edges.tsv");
    for (int64_t t = 0; t < g.num_times; ++t) {
      for (const Edge& e : g.snapshots[t]) {
        out << t << '\t' << e.u << '\t' << e.v << '\n';
      }
    }
  }
  auto write_features = [&](const fs::path& p, const std::vector<double>& mat) {
    auto out = open_out(p);
    out.precision(17);
    for (int64_t i = 0; i < g.num_nodes; ++i) {
      for (int64_t j = 0; j < g.feat_dim; ++j) {
        if (j) out << '\t';
        out << mat[i * g.feat_dim + j];
      }
      out << '\n';
    }
  };
  if (g.temporal_features) {
    for (int64_t t = 0; t < g.num_times; ++t) {
      write_features(root / ("features_t" + std::to_string(t) + ".tsv"), g.features[t]);
    }
  } else {
    write_features(root / "features.tsv", g.features[0]);
  }
  if (g.task == Task::kNode) {
    auto out = open_out(root / "labels.tsv");
    for (const NodeLabel& l : g.labels) out << l.t << '\t' << l.u << '\t' << l.cls << '\n';
  }
  if (!g.pinned_negatives.empty()) {
    auto out = open_out(root / "negatives.tsv");
    for (int64_t t = 0; t < g.num_times; ++t) {
      for (const Edge& e : g.pinned_negatives[t]) {
        out << t << '\t' << e.u << '\t' << e.v << '\n';
      }
    }
  }
}

NeighborhoodIndex build_neighborhood_index(const DynamicGraph& g, int64_t window) {
  if (window < 0) throw UsageError("neighborhood index: window must be >= 1 (0 = full history)");
  const int64_t n = g.num_nodes, tt = g.num_times;
  const int64_t w = window == 0 ? tt : window;

  // adjacency per snapshot, both directions
  std::vector<std::vector<std::vector<int64_t>>> adj(tt);
  for (int64_t t = 0; t < tt; ++t) {
    adj[t].assign(n, {});
    for (const Edge& e : g.snapshots[t]) {
      adj[t][e.u].push_back(e.v);
      adj[t][e.v].push_back(e.u);
    }
    for (auto& lst : adj[t]) std::sort(lst.begin(), lst.end());
  }

  NeighborhoodIndex index;
  index.num_nodes = n;
  index.num_times = tt;
  index.window = window;
  index.offsets.assign(n * tt + 1, 0);
  index.neighbors.reserve(static_cast<size_t>(n) * tt);
  for (int64_t t = 0; t < tt; ++t) {
    for (int64_t u = 0; u < n; ++u) {
      index.neighbors.push_back(t * n + u);  // self pair first
      const int64_t lo = std::max<int64_t>(0, t - w + 1);
      for (int64_t tp = lo; tp <= t; ++tp) {
        for (int64_t v : adj[tp][u]) index.neighbors.push_back(tp * n + v);
      }
      index.offsets[t * n + u + 1] = static_cast<int64_t>(index.neighbors.size());
    }
  }
  return index;
}

std::vector<double> temporal_encoding(int64_t t, int64_t d_te) {
  if (d_te <= 0 || d_te % 2 != 0) {
    throw UsageError("temporal_encoding: dimension must be positive and even, got " +
                     std::to_string(d_te));
  }
  std::vector<double> out(d_te);
  for (int64_t i = 0; 2 * i < d_te; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_te));
    out[2 * i] = std::sin(static_cast<double>(t) * freq);
    out[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

SplitPlan chronological_split(const DynamicGraph& g, int64_t train_len, int64_t val_len,
                              int64_t test_len) {
  if (train_len <= 0 || val_len < 0 || test_len < 0) {
    throw UsageError("split: lengths must be positive");
  }
  SplitPlan plan;
  plan.task = g.task;
  const int64_t total = train_len + val_len + test_len;
  if (g.task == Task::kLink) {
    const int64_t usable = g.num_times - 1;  // time t predicts edges at t + 1
    if (total > usable) {
      throw UsageError("split: lengths " + std::to_string(train_len) + "+" +
                       std::to_string(val_len) + "+" + std::to_string(test_len) +
                       " exceed usable prediction steps " + std::to_string(usable));
    }
    plan.train_lo = 1;
    plan.train_hi = 1 + train_len;
    plan.val_lo = plan.train_hi;
    plan.val_hi = plan.val_lo + val_len;
    plan.test_lo = plan.val_hi;
    plan.test_hi = plan.test_lo + test_len;
    for (int64_t tau = plan.train_lo; tau < plan.test_hi; ++tau) {
      const int64_t count = static_cast<int64_t>(g.snapshots[tau].size());
      if (count == 0) continue;
      if (tau < static_cast<int64_t>(g.pinned_negatives.size()) &&
          !g.pinned_negatives[tau].empty()) {
        plan.negatives[tau] = g.pinned_negatives[tau];
      } else {
        plan.negatives[tau] = sample_negatives(g, tau, count, mix_seed(0xE7A1, tau));
      }
    }
  } else {
    if (total > g.num_times) {
      throw UsageError("split: lengths exceed number of snapshots " +
                       std::to_string(g.num_times));
    }
    plan.train_lo = 0;
    plan.train_hi = train_len;
    plan.val_lo = plan.train_hi;
    plan.val_hi = plan.val_lo + val_len;
    plan.test_lo = plan.val_hi;
    plan.test_hi = plan.test_lo + test_len;
  }
  return plan;
}

std::vector<Edge> sample_negatives(const DynamicGraph& g, int64_t t, int64_t count,
                                   uint64_t seed) {
  if (t < 0 || t >= g.num_times) throw UsageError("sample_negatives: bad timestamp");
  const int64_t n = g.num_nodes;
  const int64_t total_pairs = n * (n - 1) / 2;
  const int64_t existing = static_cast<int64_t>(g.snapshots[t].size());
  const int64_t capacity = total_pairs - existing;
  if (count > capacity) {
    throw ValidationError("sample_negatives: requested " + std::to_string(count) +
                          " non-edges at time " + std::to_string(t) + " but only " +
                          std::to_string(capacity) + " exist");
  }
  std::unordered_set<uint64_t> edge_keys;
  edge_keys.reserve(g.snapshots[t].size() * 2);
  for (const Edge& e : g.snapshots[t]) edge_keys.insert(pair_key(e.u, e.v, n));

  std::mt19937_64 rng(mix_seed(seed, 0x9e6));
  std::vector<Edge> out;
  out.reserve(count);
  if (count * 2 >= capacity) {
    // dense regime: enumerate every non-edge and take a seeded partial shuffle
    std::vector<Edge> pool;
    pool.reserve(capacity);
    for (int64_t u = 0; u < n; ++u) {
      for (int64_t v = u + 1; v < n; ++v) {
        if (!edge_keys.count(pair_key(u, v, n))) pool.push_back({u, v});
      }
    }
    for (int64_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<int64_t> dist(i, static_cast<int64_t>(pool.size()) - 1);
      std::swap(pool[i], pool[dist(rng)]);
      out.push_back(pool[i]);
    }
  } else {
    std::unordered_set<uint64_t> seen;
    seen.reserve(count * 2);
    std::uniform_int_distribution<int64_t> dist(0, n - 1);
    while (static_cast<int64_t>(out.size()) < count) {
      int64_t u = dist(rng);
      int64_t v = dist(rng);
      if (u == v) continue;
      if (u > v) std::swap(u, v);
      const uint64_t key = pair_key(u, v, n);
      if (edge_keys.count(key) || seen.count(key)) continue;
      seen.insert(key);
      out.push_back({u, v});
    }
  }
  return out;
}

}  // namespace digl
