#include "model.hpp"

#include <cmath>

#include "common.hpp"

namespace digl {

void NetworkConfig::check() const {
  if (layers < 1) throw UsageError("network: layers must be >= 1");
  if (hidden < 1 || heads < 1) throw UsageError("network: hidden and heads must be >= 1");
  if (hidden % heads != 0) {
    throw UsageError("network: head count " + std::to_string(heads) +
                     " must divide hidden dimension " + std::to_string(hidden));
  }
  if (te_dim <= 0 || te_dim % 2 != 0) {
    throw UsageError("network: temporal encoding dimension must be positive and even");
  }
  if (task == Task::kNode && num_classes < 2) {
    throw UsageError("network: node task needs num_classes >= 2");
  }
}

Network Network::init(const NetworkConfig& cfg, int64_t feat_dim, uint64_t seed) {
  cfg.check();
  if (feat_dim <= 0) throw UsageError("network: feat_dim must be positive");
  Network net;
  net.cfg = cfg;
  net.feat_dim = feat_dim;
  std::mt19937_64 rng = make_rng(seed, 0xA11);

  const int64_t d = cfg.hidden;
  const int64_t dh = d / cfg.heads;
  const int64_t qk_in = d + cfg.te_dim;

  {
    Tensor w({feat_dim, d});
    init_fan_in(w, feat_dim, rng);
    add_parameter(net.params, "input_fc.W", std::move(w));
    add_parameter(net.params, "input_fc.b", Tensor({d}));
  }
  for (int64_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = "layer" + std::to_string(l) + ".";
    for (int64_t h = 0; h < cfg.heads; ++h) {
      const std::string hp = lp + "head" + std::to_string(h) + ".";
      for (const char* name : {"Wq", "Wk", "Wv"}) {
        Tensor w({qk_in, dh});
        init_fan_in(w, qk_in, rng);
        add_parameter(net.params, hp + name, std::move(w));
      }
    }
    if (cfg.disentangled) add_parameter(net.params, lp + "wf", Tensor({d}));
    const int branches = cfg.disentangled ? 2 : 1;
    for (int b = 0; b < branches; ++b) {
      const std::string bp = lp + (b == 0 ? "inv." : "var.");
      add_parameter(net.params, bp + "ln_gain", Tensor({d}, 1.0));
      add_parameter(net.params, bp + "ln_bias", Tensor({d}));
      Tensor w1({d, d});
      init_fan_in(w1, d, rng);
      add_parameter(net.params, bp + "mlp.W1", std::move(w1));
      add_parameter(net.params, bp + "mlp.b1", Tensor({d}));
      Tensor w2({d, d});
      init_fan_in(w2, d, rng);
      add_parameter(net.params, bp + "mlp.W2", std::move(w2));
      add_parameter(net.params, bp + "mlp.b2", Tensor({d}));
      add_parameter(net.params, bp + "alpha", Tensor::scalar(0.5));
    }
  }
  if (cfg.task == Task::kNode) {
    for (const char* head : {"head.", "variant_head."}) {
      Tensor w({d, cfg.num_classes});
      init_fan_in(w, d, rng);
      add_parameter(net.params, std::string(head) + "W", std::move(w));
      add_parameter(net.params, std::string(head) + "b", Tensor({cfg.num_classes}));
    }
  }
  return net;
}

Tensor& Network::param(const std::string& path) {
  auto it = params.find(path);
  if (it == params.end()) throw UsageError("network: unknown parameter '" + path + "'");
  return it->second;
}

const Tensor& Network::param(const std::string& path) const {
  auto it = params.find(path);
  if (it == params.end()) throw UsageError("network: unknown parameter '" + path + "'");
  return it->second;
}

namespace {

// FFN(x) = alpha * MLP(LayerNorm(x)) + (1 - alpha) * x
Var ffn(Tape& tape, Network& net, const std::string& prefix, Var x) {
  Var ln = tape.layer_norm_rows(x);
  ln = tape.add_row_vector(tape.mul_row_vector(ln, tape.leaf(net.param(prefix + "ln_gain"))),
                           tape.leaf(net.param(prefix + "ln_bias")));
  Var h1 = tape.relu(
      tape.add_row_vector(tape.matmul(ln, tape.leaf(net.param(prefix + "mlp.W1"))),
                          tape.leaf(net.param(prefix + "mlp.b1"))));
  Var mlp = tape.add_row_vector(tape.matmul(h1, tape.leaf(net.param(prefix + "mlp.W2"))),
                                tape.leaf(net.param(prefix + "mlp.b2")));
  Var alpha = tape.leaf(net.param(prefix + "alpha"));
  Var residual_gate = tape.sub(tape.constant_scalar(1.0), alpha);
  return tape.add(tape.scale(mlp, alpha), tape.scale(x, residual_gate));
}

}  // namespace

ForwardOut Network::forward(Tape& tape, const DynamicGraph& g, const NeighborhoodIndex& index,
                            int64_t t_max) {
  if (t_max < 0 || t_max >= g.num_times) throw UsageError("forward: t_max out of range");
  if (g.feat_dim != feat_dim) {
    throw UsageError("forward: dataset feat_dim " + std::to_string(g.feat_dim) +
                     " does not match network feat_dim " + std::to_string(feat_dim));
  }
  const int64_t n = g.num_nodes;
  const int64_t n_times = t_max + 1;
  const int64_t rows = n * n_times;
  const int64_t d = cfg.hidden;
  const int64_t dh = d / cfg.heads;

  // time-major input features and temporal encodings
  Tensor x({rows, feat_dim});
  for (int64_t t = 0; t < n_times; ++t) {
    const std::vector<double>& feats = g.features_at(t);
    std::copy(feats.begin(), feats.end(), x.values.begin() + t * n * feat_dim);
  }
  Tensor te({rows, cfg.te_dim});
  for (int64_t t = 0; t < n_times; ++t) {
    const std::vector<double> enc = temporal_encoding(t, cfg.te_dim);
    for (int64_t u = 0; u < n; ++u) {
      std::copy(enc.begin(), enc.end(), te.values.begin() + (t * n + u) * cfg.te_dim);
    }
  }
  Var te_v = tape.constant(std::move(te));

  Var h = tape.add_row_vector(
      tape.matmul(tape.constant(std::move(x)), tape.leaf(param("input_fc.W"))),
      tape.leaf(param("input_fc.b")));

  // neighborhood CSR restricted to rows with t <= t_max (a prefix)
  const int64_t n_entries = index.offsets[rows];
  std::vector<int64_t> offsets(index.offsets.begin(), index.offsets.begin() + rows + 1);
  std::vector<int64_t> neighbors(index.neighbors.begin(), index.neighbors.begin() + n_entries);
  std::vector<int64_t> centers(n_entries);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t e = offsets[r]; e < offsets[r + 1]; ++e) centers[e] = r;
  }

  ForwardOut out;
  out.num_nodes = n;
  out.n_times = n_times;

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int64_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = "layer" + std::to_string(l) + ".";
    Var hcat = tape.concat_cols(h, te_v);
    Var agg_i, agg_v;
    for (int64_t hd = 0; hd < cfg.heads; ++hd) {
      const std::string hp = lp + "head" + std::to_string(hd) + ".";
      Var q = tape.matmul(hcat, tape.leaf(param(hp + "Wq")));
      Var k = tape.matmul(hcat, tape.leaf(param(hp + "Wk")));
      Var v = tape.matmul(hcat, tape.leaf(param(hp + "Wv")));
      Var scores = tape.attention_scores(q, k, centers, neighbors, inv_sqrt);
      Var m_i = tape.segment_softmax(scores, offsets);
      Var head_i = tape.attention_combine(v, m_i, neighbors, offsets);
      agg_i = hd == 0 ? head_i : tape.concat_cols(agg_i, head_i);
      if (cfg.disentangled) {
        Var m_v = tape.segment_softmax(tape.scalar_mul(scores, -1.0), offsets);
        Var head_v = tape.attention_combine(v, m_v, neighbors, offsets);
        agg_v = hd == 0 ? head_v : tape.concat_cols(agg_v, head_v);
      }
    }
    LayerSummaries summaries;
    if (cfg.disentangled) {
      Var m_f = tape.softmax_rows(tape.leaf(param(lp + "wf")));
      Var z_i_tilde = tape.mul_row_vector(agg_i, m_f);
      summaries.z_i = ffn(tape, *this, lp + "inv.", tape.add(z_i_tilde, h));
      summaries.z_v = ffn(tape, *this, lp + "var.", agg_v);
      h = tape.add(summaries.z_i, summaries.z_v);
    } else {
      summaries.z_i = ffn(tape, *this, lp + "inv.", tape.add(agg_i, h));
      summaries.z_v = summaries.z_i;
      h = summaries.z_i;
    }
    out.layers.push_back(summaries);
  }
  out.z_i = out.layers.back().z_i;
  out.z_v = out.layers.back().z_v;
  return out;
}

Var predict_link(Tape& tape, Var z, const std::vector<int64_t>& src_rows,
                 const std::vector<int64_t>& dst_rows) {
  if (src_rows.size() != dst_rows.size()) {
    throw UsageError("predict_link: src/dst length mismatch");
  }
  Var zu = tape.gather_rows(z, src_rows);
  Var zv = tape.gather_rows(z, dst_rows);
  return tape.row_sum(tape.mul(zu, zv));
}

Var predict_node(Tape& tape, Var z, const std::vector<int64_t>& rows, Tensor& head_w,
                 Tensor& head_b) {
  Var sel = tape.gather_rows(z, rows);
  return tape.add_row_vector(tape.matmul(sel, tape.leaf(head_w)), tape.leaf(head_b));
}

Var predict_mixed_link(Tape& tape, Var z_i, Var z_v, const std::vector<int64_t>& src_rows,
                       const std::vector<int64_t>& dst_rows) {
  Var invariant = predict_link(tape, z_i, src_rows, dst_rows);
  Var variant = predict_link(tape, z_v, src_rows, dst_rows);
  return tape.mul(invariant, tape.sigmoid(variant));
}

Var predict_mixed_node(Tape& tape, Var z_i, Var z_v, const std::vector<int64_t>& rows,
                       Tensor& head_w, Tensor& head_b, Tensor& variant_w, Tensor& variant_b) {
  Var invariant = predict_node(tape, z_i, rows, head_w, head_b);
  Var variant = predict_node(tape, z_v, rows, variant_w, variant_b);
  return tape.mul(invariant, tape.sigmoid(variant));
}

}  // namespace digl
