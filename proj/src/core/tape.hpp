#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace digl {

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense tensors. Nodes are appended in forward
// order, so walking them backwards is a valid topological order.
// Shapes are always explicit: the only broadcast anywhere is
// scalar-times-tensor. Gradients of leaves bound to parameters are
// accumulated into Tensor::grad.
class Tape {
 public:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Tensor* external = nullptr;
    std::function<void(Tape&, Node&)> back;
  };

  Tape() { nodes_.reserve(256); }

  // Leaf bound to a parameter; repeated calls with the same tensor
  // return the same node so gradient contributions accumulate.
  Var leaf(Tensor& param);
  Var constant(Tensor value);
  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return node(v).value; }
  double scalar_value(Var v) const;
  const std::vector<double>& grad(Var v) const { return node(v).grad; }

  // --- primitives ---
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // element-wise; also the mask multiply
  Var scalar_mul(Var a, double c);
  Var scale(Var a, Var s);  // s is a 1-element tensor in the graph
  Var concat_cols(Var a, Var b);
  Var softmax_rows(Var a);  // 1-D input is one row
  Var segment_softmax(Var x, const std::vector<int64_t>& offsets);
  Var scale_rows(Var a, Var w);  // a {m,n}, w {m}: row i scaled by w_i
  Var segment_sum_rows(Var a, const std::vector<int64_t>& offsets);
  Var mul_row_vector(Var a, Var b);  // a {m,n}, b {n}
  Var add_row_vector(Var a, Var b);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var layer_norm_rows(Var a, double eps = 1e-5);
  Var transpose(Var a);
  Var gather_rows(Var a, std::vector<int64_t> idx);
  Var row_sum(Var a);  // {m,n} -> {m}
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var reshape(Var a, std::vector<int64_t> shape);
  Var variance_of_scalars(const std::vector<Var>& xs);
  Var bce_with_logits(Var logits, const std::vector<double>& targets);
  Var softmax_ce_with_logits(Var logits, const std::vector<int64_t>& targets);

  // Fused attention ops. Same math as gather_rows + mul + row_sum and
  // scale_rows + segment_sum_rows, but without materializing the
  // gathered neighbor rows.
  Var attention_scores(Var q, Var k, const std::vector<int64_t>& centers,
                       const std::vector<int64_t>& neighbors, double scale);
  Var attention_combine(Var v, Var m, const std::vector<int64_t>& neighbors,
                        const std::vector<int64_t>& offsets);

  // Escape hatch for caller-defined ops; `back` reads self.grad and
  // accumulates into parent buffers via grad_buffer().
  Var custom(Tensor value, std::function<void(Tape&, Node&)> back);

  void backward(Var loss);

  std::vector<double>& grad_buffer(Var v);
  size_t size() const { return nodes_.size(); }

 private:
  Var push(Tensor value, std::function<void(Tape&, Node&)> back = nullptr);
  const Node& node(Var v) const;
  Node& node(Var v);
  static void check_same_shape(const char* op, const Tensor& a, const Tensor& b);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int32_t> leaf_cache_;
};

}  // namespace digl
