#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace digl {

std::string shape_to_string(const std::vector<int64_t>& shape);
int64_t shape_numel(const std::vector<int64_t>& shape);

// Dense row-major tensor of 64-bit floats. Values live here; `grad` is
// filled by Tape::backward for tensors with requires_grad set.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, double fill = 0.0);
  Tensor(std::vector<int64_t> s, std::vector<double> v);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);  // shape {n}

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  int64_t ndim() const { return static_cast<int64_t>(shape.size()); }
  // 2-D accessors; 1-D tensors behave as a single row.
  int64_t rows() const;
  int64_t cols() const;
  double& at(int64_t r, int64_t c) { return values[r * cols() + c]; }
  double at(int64_t r, int64_t c) const { return values[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const { return shape_to_string(shape); }
  bool all_finite() const;

  void ensure_grad();  // allocates a zero gradient buffer if absent
  void zero_grad() { grad.clear(); }
};

}  // namespace digl
