#include "tensor.hpp"

#include <cmath>

#include "common.hpp"

namespace digl {

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "scalar" : s;
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)) {
  for (int64_t d : shape) {
    if (d <= 0) throw UsageError("tensor: non-positive dimension in shape " + shape_str());
  }
  values.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw UsageError("tensor: shape " + shape_str() + " does not match value count " +
                     std::to_string(values.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Tensor({n}, std::move(v));
}

int64_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  if (shape.size() == 1) return 1;
  throw UsageError("tensor: rows() on shape " + shape_str());
}

int64_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  throw UsageError("tensor: cols() on shape " + shape_str());
}

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

}  // namespace digl
