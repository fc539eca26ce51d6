#include "tape.hpp"

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

// mean BCE-with-logits term for one sample, stable for |z| up to ~700
double bce_term(double z, double y) {
  if (z > 0.0) return z * (1.0 - y) + std::log1p(std::exp(-z));
  return -z * y + std::log1p(std::exp(z));
}

void check_offsets(const char* op, const std::vector<int64_t>& offsets, int64_t total) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != total) {
    throw UsageError(std::string(op) + ": malformed segment offsets");
  }
  for (size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] < offsets[i - 1]) {
      throw UsageError(std::string(op) + ": offsets not monotone");
    }
  }
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size())) {
    throw UsageError("tape: invalid node handle");
  }
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

double Tape::scalar_value(Var v) const {
  const Tensor& t = node(v).value;
  if (t.numel() != 1) throw UsageError("tape: scalar_value on shape " + t.shape_str());
  return t.values[0];
}

Var Tape::push(Tensor value, std::function<void(Tape&, Node&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

std::vector<double>& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.size() != n.value.values.size()) n.grad.assign(n.value.values.size(), 0.0);
  return n.grad;
}

void Tape::check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw UsageError(std::string(op) + ": shape mismatch (" + a.shape_str() + " vs " +
                     b.shape_str() + ")");
  }
}

Var Tape::leaf(Tensor& param) {
  auto it = leaf_cache_.find(&param);
  if (it != leaf_cache_.end()) return Var{it->second};
  Var v = push(param);  // copy of the current values
  if (param.requires_grad) nodes_[v.id].external = &param;
  leaf_cache_.emplace(&param, v.id);
  return v;
}

Var Tape::constant(Tensor value) { return push(std::move(value)); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.ndim() != 2 || B.ndim() != 2 || A.shape[1] != B.shape[0]) {
    throw UsageError("matmul: shape mismatch (" + A.shape_str() + " vs " + B.shape_str() + ")");
  }
  const int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor C({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = &A.values[i * k];
    double* crow = &C.values[i * n];
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &B.values[p * n];
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return push(std::move(C), [a, b, m, k, n](Tape& t, Node& self) {
    const std::vector<double>& go = self.grad;
    const Tensor& A = t.node(a).value;
    const Tensor& B = t.node(b).value;
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    // dA = dC * B^T
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        double s = 0.0;
        const double* grow = &go[i * n];
        const double* brow = &B.values[p * n];
        for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
        ga[i * k + p] += s;
      }
    }
    // dB = A^T * dC
    for (int64_t p = 0; p < k; ++p) {
      for (int64_t i = 0; i < m; ++i) {
        const double av = A.values[i * k + p];
        if (av == 0.0) continue;
        const double* grow = &go[i * n];
        double* gbrow = &gb[p * n];
        for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  check_same_shape("add", A, B);
  Tensor C = A;
  for (size_t i = 0; i < C.values.size(); ++i) C.values[i] += B.values[i];
  return push(std::move(C), [a, b](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] += self.grad[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  check_same_shape("sub", A, B);
  Tensor C = A;
  for (size_t i = 0; i < C.values.size(); ++i) C.values[i] -= B.values[i];
  return push(std::move(C), [a, b](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] -= self.grad[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  check_same_shape("mul", A, B);
  Tensor C = A;
  for (size_t i = 0; i < C.values.size(); ++i) C.values[i] *= B.values[i];
  return push(std::move(C), [a, b](Tape& t, Node& self) {
    const Tensor& A = t.node(a).value;
    const Tensor& B = t.node(b).value;
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * B.values[i];
      gb[i] += self.grad[i] * A.values[i];
    }
  });
}

Var Tape::scalar_mul(Var a, double c) {
  Tensor C = node(a).value;
  for (double& v : C.values) v *= c;
  return push(std::move(C), [a, c](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * c;
  });
}

Var Tape::scale(Var a, Var s) {
  const Tensor& S = node(s).value;
  if (S.numel() != 1) throw UsageError("scale: scalar operand has shape " + S.shape_str());
  const double c = S.values[0];
  Tensor C = node(a).value;
  for (double& v : C.values) v *= c;
  return push(std::move(C), [a, s, c](Tape& t, Node& self) {
    const Tensor& A = t.node(a).value;
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gs = t.grad_buffer(s);
    double acc = 0.0;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * c;
      acc += self.grad[i] * A.values[i];
    }
    gs[0] += acc;
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.ndim() != 2 || B.ndim() != 2 || A.shape[0] != B.shape[0]) {
    throw UsageError("concat_cols: shape mismatch (" + A.shape_str() + " vs " + B.shape_str() +
                     ")");
  }
  const int64_t m = A.shape[0], ka = A.shape[1], kb = B.shape[1];
  Tensor C({m, ka + kb});
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(&A.values[i * ka], ka, &C.values[i * (ka + kb)]);
    std::copy_n(&B.values[i * kb], kb, &C.values[i * (ka + kb) + ka]);
  }
  return push(std::move(C), [a, b, m, ka, kb](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    for (int64_t i = 0; i < m; ++i) {
      const double* grow = &self.grad[i * (ka + kb)];
      for (int64_t j = 0; j < ka; ++j) ga[i * ka + j] += grow[j];
      for (int64_t j = 0; j < kb; ++j) gb[i * kb + j] += grow[j + ka];
    }
  });
}

Var Tape::softmax_rows(Var a) {
  const Tensor& A = node(a).value;
  if (A.ndim() > 2) throw UsageError("softmax_rows: expected 1-D or 2-D, got " + A.shape_str());
  const int64_t m = A.rows(), n = A.cols();
  if (n == 0) throw ValidationError("softmax_rows: softmax over an empty row");
  Tensor C = A;
  for (int64_t i = 0; i < m; ++i) {
    double* row = &C.values[i * n];
    double mx = row[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int64_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return push(std::move(C), [a, m, n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (int64_t i = 0; i < m; ++i) {
      const double* y = &self.value.values[i * n];
      const double* gy = &self.grad[i * n];
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (int64_t j = 0; j < n; ++j) ga[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Var Tape::segment_softmax(Var x, const std::vector<int64_t>& offsets) {
  const Tensor& X = node(x).value;
  if (X.ndim() != 1) throw UsageError("segment_softmax: expected 1-D, got " + X.shape_str());
  check_offsets("segment_softmax", offsets, X.numel());
  for (size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] == offsets[s - 1]) {
      throw ValidationError("segment_softmax: softmax over an empty row (segment " +
                            std::to_string(s - 1) + ")");
    }
  }
  Tensor C = X;
  for (size_t s = 1; s < offsets.size(); ++s) {
    const int64_t lo = offsets[s - 1], hi = offsets[s];
    double mx = C.values[lo];
    for (int64_t j = lo + 1; j < hi; ++j) mx = std::max(mx, C.values[j]);
    double sum = 0.0;
    for (int64_t j = lo; j < hi; ++j) {
      C.values[j] = std::exp(C.values[j] - mx);
      sum += C.values[j];
    }
    for (int64_t j = lo; j < hi; ++j) C.values[j] /= sum;
  }
  auto offs = offsets;
  return push(std::move(C), [x, offs](Tape& t, Node& self) {
    std::vector<double>& gx = t.grad_buffer(x);
    for (size_t s = 1; s < offs.size(); ++s) {
      const int64_t lo = offs[s - 1], hi = offs[s];
      double dot = 0.0;
      for (int64_t j = lo; j < hi; ++j) dot += self.grad[j] * self.value.values[j];
      for (int64_t j = lo; j < hi; ++j) {
        gx[j] += self.value.values[j] * (self.grad[j] - dot);
      }
    }
  });
}

Var Tape::scale_rows(Var a, Var w) {
  const Tensor& A = node(a).value;
  const Tensor& W = node(w).value;
  if (A.ndim() != 2 || W.ndim() != 1 || A.shape[0] != W.shape[0]) {
    throw UsageError("scale_rows: shape mismatch (" + A.shape_str() + " vs " + W.shape_str() +
                     ")");
  }
  const int64_t m = A.shape[0], n = A.shape[1];
  Tensor C = A;
  for (int64_t i = 0; i < m; ++i) {
    const double wi = W.values[i];
    for (int64_t j = 0; j < n; ++j) C.values[i * n + j] *= wi;
  }
  return push(std::move(C), [a, w, m, n](Tape& t, Node& self) {
    const Tensor& A = t.node(a).value;
    const Tensor& W = t.node(w).value;
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gw = t.grad_buffer(w);
    for (int64_t i = 0; i < m; ++i) {
      const double wi = W.values[i];
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        ga[i * n + j] += g * wi;
        acc += g * A.values[i * n + j];
      }
      gw[i] += acc;
    }
  });
}

Var Tape::segment_sum_rows(Var a, const std::vector<int64_t>& offsets) {
  const Tensor& A = node(a).value;
  if (A.ndim() != 2) throw UsageError("segment_sum_rows: expected 2-D, got " + A.shape_str());
  check_offsets("segment_sum_rows", offsets, A.shape[0]);
  const int64_t n = A.shape[1];
  const int64_t segs = static_cast<int64_t>(offsets.size()) - 1;
  Tensor C({segs, n});
  for (int64_t s = 0; s < segs; ++s) {
    for (int64_t i = offsets[s]; i < offsets[s + 1]; ++i) {
      for (int64_t j = 0; j < n; ++j) C.values[s * n + j] += A.values[i * n + j];
    }
  }
  auto offs = offsets;
  return push(std::move(C), [a, offs, n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    const int64_t segs = static_cast<int64_t>(offs.size()) - 1;
    for (int64_t s = 0; s < segs; ++s) {
      for (int64_t i = offs[s]; i < offs[s + 1]; ++i) {
        for (int64_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[s * n + j];
      }
    }
  });
}

Var Tape::mul_row_vector(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.ndim() != 2 || B.ndim() != 1 || A.shape[1] != B.shape[0]) {
    throw UsageError("mul_row_vector: shape mismatch (" + A.shape_str() + " vs " + B.shape_str() +
                     ")");
  }
  const int64_t m = A.shape[0], n = A.shape[1];
  Tensor C = A;
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) C.values[i * n + j] *= B.values[j];
  }
  return push(std::move(C), [a, b, m, n](Tape& t, Node& self) {
    const Tensor& A = t.node(a).value;
    const Tensor& B = t.node(b).value;
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        ga[i * n + j] += g * B.values[j];
        gb[j] += g * A.values[i * n + j];
      }
    }
  });
}

Var Tape::add_row_vector(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.ndim() != 2 || B.ndim() != 1 || A.shape[1] != B.shape[0]) {
    throw UsageError("add_row_vector: shape mismatch (" + A.shape_str() + " vs " + B.shape_str() +
                     ")");
  }
  const int64_t m = A.shape[0], n = A.shape[1];
  Tensor C = A;
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) C.values[i * n + j] += B.values[j];
  }
  return push(std::move(C), [a, b, m, n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    std::vector<double>& gb = t.grad_buffer(b);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        ga[i * n + j] += self.grad[i * n + j];
        gb[j] += self.grad[i * n + j];
      }
    }
  });
}

Var Tape::sigmoid(Var a) {
  Tensor C = node(a).value;
  for (double& v : C.values) v = stable_sigmoid(v);
  return push(std::move(C), [a](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value.values[i];
      ga[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var Tape::relu(Var a) {
  Tensor C = node(a).value;
  for (double& v : C.values) v = v > 0.0 ? v : 0.0;
  return push(std::move(C), [a](Tape& t, Node& self) {
    const Tensor& A = t.node(a).value;
    std::vector<double>& ga = t.grad_buffer(a);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (A.values[i] > 0.0) ga[i] += self.grad[i];
    }
  });
}

Var Tape::layer_norm_rows(Var a, double eps) {
  const Tensor& A = node(a).value;
  if (A.ndim() != 2) throw UsageError("layer_norm_rows: expected 2-D, got " + A.shape_str());
  const int64_t m = A.shape[0], n = A.shape[1];
  Tensor C({m, n});
  std::vector<double> inv_std(m);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = &A.values[i * n];
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (int64_t j = 0; j < n; ++j) C.values[i * n + j] = (row[j] - mu) * inv;
  }
  return push(std::move(C), [a, m, n, inv_std](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (int64_t i = 0; i < m; ++i) {
      const double* y = &self.value.values[i * n];
      const double* gy = &self.grad[i * n];
      double m1 = 0.0, m2 = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        m1 += gy[j];
        m2 += gy[j] * y[j];
      }
      m1 /= static_cast<double>(n);
      m2 /= static_cast<double>(n);
      for (int64_t j = 0; j < n; ++j) {
        ga[i * n + j] += inv_std[i] * (gy[j] - m1 - y[j] * m2);
      }
    }
  });
}

Var Tape::transpose(Var a) {
  const Tensor& A = node(a).value;
  if (A.ndim() != 2) throw UsageError("transpose: expected 2-D, got " + A.shape_str());
  const int64_t m = A.shape[0], n = A.shape[1];
  Tensor C({n, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) C.values[j * m + i] = A.values[i * n + j];
  }
  return push(std::move(C), [a, m, n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    }
  });
}

Var Tape::gather_rows(Var a, std::vector<int64_t> idx) {
  const Tensor& A = node(a).value;
  if (A.ndim() != 2) throw UsageError("gather_rows: expected 2-D, got " + A.shape_str());
  const int64_t m = A.shape[0], n = A.shape[1];
  for (int64_t i : idx) {
    if (i < 0 || i >= m) {
      throw ValidationError("gather_rows: row index " + std::to_string(i) + " out of range [0," +
                            std::to_string(m) + ")");
    }
  }
  const int64_t r = static_cast<int64_t>(idx.size());
  Tensor C({r, n});
  for (int64_t i = 0; i < r; ++i) {
    std::copy_n(&A.values[idx[i] * n], n, &C.values[i * n]);
  }
  return push(std::move(C), [a, idx = std::move(idx), n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (size_t i = 0; i < idx.size(); ++i) {
      for (int64_t j = 0; j < n; ++j) ga[idx[i] * n + j] += self.grad[i * n + j];
    }
  });
}

Var Tape::row_sum(Var a) {
  const Tensor& A = node(a).value;
  if (A.ndim() != 2) throw UsageError("row_sum: expected 2-D, got " + A.shape_str());
  const int64_t m = A.shape[0], n = A.shape[1];
  Tensor C({m});
  for (int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += A.values[i * n + j];
    C.values[i] = s;
  }
  return push(std::move(C), [a, m, n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[i];
    }
  });
}

Var Tape::sum_all(Var a) {
  const Tensor& A = node(a).value;
  double s = 0.0;
  for (double v : A.values) s += v;
  return push(Tensor::scalar(s), [a](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (double& g : ga) g += self.grad[0];
  });
}

Var Tape::mean_all(Var a) {
  const Tensor& A = node(a).value;
  const double n = static_cast<double>(A.numel());
  double s = 0.0;
  for (double v : A.values) s += v;
  return push(Tensor::scalar(s / n), [a, n](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (double& g : ga) g += self.grad[0] / n;
  });
}

Var Tape::reshape(Var a, std::vector<int64_t> shape) {
  const Tensor& A = node(a).value;
  if (shape_numel(shape) != A.numel()) {
    throw UsageError("reshape: cannot view " + A.shape_str() + " as " + shape_to_string(shape));
  }
  Tensor C(std::move(shape), A.values);
  return push(std::move(C), [a](Tape& t, Node& self) {
    std::vector<double>& ga = t.grad_buffer(a);
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Var Tape::variance_of_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("variance_of_scalars: empty input list");
  const int64_t n = static_cast<int64_t>(xs.size());
  std::vector<double> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = scalar_value(xs[i]);
  bool all_equal = true;
  for (int64_t i = 1; i < n; ++i) all_equal = all_equal && (v[i] == v[0]);
  double mu, var;
  if (all_equal) {
    // exact zero for identical inputs, including the singleton case
    mu = v[0];
    var = 0.0;
  } else {
    mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(n);
    var = 0.0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= static_cast<double>(n);
  }
  auto parents = xs;
  return push(Tensor::scalar(var), [parents, v, mu, n](Tape& t, Node& self) {
    const double go = self.grad[0];
    for (int64_t i = 0; i < n; ++i) {
      t.grad_buffer(parents[i])[0] += go * 2.0 * (v[i] - mu) / static_cast<double>(n);
    }
  });
}

Var Tape::bce_with_logits(Var logits, const std::vector<double>& targets) {
  const Tensor& Z = node(logits).value;
  const int64_t n = Z.numel();
  if (Z.ndim() > 2 || (Z.ndim() == 2 && Z.shape[1] != 1)) {
    throw UsageError("bce_with_logits: expected {n} or {n,1} logits, got " + Z.shape_str());
  }
  if (static_cast<int64_t>(targets.size()) != n) {
    throw UsageError("bce_with_logits: " + std::to_string(n) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (n == 0) throw UsageError("bce_with_logits: empty batch");
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) loss += bce_term(Z.values[i], targets[i]);
  loss /= static_cast<double>(n);
  auto y = targets;
  return push(Tensor::scalar(loss), [logits, y, n](Tape& t, Node& self) {
    const Tensor& Z = t.node(logits).value;
    std::vector<double>& gz = t.grad_buffer(logits);
    const double go = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      gz[i] += go * (stable_sigmoid(Z.values[i]) - y[i]);
    }
  });
}

Var Tape::softmax_ce_with_logits(Var logits, const std::vector<int64_t>& targets) {
  const Tensor& Z = node(logits).value;
  if (Z.ndim() != 2) throw UsageError("softmax_ce_with_logits: expected 2-D logits");
  const int64_t n = Z.shape[0], c = Z.shape[1];
  if (static_cast<int64_t>(targets.size()) != n) {
    throw UsageError("softmax_ce_with_logits: " + std::to_string(n) + " rows vs " +
                     std::to_string(targets.size()) + " targets");
  }
  for (int64_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= c) {
      throw ValidationError("softmax_ce_with_logits: target " + std::to_string(targets[i]) +
                            " out of range [0," + std::to_string(c) + ") at sample " +
                            std::to_string(i));
    }
  }
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = &Z.values[i * c];
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    loss += mx + std::log(sum) - row[targets[i]];
  }
  loss /= static_cast<double>(n);
  auto y = targets;
  return push(Tensor::scalar(loss), [logits, y, n, c](Tape& t, Node& self) {
    const Tensor& Z = t.node(logits).value;
    std::vector<double>& gz = t.grad_buffer(logits);
    const double go = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      const double* row = &Z.values[i * c];
      double mx = row[0];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
      for (int64_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        gz[i * c + j] += go * (p - (j == y[i] ? 1.0 : 0.0));
      }
    }
  });
}

Var Tape::attention_scores(Var q, Var k, const std::vector<int64_t>& centers,
                           const std::vector<int64_t>& neighbors, double scale) {
  const Tensor& Q = node(q).value;
  const Tensor& K = node(k).value;
  check_same_shape("attention_scores", Q, K);
  if (Q.ndim() != 2) throw UsageError("attention_scores: expected 2-D states");
  if (centers.size() != neighbors.size()) {
    throw UsageError("attention_scores: centers/neighbors length mismatch");
  }
  const int64_t rows = Q.shape[0], d = Q.shape[1];
  const int64_t m = static_cast<int64_t>(centers.size());
  for (int64_t e = 0; e < m; ++e) {
    if (centers[e] < 0 || centers[e] >= rows || neighbors[e] < 0 || neighbors[e] >= rows) {
      throw ValidationError("attention_scores: index out of range at entry " + std::to_string(e));
    }
  }
  Tensor C({m});
  for (int64_t e = 0; e < m; ++e) {
    const double* qr = &Q.values[centers[e] * d];
    const double* kr = &K.values[neighbors[e] * d];
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += qr[j] * kr[j];
    C.values[e] = s * scale;
  }
  auto cs = centers;
  auto ns = neighbors;
  return push(std::move(C), [q, k, cs, ns, d, scale](Tape& t, Node& self) {
    const Tensor& Q = t.node(q).value;
    const Tensor& K = t.node(k).value;
    std::vector<double>& gq = t.grad_buffer(q);
    std::vector<double>& gk = t.grad_buffer(k);
    for (size_t e = 0; e < cs.size(); ++e) {
      const double g = self.grad[e] * scale;
      if (g == 0.0) continue;
      const double* qr = &Q.values[cs[e] * d];
      const double* kr = &K.values[ns[e] * d];
      double* gqr = &gq[cs[e] * d];
      double* gkr = &gk[ns[e] * d];
      for (int64_t j = 0; j < d; ++j) {
        gqr[j] += g * kr[j];
        gkr[j] += g * qr[j];
      }
    }
  });
}

Var Tape::attention_combine(Var v, Var m, const std::vector<int64_t>& neighbors,
                            const std::vector<int64_t>& offsets) {
  const Tensor& V = node(v).value;
  const Tensor& M = node(m).value;
  if (V.ndim() != 2 || M.ndim() != 1) throw UsageError("attention_combine: bad shapes");
  if (M.numel() != static_cast<int64_t>(neighbors.size())) {
    throw UsageError("attention_combine: mask/neighbor length mismatch");
  }
  check_offsets("attention_combine", offsets, M.numel());
  const int64_t rows = V.shape[0], d = V.shape[1];
  const int64_t segs = static_cast<int64_t>(offsets.size()) - 1;
  for (int64_t nb : neighbors) {
    if (nb < 0 || nb >= rows) throw ValidationError("attention_combine: index out of range");
  }
  Tensor C({segs, d});
  for (int64_t s = 0; s < segs; ++s) {
    double* out = &C.values[s * d];
    for (int64_t e = offsets[s]; e < offsets[s + 1]; ++e) {
      const double w = M.values[e];
      const double* vr = &V.values[neighbors[e] * d];
      for (int64_t j = 0; j < d; ++j) out[j] += w * vr[j];
    }
  }
  auto ns = neighbors;
  auto offs = offsets;
  return push(std::move(C), [v, m, ns, offs, d](Tape& t, Node& self) {
    const Tensor& V = t.node(v).value;
    const Tensor& M = t.node(m).value;
    std::vector<double>& gv = t.grad_buffer(v);
    std::vector<double>& gm = t.grad_buffer(m);
    const int64_t segs = static_cast<int64_t>(offs.size()) - 1;
    for (int64_t s = 0; s < segs; ++s) {
      const double* go = &self.grad[s * d];
      for (int64_t e = offs[s]; e < offs[s + 1]; ++e) {
        const double w = M.values[e];
        const double* vr = &V.values[ns[e] * d];
        double* gvr = &gv[ns[e] * d];
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          acc += go[j] * vr[j];
          gvr[j] += w * go[j];
        }
        gm[e] += acc;
      }
    }
  });
}

Var Tape::custom(Tensor value, std::function<void(Tape&, Node&)> back) {
  return push(std::move(value), std::move(back));
}

void Tape::backward(Var loss) {
  Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + ln.value.shape_str());
  }
  for (Node& n : nodes_) n.grad.clear();
  ln.grad.assign(1, 1.0);
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.back) n.back(*this, n);
    if (n.external) {
      n.external->ensure_grad();
      for (size_t j = 0; j < n.grad.size(); ++j) n.external->grad[j] += n.grad[j];
    }
  }
}

}  // namespace digl
