#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common.hpp"

namespace digl {

double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw UsageError("auc: empty input or size mismatch");
  }
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // midranks, 1-based; ties share the average rank which is a multiple
  // of 0.5 and therefore exact in doubles
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double n1 = 0.0, rank_sum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[k] > 0) {
      n1 += 1.0;
      rank_sum += rank[k];
    }
  }
  const double n0 = static_cast<double>(n) - n1;
  if (n1 == 0.0 || n0 == 0.0) {
    throw ValidationError("auc: needs at least one positive and one negative");
  }
  const double u = rank_sum - n1 * (n1 + 1.0) / 2.0;
  return u / (n1 * n0);
}

int64_t argmax_lowest(const double* row, int64_t n) {
  int64_t best = 0;
  for (int64_t j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

double accuracy(const std::vector<double>& logits, int64_t num_classes,
                const std::vector<int64_t>& labels) {
  if (num_classes <= 0 || labels.empty() ||
      logits.size() != labels.size() * static_cast<size_t>(num_classes)) {
    throw UsageError("accuracy: size mismatch");
  }
  int64_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (argmax_lowest(&logits[i * num_classes], num_classes) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw UsageError("mean: empty input");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  const double mu = mean(xs);
  double v = 0.0;
  for (double x : xs) v += (x - mu) * (x - mu);
  return std::sqrt(v / static_cast<double>(xs.size()));
}

}  // namespace digl
