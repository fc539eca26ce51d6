#pragma once

#include <cstdint>
#include <vector>

namespace digl {

// AUC via midranks: equals (#concordant + 0.5 * #ties) / (n1 * n0).
// Labels are 0/1; requires at least one of each.
double auc_score(const std::vector<double>& scores, const std::vector<int>& labels);

// Accuracy with argmax ties broken towards the lowest class index.
double accuracy(const std::vector<double>& logits, int64_t num_classes,
                const std::vector<int64_t>& labels);

int64_t argmax_lowest(const double* row, int64_t n);

double mean(const std::vector<double>& xs);
double population_std(const std::vector<double>& xs);

}  // namespace digl
