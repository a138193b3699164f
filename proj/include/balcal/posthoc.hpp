#pragma once

#include <vector>

#include "balcal/common.hpp"

namespace balcal::posthoc {

struct Temperature {
  double t = 1.0;
};

// NLL-minimizing temperature, golden-section search on [0.05, 20].
Temperature fit_temperature(const Matrix& logits, const std::vector<int>& labels);

// softmax(logits / T), row-wise.
Matrix apply_temperature(const Matrix& logits, double t);

double nll_at_temperature(const Matrix& logits, const std::vector<int>& labels,
                          double t);

}  // namespace balcal::posthoc
