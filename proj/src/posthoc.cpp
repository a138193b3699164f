#include "balcal/posthoc.hpp"

#include <cmath>

#include "balcal/nncore.hpp"

namespace balcal::posthoc {

double nll_at_temperature(const Matrix& logits, const std::vector<int>& labels,
                          double t) {
  Matrix probs = nn::softmax_rows(logits / t);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total -= std::log(std::max(probs(static_cast<int>(i), labels[i]), 1e-12));
  return total / static_cast<double>(labels.size());
}

Temperature fit_temperature(const Matrix& logits, const std::vector<int>& labels) {
  if (logits.rows() != static_cast<int>(labels.size()))
    throw std::invalid_argument("fit_temperature: logit/label count mismatch");
  if (logits.rows() < logits.cols())
    throw std::invalid_argument("fit_temperature: need n >= K validation samples");
  int first = labels.empty() ? -1 : labels.front();
  bool degenerate = true;
  for (int l : labels)
    if (l != first) { degenerate = false; break; }
  if (degenerate)
    throw std::invalid_argument("fit_temperature: validation labels are a single class");

  auto f = [&](double t) { return nll_at_temperature(logits, labels, t); };

  // Golden-section search to 1e-4 on T in [0.05, 20].
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.05, b = 20.0;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-4) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  double t_star = 0.5 * (a + b);
  // The fitted temperature must never be worse than no scaling.
  if (f(1.0) < f(t_star)) t_star = 1.0;
  return Temperature{t_star};
}

Matrix apply_temperature(const Matrix& logits, double t) {
  if (t <= 0) throw std::invalid_argument("apply_temperature: T must be > 0");
  return nn::softmax_rows(logits / t);
}

}  // namespace balcal::posthoc
