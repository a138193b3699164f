#include <doctest.h>

#include <cmath>

#include "balcal/nncore.hpp"
#include "balcal/posthoc.hpp"

using namespace balcal;
using namespace balcal::posthoc;

namespace {
// Simulated calibrated logits: labels drawn from softmax(logits), so the
// NLL-optimal temperature is 1 by construction.
std::pair<Matrix, std::vector<int>> calibrated_sample(Rng& rng, int n, int k) {
  Matrix logits(n, k);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) logits(i, j) = 2.0 * rng.normal();
    Vector p = nn::softmax(logits.row(i).transpose());
    double u = rng.uniform(), acc = 0.0;
    labels[i] = k - 1;
    for (int j = 0; j < k; ++j) {
      acc += p[j];
      if (u <= acc) { labels[i] = j; break; }
    }
  }
  return {logits, labels};
}
}  // namespace

TEST_CASE("apply_temperature basics") {
  Matrix logits(2, 3);
  logits << 1.0, 0.5, -0.2, 2.0, 2.0, 0.0;
  Matrix p1 = apply_temperature(logits, 1.0);
  CHECK((p1 - nn::softmax_rows(logits)).cwiseAbs().maxCoeff() == 0.0);

  Matrix phuge = apply_temperature(logits, 1e6);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(phuge(i, j) - 1.0 / 3) < 1e-4);

  Matrix phalf = apply_temperature(logits, 0.5);
  CHECK((phalf - nn::softmax_rows(2.0 * logits)).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS(apply_temperature(logits, 0.0));
}

TEST_CASE("argmax invariant under any positive temperature") {
  Rng rng(5);
  Matrix logits(20, 4);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 4; ++j) logits(i, j) = rng.normal();
  for (double t : {0.1, 0.7, 1.0, 3.0, 15.0}) {
    Matrix p = apply_temperature(logits, t);
    for (int i = 0; i < 20; ++i) {
      int a = 0, b = 0;
      logits.row(i).maxCoeff(&a);
      p.row(i).maxCoeff(&b);
      CHECK(a == b);
    }
  }
}

TEST_CASE("fit recovers T near 1 for calibrated logits and T near c for scaled") {
  Rng rng(17);
  auto [logits, labels] = calibrated_sample(rng, 4000, 5);
  double t1 = fit_temperature(logits, labels).t;
  CHECK(t1 > 0.95);
  CHECK(t1 < 1.05);

  double t2 = fit_temperature(Matrix(2.0 * logits), labels).t;
  CHECK(std::abs(t2 - 2.0) < 0.05);
}

TEST_CASE("fit never increases NLL and is deterministic") {
  Rng rng(23);
  auto [logits, labels] = calibrated_sample(rng, 500, 4);
  Matrix sharp = 3.0 * logits;  // overconfident
  double t = fit_temperature(sharp, labels).t;
  CHECK(nll_at_temperature(sharp, labels, t) <=
        nll_at_temperature(sharp, labels, 1.0) + 1e-12);
  CHECK(fit_temperature(sharp, labels).t == t);
}

TEST_CASE("degenerate labels rejected") {
  Matrix logits = Matrix::Random(10, 3);
  std::vector<int> same(10, 1);
  CHECK_THROWS(fit_temperature(logits, same));
  std::vector<int> few{0, 1};
  CHECK_THROWS(fit_temperature(Matrix::Random(2, 3), few));
}
