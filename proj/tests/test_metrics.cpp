#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "balcal/metrics.hpp"

using namespace balcal;
using namespace balcal::metrics;

namespace {
Prediction make_pred(double confidence, bool correct, int k = 2) {
  Prediction p;
  p.label = 0;
  p.predicted = correct ? 0 : 1;
  p.confidence = confidence;
  p.probs.assign(k, (1.0 - confidence) / (k - 1));
  p.probs[p.predicted] = confidence;
  return p;
}

// Independent two-pass binning oracle for ECE: assign, then average.
double ece_oracle(const PredictionSet& preds, int bins) {
  std::vector<std::vector<const Prediction*>> buckets(bins);
  for (const auto& p : preds.items) {
    int assigned = bins - 1;
    for (int b = 0; b < bins; ++b) {
      double lo = static_cast<double>(b) / bins;
      double hi = static_cast<double>(b + 1) / bins;
      if (p.confidence > lo && p.confidence <= hi) { assigned = b; break; }
      if (b == 0 && p.confidence <= lo) { assigned = 0; break; }
    }
    buckets[assigned].push_back(&p);
  }
  double total = 0.0;
  for (const auto& bucket : buckets) {
    if (bucket.empty()) continue;
    double conf = 0.0, acc = 0.0;
    for (const auto* p : bucket) {
      conf += p->confidence;
      acc += p->correct() ? 1.0 : 0.0;
    }
    total += (static_cast<double>(bucket.size()) / preds.size()) *
             std::abs(acc / bucket.size() - conf / bucket.size());
  }
  return total;
}

PredictionSet random_set(Rng& rng, int n, int k = 4) {
  PredictionSet preds;
  preds.k = k;
  for (int i = 0; i < n; ++i) {
    Vector p(k);
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      p[j] = -std::log(rng.uniform() + 1e-12);
      total += p[j];
    }
    p /= total;
    preds.add(static_cast<int>(rng.next_index(k)), p);
  }
  return preds;
}
}  // namespace

TEST_CASE("ece hand-evaluated cases") {
  PredictionSet perfect;
  perfect.k = 2;
  for (int i = 0; i < 5; ++i) perfect.items.push_back(make_pred(1.0, true));
  CHECK(ece(perfect) == doctest::Approx(0.0));

  PredictionSet half;
  half.k = 2;
  for (int i = 0; i < 4; ++i) half.items.push_back(make_pred(0.9, i < 2));
  CHECK(ece(half) == doctest::Approx(0.4).epsilon(1e-12));

  // Two occupied bins, counts 3 and 1, gaps 0.1 and 0.3:
  // ECE = 0.75*0.1 + 0.25*0.3 = 0.15.
  PredictionSet e;
  e.k = 2;
  e.items.push_back(make_pred(0.9, true));
  e.items.push_back(make_pred(0.9, true));
  e.items.push_back(make_pred(0.9, true));
  e.items.push_back(make_pred(0.3, false));
  // bins: {0.9,0.9,0.9} gap |1-0.9|=0.1 weight 0.75; {0.3} gap 0.3 weight 0.25
  CHECK(ece(e) == doctest::Approx(0.75 * 0.1 + 0.25 * 0.3).epsilon(1e-12));

  CHECK_THROWS(ece(PredictionSet{}));
  CHECK_THROWS(ece(e, 0));
}

TEST_CASE("ece matches brute-force oracle on random sets") {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    PredictionSet preds = random_set(rng, 20 + trial % 50);
    CHECK(std::abs(ece(preds, 15) - ece_oracle(preds, 15)) < 1e-12);
  }
}

TEST_CASE("reliability bins share the ece arithmetic") {
  PredictionSet half;
  half.k = 2;
  for (int i = 0; i < 4; ++i) half.items.push_back(make_pred(0.9, i < 2));
  BinReport report = reliability_bins(half, 15);
  std::size_t occupied = 0;
  for (const auto& b : report.bins) {
    if (b.count == 0) continue;
    ++occupied;
    CHECK(b.accuracy == doctest::Approx(0.5));
    CHECK(b.confidence == doctest::Approx(0.9));
  }
  CHECK(occupied == 1);
  CHECK(report.bins.size() == 15);
  CHECK(report.bins[0].lo == doctest::Approx(0.0));
  CHECK(report.bins[0].hi == doctest::Approx(1.0 / 15));
  CHECK(report.bins[1].lo == doctest::Approx(1.0 / 15));

  // Gap-weighted sum equals the scalar.
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    PredictionSet preds = random_set(rng, 60);
    BinReport r = reliability_bins(preds, 15);
    double total = 0.0;
    for (const auto& b : r.bins)
      if (b.count > 0)
        total += (static_cast<double>(b.count) / preds.size()) *
                 std::abs(b.accuracy - b.confidence);
    CHECK(std::abs(total - ece(preds, 15)) < 1e-12);
  }
  CHECK_THROWS(reliability_bins(PredictionSet{}));
}

TEST_CASE("aece basics") {
  // 10 tied-confidence samples, 5 bins of 2; stable order keeps the five
  // correct ones first, so per-bin gaps are 0.1, 0.1, 0.4, 0.9, 0.9.
  PredictionSet same;
  same.k = 2;
  for (int i = 0; i < 10; ++i) same.items.push_back(make_pred(0.9, i < 5));
  CHECK(aece(same, 5) == doctest::Approx(0.48).epsilon(1e-12));

  // Singleton bins: mean |correct - confidence|.
  Rng rng(17);
  PredictionSet distinct;
  distinct.k = 2;
  std::vector<double> confs;
  for (int i = 0; i < 12; ++i) confs.push_back(0.5 + 0.04 * i);
  for (int i = 0; i < 12; ++i)
    distinct.items.push_back(make_pred(confs[i], rng.uniform() < 0.5));
  double expected = 0.0;
  for (const auto& p : distinct.items)
    expected += std::abs((p.correct() ? 1.0 : 0.0) - p.confidence) / 12.0;
  CHECK(aece(distinct, 12) == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS(aece(distinct, 13));  // n < bins

  // Near-perfectly calibrated synthetic set: conf c, correct with freq c.
  PredictionSet calibrated;
  calibrated.k = 2;
  for (int rep = 0; rep < 10; ++rep)
    for (int i = 0; i < 10; ++i)
      calibrated.items.push_back(make_pred(0.8, i < 8));
  CHECK(aece(calibrated, 5) < 1.0 / calibrated.size() + 1e-12);
}

TEST_CASE("accuracy, confidence, entropy") {
  PredictionSet preds;
  preds.k = 2;
  preds.items.push_back(make_pred(0.6, true));
  preds.items.push_back(make_pred(0.8, true));
  CHECK(accuracy(preds) == doctest::Approx(1.0));
  CHECK(mean_confidence(preds) == doctest::Approx(0.7).epsilon(1e-12));

  Vector onehot(3);
  onehot << 1, 0, 0;
  Vector uniform10 = Vector::Constant(10, 0.1);
  Vector half(2);
  half << 0.5, 0.5;
  PredictionSet dummy;
  dummy.k = 3;
  dummy.add(0, onehot);
  CHECK(mean_entropy(dummy) == doctest::Approx(0.0));
  PredictionSet u;
  u.k = 10;
  u.add(0, uniform10);
  CHECK(mean_entropy(u) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(mean_confidence(u) == doctest::Approx(0.1).epsilon(1e-12));
  PredictionSet h;
  h.k = 2;
  h.add(0, half);
  CHECK(mean_entropy(h) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(mean_confidence(h) == doctest::Approx(0.5).epsilon(1e-12));
}

namespace {
double auroc_bruteforce(const std::vector<double>& in,
                        const std::vector<double>& out) {
  double total = 0.0;
  for (double a : in)
    for (double b : out) {
      if (a > b) total += 1.0;
      else if (a == b) total += 0.5;
    }
  return total / (in.size() * out.size());
}
}  // namespace

TEST_CASE("auroc hand cases and oracle") {
  CHECK(auroc({0.9, 0.8}, {0.2, 0.1}) == doctest::Approx(1.0));
  CHECK(auroc({0.3, 0.7}, {0.3, 0.7}) == doctest::Approx(0.5));
  CHECK(auroc({0.9, 0.4}, {0.6, 0.1}) == doctest::Approx(0.75));
  CHECK_THROWS(auroc({}, {0.1}));

  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> in, out;
    for (int i = 0; i < 30; ++i) in.push_back(std::round(rng.uniform() * 20) / 20);
    for (int i = 0; i < 25; ++i) out.push_back(std::round(rng.uniform() * 20) / 20);
    CHECK(std::abs(auroc(in, out) - auroc_bruteforce(in, out)) < 1e-12);
  }
}

TEST_CASE("auroc invariant under strictly increasing transforms") {
  Rng rng(77);
  std::vector<double> in, out;
  for (int i = 0; i < 40; ++i) in.push_back(rng.uniform());
  for (int i = 0; i < 40; ++i) out.push_back(rng.uniform() * 0.8);
  double base = auroc(in, out);
  auto transform = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(3.0 * x) - 0.5;
    return v;
  };
  CHECK(auroc(transform(in), transform(out)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("fpr95 cases") {
  CHECK(fpr95({0.9, 0.8, 0.85}, {0.2, 0.1}) == doctest::Approx(0.0));

  std::vector<double> in(19, 0.9);
  in.push_back(0.1);
  std::vector<double> out(10, 0.5);
  CHECK(fpr95(in, out) == doctest::Approx(0.0));  // 19/20 = 0.95 at t=0.9

  // Identical distributions: FPR ~ 0.95 at large n.
  Rng rng(41);
  std::vector<double> a, b;
  for (int i = 0; i < 10000; ++i) a.push_back(rng.uniform());
  for (int i = 0; i < 10000; ++i) b.push_back(rng.uniform());
  CHECK(std::abs(fpr95(a, b) - 0.95) < 0.02);

  CHECK_THROWS(fpr95({}, {0.5}));
}

TEST_CASE("metrics range and permutation invariance") {
  Rng rng(53);
  PredictionSet preds = random_set(rng, 64);
  double e1 = ece(preds), a1 = aece(preds);
  CHECK(e1 >= 0.0);
  CHECK(e1 <= 1.0);
  CHECK(a1 >= 0.0);
  CHECK(a1 <= 1.0);
  std::shuffle(preds.items.begin(), preds.items.end(), rng.engine());
  CHECK(ece(preds) == doctest::Approx(e1).epsilon(1e-12));
  CHECK(aece(preds) == doctest::Approx(a1).epsilon(1e-12));
}

TEST_CASE("csv round trip") {
  Rng rng(8);
  PredictionSet preds = random_set(rng, 25, 3);
  auto path = std::filesystem::temp_directory_path() / "balcal_preds_test.csv";
  write_csv(preds, path.string());
  PredictionSet back = read_csv(path.string());
  REQUIRE(back.size() == preds.size());
  CHECK(back.k == preds.k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(back.items[i].label == preds.items[i].label);
    CHECK(back.items[i].predicted == preds.items[i].predicted);
    CHECK(back.items[i].confidence == doctest::Approx(preds.items[i].confidence).epsilon(1e-15));
  }
  std::filesystem::remove(path);
}
