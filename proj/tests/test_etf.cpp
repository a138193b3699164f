#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>

#include "balcal/etf.hpp"
#include "balcal/nncore.hpp"

using namespace balcal;
using namespace balcal::etf;

TEST_CASE("orthogonal basis satisfies U^T U = I") {
  auto basis = make_orthogonal_basis(8, 4, 1);
  Matrix residual =
      basis.u.transpose() * basis.u - Matrix::Identity(4, 4);
  CHECK(residual.norm() < 1e-9);
}

TEST_CASE("orthogonal basis is deterministic per seed") {
  auto a = make_orthogonal_basis(3, 2, 7);
  auto b = make_orthogonal_basis(3, 2, 7);
  CHECK((a.u - b.u).cwiseAbs().maxCoeff() == 0.0);
  auto c = make_orthogonal_basis(3, 2, 8);
  CHECK((a.u - c.u).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("orthogonal basis rejects bad shapes") {
  CHECK_THROWS(make_orthogonal_basis(2, 3, 1));
  CHECK_THROWS(make_orthogonal_basis(4, 1, 1));
}

TEST_CASE("2x2 identity basis gives the hand-computed ETF") {
  OrthogonalBasis basis{Matrix::Identity(2, 2)};
  auto classifier = build_etf(basis, 1.0);
  const Matrix& m = classifier.weights();
  double s = std::sqrt(0.5);
  CHECK(m(0, 0) == doctest::Approx(s).epsilon(1e-9));
  CHECK(m(0, 1) == doctest::Approx(-s).epsilon(1e-9));
  CHECK(m(1, 0) == doctest::Approx(-s).epsilon(1e-9));
  CHECK(m(1, 1) == doctest::Approx(s).epsilon(1e-9));
  CHECK(m.col(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.col(0).dot(m.col(1)) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("column norms equal beta, pairwise cosine -1/(K-1)") {
  auto basis = make_orthogonal_basis(6, 3, 11);
  auto classifier = build_etf(basis, 3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(classifier.weights().col(i).norm() == doctest::Approx(3.0).epsilon(1e-9));
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      double cosine = classifier.weights().col(i).dot(classifier.weights().col(j)) /
                      (classifier.weights().col(i).norm() *
                       classifier.weights().col(j).norm());
      CHECK(cosine == doctest::Approx(-0.5).epsilon(1e-9));
    }
}

TEST_CASE("seed-1 d=8 K=4 pairwise cosine is -1/3") {
  auto classifier = build_etf(make_orthogonal_basis(8, 4, 1), 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      double dot = classifier.weights().col(i).dot(classifier.weights().col(j));
      CHECK(std::abs(dot + 1.0 / 3.0) < 1e-9);
    }
}

TEST_CASE("build_etf rejects nonpositive beta") {
  auto basis = make_orthogonal_basis(4, 2, 1);
  CHECK_THROWS(build_etf(basis, 0.0));
  CHECK_THROWS(build_etf(basis, -1.0));
}

TEST_CASE("etf_logits basics") {
  auto classifier = build_etf(make_orthogonal_basis(8, 4, 3), 1.0);
  Vector zero = Vector::Zero(8);
  CHECK(etf_logits(zero, classifier).cwiseAbs().maxCoeff() == 0.0);

  // First column of M as feature: logit 0 is the squared norm, i.e. 1.
  Vector z = classifier.weights().col(0);
  CHECK(etf_logits(z, classifier)[0] == doctest::Approx(1.0).epsilon(1e-9));

  auto doubled = classifier.with_beta(2.0);
  Vector l1 = etf_logits(z, classifier);
  Vector l2 = etf_logits(z, doubled);
  for (int i = 0; i < 4; ++i)
    CHECK(l2[i] == doctest::Approx(2.0 * l1[i]).epsilon(1e-12));

  CHECK_THROWS(etf_logits(Vector(Vector::Zero(5)), classifier));
}

TEST_CASE("confidence ratio formula and oracle") {
  Vector scores(2);
  scores << 0.5, 0.5;
  CHECK(confidence_ratio(scores, 0, 1, 1.0, 2) == doctest::Approx(1.0));

  scores << 1.0, 0.0;
  CHECK(confidence_ratio(scores, 0, 1, 1.0, 2) ==
        doctest::Approx(std::exp(std::sqrt(2.0))).epsilon(1e-9));

  Vector s10(10);
  s10.setZero();
  s10[0] = 0.5;
  CHECK(confidence_ratio(s10, 0, 1, 10.0, 10) ==
        doctest::Approx(std::exp(10.0 * std::sqrt(10.0 / 9.0) * 0.5)).epsilon(1e-9));

  CHECK_THROWS(confidence_ratio(scores, 1, 1, 1.0, 2));
}

TEST_CASE("ratio law against softmax oracle") {
  Rng rng(99);
  const int k = 5;
  auto classifier = build_etf(make_orthogonal_basis(12, k, 5), 2.5);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector z(12);
    for (int i = 0; i < 12; ++i) z[i] = rng.normal();
    Vector scores = classifier.score_directions().transpose() * z;
    Vector probs = nn::softmax(etf_logits(z, classifier));
    for (int i = 1; i < k; ++i) {
      double want = probs[i] / probs[0];
      double got = confidence_ratio(scores, i, 0, classifier.beta(), k);
      CHECK(std::abs(got - want) <= 1e-9 * std::abs(want));
    }
  }
}

TEST_CASE("beta limit behaviors and monotonicity") {
  Rng rng(123);
  auto basis = make_orthogonal_basis(16, 8, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Vector z(16);
    for (int i = 0; i < 16; ++i) z[i] = rng.normal();
    Vector tiny = nn::softmax(etf_logits(z, build_etf(basis, 1e-6)));
    for (int i = 0; i < 8; ++i) CHECK(std::abs(tiny[i] - 1.0 / 8) < 1e-4);
    Vector huge = nn::softmax(etf_logits(z, build_etf(basis, 1e3)));
    CHECK(huge.maxCoeff() > 1.0 - 1e-6);

    double prev = 0.0;
    for (double beta : {0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
      double conf = nn::softmax(etf_logits(z, build_etf(basis, beta))).maxCoeff();
      CHECK(conf >= prev - 1e-12);
      prev = conf;
    }
  }
}

TEST_CASE("argmax invariant in beta") {
  Rng rng(7);
  auto basis = make_orthogonal_basis(10, 6, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector z(10);
    for (int i = 0; i < 10; ++i) z[i] = rng.normal();
    int ref = -1;
    for (double beta : {0.1, 1.0, 10.0, 6.0}) {
      int arg = 0;
      etf_logits(z, build_etf(basis, beta)).maxCoeff(&arg);
      if (ref < 0) ref = arg;
      CHECK(arg == ref);
    }
  }
}

TEST_CASE("verify_etf reports construction residuals and perturbations") {
  auto classifier = build_etf(make_orthogonal_basis(8, 4, 1), 1.0);
  auto report = verify_etf(classifier);
  CHECK(report.max_norm_deviation < 1e-9);
  CHECK(report.max_cosine_deviation < 1e-9);
  CHECK(report.max_orthogonality_residual < 1e-9);

  // beta=K classifier measured against its own beta.
  auto big = classifier.with_beta(4.0);
  CHECK(verify_etf(big).max_norm_deviation < 1e-9);

  // Perturbing one entry must register in the norm deviation.
  EtfClassifier perturbed = classifier;
  const_cast<Matrix&>(perturbed.weights())(0, 0) += 1e-3;
  CHECK(verify_etf(perturbed).max_norm_deviation >= 1e-4);
}

TEST_CASE("json round trip is exact") {
  auto classifier = build_etf(make_orthogonal_basis(8, 4, 42), 1.5, 42);
  auto j = to_json(classifier);
  auto back = etf_from_json(j);
  CHECK((back.weights() - classifier.weights()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.basis().u - classifier.basis().u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.beta() == classifier.beta());
  // Bit-exact through a serialize/parse cycle of the text itself.
  auto j2 = nlohmann::json::parse(j.dump());
  auto back2 = etf_from_json(j2);
  CHECK((back2.weights() - classifier.weights()).cwiseAbs().maxCoeff() == 0.0);
}
