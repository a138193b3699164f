#include "balcal/etf.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace balcal::etf {

OrthogonalBasis make_orthogonal_basis(int d, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_orthogonal_basis: k must be >= 2");
  if (d < k) throw std::invalid_argument("make_orthogonal_basis: requires d >= k");
  Rng rng(seed);
  Matrix g(d, k);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) g(i, j) = rng.normal();

  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, k);
  Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  // Sign convention: positive diagonal of R, so the factorization is unique
  // and the basis is uniform over the Stiefel manifold.
  for (int j = 0; j < k; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return OrthogonalBasis{std::move(q)};
}

EtfClassifier::EtfClassifier(OrthogonalBasis basis, double beta,
                             std::uint64_t basis_seed)
    : beta_(beta),
      k_(basis.classes()),
      basis_(std::move(basis)),
      basis_seed_(basis_seed) {
  if (beta <= 0) throw std::invalid_argument("EtfClassifier: beta must be > 0");
  if (k_ < 2) throw std::invalid_argument("EtfClassifier: needs K >= 2");
  const double kk = static_cast<double>(k_);
  Matrix centering =
      Matrix::Identity(k_, k_) - Matrix::Constant(k_, k_, 1.0 / kk);
  m_hat_ = basis_.u * centering;
  m_ = beta_ * std::sqrt(kk / (kk - 1.0)) * m_hat_;
}

EtfClassifier EtfClassifier::with_beta(double beta) const {
  return EtfClassifier(basis_, beta, basis_seed_);
}

EtfClassifier build_etf(const OrthogonalBasis& basis, double beta,
                        std::uint64_t basis_seed) {
  return EtfClassifier(basis, beta, basis_seed);
}

Vector etf_logits(const Vector& features, const EtfClassifier& etf) {
  if (features.size() != etf.dim())
    throw std::invalid_argument("etf_logits: feature dimension mismatch");
  return etf.weights().transpose() * features;
}

Matrix etf_logits(const Matrix& features, const EtfClassifier& etf) {
  if (features.cols() != etf.dim())
    throw std::invalid_argument("etf_logits: feature dimension mismatch");
  return features * etf.weights();
}

double confidence_ratio(const Vector& scores, int i, int j, double beta, int k) {
  if (i == j) throw std::invalid_argument("confidence_ratio: i and j must differ");
  if (i < 0 || j < 0 || i >= scores.size() || j >= scores.size())
    throw std::invalid_argument("confidence_ratio: class index out of range");
  const double kk = static_cast<double>(k);
  return std::exp(beta * std::sqrt(kk / (kk - 1.0)) * (scores[i] - scores[j]));
}

GeometryReport verify_etf(const EtfClassifier& etf) {
  GeometryReport rep;
  const Matrix& m = etf.weights();
  const int k = etf.classes();
  for (int i = 0; i < k; ++i) {
    rep.max_norm_deviation =
        std::max(rep.max_norm_deviation, std::abs(m.col(i).norm() - etf.beta()));
    for (int j = i + 1; j < k; ++j) {
      double cosine = m.col(i).dot(m.col(j)) / (m.col(i).norm() * m.col(j).norm());
      rep.max_cosine_deviation = std::max(
          rep.max_cosine_deviation, std::abs(cosine + 1.0 / (k - 1.0)));
    }
  }
  const Matrix& u = etf.basis().u;
  rep.max_orthogonality_residual =
      (u.transpose() * u - Matrix::Identity(k, k)).norm();
  return rep;
}

namespace {
std::vector<double> row_major(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

Matrix from_row_major(const std::vector<double>& v, int rows, int cols) {
  if (static_cast<int>(v.size()) != rows * cols)
    throw std::invalid_argument("etf_from_json: array size mismatch");
  Matrix m(rows, cols);
  std::size_t idx = 0;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[idx++];
  return m;
}
}  // namespace

nlohmann::json to_json(const EtfClassifier& etf) {
  return nlohmann::json{{"d", etf.dim()},
                        {"k", etf.classes()},
                        {"beta", etf.beta()},
                        {"seed", etf.basis_seed()},
                        {"U", row_major(etf.basis().u)},
                        {"M", row_major(etf.weights())}};
}

EtfClassifier etf_from_json(const nlohmann::json& j) {
  int d = j.at("d").get<int>();
  int k = j.at("k").get<int>();
  OrthogonalBasis basis{
      from_row_major(j.at("U").get<std::vector<double>>(), d, k)};
  EtfClassifier etf(std::move(basis), j.at("beta").get<double>(),
                    j.at("seed").get<std::uint64_t>());
  // Stored M must round-trip bit-exactly; the rebuilt one is only a check.
  Matrix stored = from_row_major(j.at("M").get<std::vector<double>>(), d, k);
  if ((stored - etf.weights()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::runtime_error("etf_from_json: stored M inconsistent with U/beta");
  return etf;
}

}  // namespace balcal::etf
