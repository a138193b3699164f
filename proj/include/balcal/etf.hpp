#pragma once

#include <nlohmann/json_fwd.hpp>

#include "balcal/common.hpp"

namespace balcal::etf {

// d x K matrix with orthonormal columns.
struct OrthogonalBasis {
  Matrix u;
  int dim() const { return static_cast<int>(u.rows()); }
  int classes() const { return static_cast<int>(u.cols()); }
};

// Fixed simplex ETF classifier: K maximally separated directions in R^d,
// all of norm beta, pairwise cosine -1/(K-1). Immutable once built.
class EtfClassifier {
 public:
  EtfClassifier(OrthogonalBasis basis, double beta, std::uint64_t basis_seed = 0);

  const Matrix& weights() const { return m_; }
  double beta() const { return beta_; }
  int classes() const { return k_; }
  int dim() const { return static_cast<int>(m_.rows()); }
  const OrthogonalBasis& basis() const { return basis_; }
  std::uint64_t basis_seed() const { return basis_seed_; }

  // Columns of U(I - (1/K) 11^T): the unit-free score directions. The
  // per-class score sigma_i = z . m_hat_i, so logits = beta*sqrt(K/(K-1))*sigma.
  const Matrix& score_directions() const { return m_hat_; }

  // Same classifier at a different scale; the basis is shared.
  EtfClassifier with_beta(double beta) const;

 private:
  Matrix m_;
  Matrix m_hat_;
  double beta_;
  int k_;
  OrthogonalBasis basis_;
  std::uint64_t basis_seed_;
};

OrthogonalBasis make_orthogonal_basis(int d, int k, std::uint64_t seed);
EtfClassifier build_etf(const OrthogonalBasis& basis, double beta,
                        std::uint64_t basis_seed = 0);

// logits = z' M (row vector times matrix).
Vector etf_logits(const Vector& features, const EtfClassifier& etf);
Matrix etf_logits(const Matrix& features, const EtfClassifier& etf);

// Softmax probability ratio p_i/p_j implied by the score gap:
// exp(beta * sqrt(K/(K-1)) * (sigma_i - sigma_j)).
double confidence_ratio(const Vector& scores, int i, int j, double beta, int k);

struct GeometryReport {
  double max_norm_deviation = 0.0;   // | ||m_i|| - beta |
  double max_cosine_deviation = 0.0; // | cos(m_i, m_j) + 1/(K-1) |
  double max_orthogonality_residual = 0.0;  // ||U^T U - I||_F
};

GeometryReport verify_etf(const EtfClassifier& etf);

nlohmann::json to_json(const EtfClassifier& etf);
EtfClassifier etf_from_json(const nlohmann::json& j);

}  // namespace balcal::etf
