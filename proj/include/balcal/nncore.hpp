#pragma once

#include <nlohmann/json_fwd.hpp>

#include <map>
#include <string>
#include <vector>

#include "balcal/common.hpp"
#include "balcal/etf.hpp"

namespace balcal::nn {

// Numerically stable row-wise softmax.
Vector softmax(const Vector& logits);
Matrix softmax_rows(const Matrix& logits);

// Mean cross-entropy against soft (or one-hot) label rows. Probabilities are
// clamped at 1e-12 before the log.
double cross_entropy(const Matrix& probs, const Matrix& soft_labels);

Matrix one_hot(const std::vector<int>& labels, int k);

double entropy(const Vector& probs);

struct DenseLayer {
  Matrix w;   // in x out
  Vector b;
  bool tanh_activation = true;

  Matrix grad_w;
  Vector grad_b;
};

// Feature extractor f(.; theta): a small MLP, hidden layers tanh, linear output.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(const std::vector<int>& widths, Rng& init_rng);

  // Rows are samples.
  Matrix forward(const Matrix& x) const;
  // Forward with caches retained for backward.
  Matrix forward_train(const Matrix& x);
  // Accumulates parameter gradients, returns gradient w.r.t. the input.
  Matrix backward(const Matrix& grad_out);

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().w.rows()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().w.cols()); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
  std::vector<Matrix> inputs_;       // per-layer input cache
  std::vector<Matrix> activations_;  // per-layer post-activation cache
};

// Bias-free linear classifier W (d x K).
struct LinearHead {
  Matrix w;
  Matrix grad_w;

  LinearHead() = default;
  LinearHead(int d, int k, Rng& init_rng);
  Matrix logits(const Matrix& features) const { return features * w; }
};

// Residual adapter A(z) = z + tanh(z V1) V2, with V2 zero-initialized so the
// map is the identity when training starts.
class Adapter {
 public:
  Adapter() = default;
  Adapter(int d, Rng& init_rng);

  Matrix forward(const Matrix& z) const;
  Matrix forward_train(const Matrix& z);
  Matrix backward(const Matrix& grad_out);

  Matrix v1, v2;
  Matrix grad_v1, grad_v2;

 private:
  Matrix input_, hidden_;
};

struct ParamRef {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

// Vector parameters are exposed through a 1-column map.
struct VecParamRef {
  std::string name;
  Vector* value;
  Vector* grad;
};

enum class OptimizerMode { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::kAdam;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam (or plain SGD) over a fixed set of tensors, addressed by name.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(std::vector<ParamRef>& mats, std::vector<VecParamRef>& vecs);
  void zero_grads(std::vector<ParamRef>& mats, std::vector<VecParamRef>& vecs);

  const OptimizerConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  nlohmann::json state_to_json() const;
  void state_from_json(const nlohmann::json& j);

 private:
  struct Moments {
    Matrix m, v;
  };
  OptimizerConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;

  void update(const std::string& name, Eigen::Ref<Matrix> value,
              const Eigen::Ref<const Matrix>& grad);
};

}  // namespace balcal::nn
