#include "balcal/nncore.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace balcal::nn {

namespace {
constexpr double kLogFloor = 1e-12;

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite values");
}
}  // namespace

Vector softmax(const Vector& logits) {
  if (!logits.allFinite())
    throw std::invalid_argument("softmax: non-finite logits");
  Vector shifted = logits.array() - logits.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  check_finite(logits, "softmax");
  Matrix out(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i)
    out.row(i) = softmax(Vector(logits.row(i).transpose())).transpose();
  return out;
}

double cross_entropy(const Matrix& probs, const Matrix& soft_labels) {
  if (probs.rows() != soft_labels.rows() || probs.cols() != soft_labels.cols())
    throw std::invalid_argument("cross_entropy: shape mismatch");
  if (probs.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
  double total = 0.0;
  for (int i = 0; i < probs.rows(); ++i)
    for (int k = 0; k < probs.cols(); ++k)
      if (soft_labels(i, k) != 0.0)
        total -= soft_labels(i, k) * std::log(std::max(probs(i, k), kLogFloor));
  return total / probs.rows();
}

Matrix one_hot(const std::vector<int>& labels, int k) {
  Matrix y = Matrix::Zero(static_cast<int>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      throw std::invalid_argument("one_hot: label out of range");
    y(static_cast<int>(i), labels[i]) = 1.0;
  }
  return y;
}

double entropy(const Vector& probs) {
  double h = 0.0;
  for (int i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

DenseNet::DenseNet(const std::vector<int>& widths, Rng& init_rng) {
  if (widths.size() < 2) throw std::invalid_argument("DenseNet: needs >= 2 widths");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    int fan_in = widths[l], fan_out = widths[l + 1];
    double scale = std::sqrt(2.0 / (fan_in + fan_out));
    layer.w = Matrix(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) layer.w(i, j) = scale * init_rng.normal();
    layer.b = Vector::Zero(fan_out);
    layer.tanh_activation = (l + 2 < widths.size());  // linear output layer
    layer.grad_w = Matrix::Zero(fan_in, fan_out);
    layer.grad_b = Vector::Zero(fan_out);
    layers_.push_back(std::move(layer));
  }
}

Matrix DenseNet::forward(const Matrix& x) const {
  if (x.cols() != input_dim())
    throw std::invalid_argument("DenseNet::forward: input width mismatch");
  Matrix h = x;
  for (const auto& layer : layers_) {
    h = (h * layer.w).rowwise() + layer.b.transpose();
    if (layer.tanh_activation) h = h.array().tanh();
  }
  return h;
}

Matrix DenseNet::forward_train(const Matrix& x) {
  if (x.cols() != input_dim())
    throw std::invalid_argument("DenseNet::forward_train: input width mismatch");
  inputs_.clear();
  activations_.clear();
  Matrix h = x;
  for (auto& layer : layers_) {
    inputs_.push_back(h);
    h = (h * layer.w).rowwise() + layer.b.transpose();
    if (layer.tanh_activation) h = h.array().tanh();
    activations_.push_back(h);
  }
  return h;
}

Matrix DenseNet::backward(const Matrix& grad_out) {
  if (inputs_.size() != layers_.size())
    throw std::logic_error("DenseNet::backward called before forward_train");
  Matrix g = grad_out;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    auto& layer = layers_[l];
    if (layer.tanh_activation)
      g = g.array() * (1.0 - activations_[l].array().square());
    layer.grad_w += inputs_[l].transpose() * g;
    layer.grad_b += g.colwise().sum().transpose();
    g = g * layer.w.transpose();
  }
  return g;
}

LinearHead::LinearHead(int d, int k, Rng& init_rng) {
  double scale = std::sqrt(2.0 / (d + k));
  w = Matrix(d, k);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) w(i, j) = scale * init_rng.normal();
  grad_w = Matrix::Zero(d, k);
}

Adapter::Adapter(int d, Rng& init_rng) {
  double scale = std::sqrt(1.0 / d);
  v1 = Matrix(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) v1(i, j) = scale * init_rng.normal();
  v2 = Matrix::Zero(d, d);  // residual branch silent at initialization
  grad_v1 = Matrix::Zero(d, d);
  grad_v2 = Matrix::Zero(d, d);
}

Matrix Adapter::forward(const Matrix& z) const {
  if (z.cols() != v1.rows())
    throw std::invalid_argument("Adapter::forward: width mismatch");
  return z + (z * v1).array().tanh().matrix() * v2;
}

Matrix Adapter::forward_train(const Matrix& z) {
  if (z.cols() != v1.rows())
    throw std::invalid_argument("Adapter::forward_train: width mismatch");
  input_ = z;
  hidden_ = (z * v1).array().tanh();
  return z + hidden_ * v2;
}

Matrix Adapter::backward(const Matrix& grad_out) {
  if (input_.rows() != grad_out.rows())
    throw std::logic_error("Adapter::backward called before forward_train");
  grad_v2 += hidden_.transpose() * grad_out;
  Matrix grad_hidden = grad_out * v2.transpose();
  Matrix grad_pre = grad_hidden.array() * (1.0 - hidden_.array().square());
  grad_v1 += input_.transpose() * grad_pre;
  return grad_out + grad_pre * v1.transpose();
}

void Optimizer::update(const std::string& name, Eigen::Ref<Matrix> value,
                       const Eigen::Ref<const Matrix>& grad) {
  if (!grad.allFinite())
    throw std::runtime_error("Optimizer: non-finite gradient for " + name);
  if (cfg_.mode == OptimizerMode::kSgd) {
    value -= cfg_.lr * grad;
    return;
  }
  auto& mom = moments_[name];
  if (mom.m.size() == 0) {
    mom.m = Matrix::Zero(grad.rows(), grad.cols());
    mom.v = Matrix::Zero(grad.rows(), grad.cols());
  }
  mom.m = cfg_.beta1 * mom.m + (1.0 - cfg_.beta1) * grad;
  mom.v = cfg_.beta2 * mom.v.array().matrix() +
          (1.0 - cfg_.beta2) * grad.array().square().matrix();
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  Matrix m_hat = mom.m / bc1;
  Matrix v_hat = mom.v / bc2;
  value -= (cfg_.lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
}

void Optimizer::step(std::vector<ParamRef>& mats, std::vector<VecParamRef>& vecs) {
  ++t_;
  for (auto& p : mats) update(p.name, *p.value, *p.grad);
  for (auto& p : vecs) {
    Eigen::Map<Matrix> value(p.value->data(), p.value->size(), 1);
    Eigen::Map<const Matrix> grad(p.grad->data(), p.grad->size(), 1);
    update(p.name, value, grad);
  }
}

void Optimizer::zero_grads(std::vector<ParamRef>& mats,
                           std::vector<VecParamRef>& vecs) {
  for (auto& p : mats) p.grad->setZero();
  for (auto& p : vecs) p.grad->setZero();
}

nlohmann::json Optimizer::state_to_json() const {
  nlohmann::json j;
  j["t"] = t_;
  j["mode"] = cfg_.mode == OptimizerMode::kAdam ? "adam" : "sgd";
  j["lr"] = cfg_.lr;
  nlohmann::json moms = nlohmann::json::object();
  for (const auto& [name, mom] : moments_) {
    std::vector<double> mv(mom.m.data(), mom.m.data() + mom.m.size());
    std::vector<double> vv(mom.v.data(), mom.v.data() + mom.v.size());
    moms[name] = {{"rows", mom.m.rows()}, {"cols", mom.m.cols()},
                  {"m", mv}, {"v", vv}};
  }
  j["moments"] = std::move(moms);
  return j;
}

void Optimizer::state_from_json(const nlohmann::json& j) {
  t_ = j.at("t").get<std::int64_t>();
  moments_.clear();
  for (const auto& [name, entry] : j.at("moments").items()) {
    int rows = entry.at("rows").get<int>();
    int cols = entry.at("cols").get<int>();
    auto mv = entry.at("m").get<std::vector<double>>();
    auto vv = entry.at("v").get<std::vector<double>>();
    Moments mom;
    mom.m = Eigen::Map<const Matrix>(mv.data(), rows, cols);
    mom.v = Eigen::Map<const Matrix>(vv.data(), rows, cols);
    moments_[name] = std::move(mom);
  }
}

}  // namespace balcal::nn
