#pragma once

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

#include "balcal/common.hpp"
#include "balcal/data.hpp"
#include "balcal/etf.hpp"
#include "balcal/metrics.hpp"
#include "balcal/nncore.hpp"

namespace balcal::train {

enum class Method {
  kVanilla,
  kBalcal,
  kMixup,
  kBalcalMixup,
  kEtfOnlyFixedBeta,
  kEtfOnlyDynamicBeta,
  kBalcalNoAdapter,
};

Method method_from_string(const std::string& name);
std::string to_string(Method m);

enum class BetaPolicy { kFixedOne, kFixedK, kDynamic };

BetaPolicy beta_policy_from_string(const std::string& name);
std::string to_string(BetaPolicy p);

// Resolves the fixed policies; kDynamic is handled per epoch by search_beta.
// Under the default preset rule, mixup with alpha > 0.1 uses beta = K.
double select_beta(BetaPolicy policy, int k_classes, double mixup_alpha);

// Per-sample probability pairs saved during one epoch (Algorithm-style
// save-then-search: the gamma objective is evaluated on this log, the
// network is not re-run).
struct ProbPairLog {
  struct Record {
    Vector p_sta;
    Vector p_etf;
    int label;
  };
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  void add(const Vector& p_sta, const Vector& p_etf, int label);
};

struct FusedPrediction {
  Vector p_fused;
  int predicted_class = 0;
  double confidence = 0.0;
};

FusedPrediction fused_probs(const Vector& p_sta, const Vector& p_etf, double gamma);

// (mean max fused probability, fused argmax accuracy) over the log.
std::pair<double, double> epoch_conf_acc(const ProbPairLog& log, double gamma);

// gamma_{t+1} = argmin_{gamma in [0,1]} |conf(gamma) - delta*acc(gamma)|.
// Bisection when the gap changes sign, grid+refine otherwise; a flat
// objective ties to 0.5.
double search_gamma(const ProbPairLog& log, double delta);

// Ablation variant: the same objective over the ETF scale instead, searched
// on [1e-3, 4K]. conf(beta) rescales the logged ETF logits by beta/beta_log.
double search_beta(const ProbPairLog& log, double delta, int k, double beta_log);

struct Model {
  nn::DenseNet net;
  nn::LinearHead head;
  nn::Adapter adapter;
  std::optional<etf::EtfClassifier> etf;
  bool use_head = true;
  bool use_adapter = true;
  int k = 0;

  bool use_etf() const { return etf.has_value(); }
  std::vector<nn::ParamRef> matrix_params();
  std::vector<nn::VecParamRef> vector_params();
};

struct BatchEval {
  Matrix p_sta;
  Matrix p_etf;
  double loss_sta = 0.0;
  double loss_etf = 0.0;
  double loss_total = 0.0;
};

// Forward pass of both branches plus the gamma-weighted loss.
BatchEval forward_loss(Model& model, const Matrix& x, const Matrix& soft_labels,
                       double gamma, bool train);
// Forward pass that also accumulates gradients of gamma*L_sta + (1-gamma)*L_etf.
BatchEval forward_backward(Model& model, const Matrix& x,
                           const Matrix& soft_labels, double gamma);

struct TrainConfig {
  Method method = Method::kBalcal;
  int input_dim = 32;
  int k = 10;
  int feature_dim = 64;
  int hidden_width = 64;
  int epochs = 100;
  int batch_size = 128;
  double lr = 1e-4;
  bool sgd = false;
  double delta = 0.95;
  BetaPolicy beta_policy = BetaPolicy::kFixedOne;
  double mixup_alpha = 0.2;
  int warmup_epochs = 0;   // delay of the first gamma search
  int patience = 15;
  bool val_use_fused = true;
  std::uint64_t seed = 1;

  bool uses_mixup() const {
    return method == Method::kMixup || method == Method::kBalcalMixup;
  }
  bool uses_etf_branch() const {
    return method != Method::kVanilla && method != Method::kMixup;
  }
  bool uses_learnable_head() const {
    return method != Method::kEtfOnlyFixedBeta &&
           method != Method::kEtfOnlyDynamicBeta;
  }
  bool dynamic_gamma() const {
    return method == Method::kBalcal || method == Method::kBalcalMixup ||
           method == Method::kBalcalNoAdapter;
  }
};

struct EpochRecord {
  int epoch = 0;
  double gamma = 0.0;
  double beta = 0.0;
  double loss_sta = 0.0;
  double loss_etf = 0.0;
  double loss_total = 0.0;
  double train_conf = 0.0;
  double train_acc = 0.0;
  double val_metric = 0.0;
};

struct RunResult {
  Model best_model;
  double best_gamma = 1.0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

Model make_model(const TrainConfig& cfg);

// One epoch over seeded mini-batches; returns the losses and the saved
// probability log. Parameters are updated in place.
std::pair<BatchEval, ProbPairLog> train_epoch(Model& model, nn::Optimizer& opt,
                                              const data::Dataset& train_set,
                                              const TrainConfig& cfg,
                                              double gamma, int epoch);

RunResult run_training(const TrainConfig& cfg, const data::Dataset& train_set,
                       const data::Dataset& val_set);

// Fused inference over a dataset.
metrics::PredictionSet predict(const Model& model, const data::Dataset& d,
                               double gamma);
// Branch logits for post-hoc scaling: (standard, etf).
std::pair<Matrix, Matrix> branch_logits(const Model& model, const Matrix& x);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

nlohmann::json epoch_record_to_json(const EpochRecord& r);

}  // namespace balcal::train
