#include "balcal/balcal.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace balcal::train {

Method method_from_string(const std::string& name) {
  if (name == "vanilla") return Method::kVanilla;
  if (name == "balcal") return Method::kBalcal;
  if (name == "mixup") return Method::kMixup;
  if (name == "balcal+mixup") return Method::kBalcalMixup;
  if (name == "etf-only-fixed-beta") return Method::kEtfOnlyFixedBeta;
  if (name == "etf-only-dynamic-beta") return Method::kEtfOnlyDynamicBeta;
  if (name == "balcal-no-adapter") return Method::kBalcalNoAdapter;
  throw std::invalid_argument("unknown method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kVanilla: return "vanilla";
    case Method::kBalcal: return "balcal";
    case Method::kMixup: return "mixup";
    case Method::kBalcalMixup: return "balcal+mixup";
    case Method::kEtfOnlyFixedBeta: return "etf-only-fixed-beta";
    case Method::kEtfOnlyDynamicBeta: return "etf-only-dynamic-beta";
    case Method::kBalcalNoAdapter: return "balcal-no-adapter";
  }
  return "?";
}

BetaPolicy beta_policy_from_string(const std::string& name) {
  if (name == "fixed-1") return BetaPolicy::kFixedOne;
  if (name == "fixed-K" || name == "fixed-k") return BetaPolicy::kFixedK;
  if (name == "dynamic") return BetaPolicy::kDynamic;
  throw std::invalid_argument("unknown beta policy: " + name);
}

std::string to_string(BetaPolicy p) {
  switch (p) {
    case BetaPolicy::kFixedOne: return "fixed-1";
    case BetaPolicy::kFixedK: return "fixed-K";
    case BetaPolicy::kDynamic: return "dynamic";
  }
  return "?";
}

double select_beta(BetaPolicy policy, int k_classes, double mixup_alpha) {
  switch (policy) {
    case BetaPolicy::kFixedOne:
      return mixup_alpha > 0.1 ? static_cast<double>(k_classes) : 1.0;
    case BetaPolicy::kFixedK:
      return static_cast<double>(k_classes);
    case BetaPolicy::kDynamic:
      return 1.0;  // starting point; updated per epoch by search_beta
  }
  return 1.0;
}

void ProbPairLog::add(const Vector& p_sta, const Vector& p_etf, int label) {
  records.push_back(Record{p_sta, p_etf, label});
}

FusedPrediction fused_probs(const Vector& p_sta, const Vector& p_etf, double gamma) {
  if (gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("fused_probs: gamma must be in [0,1]");
  FusedPrediction out;
  if (gamma == 1.0) out.p_fused = p_sta;
  else if (gamma == 0.0) out.p_fused = p_etf;
  else out.p_fused = gamma * p_sta + (1.0 - gamma) * p_etf;
  int arg = 0;
  out.confidence = out.p_fused.maxCoeff(&arg);
  out.predicted_class = arg;
  return out;
}

std::pair<double, double> epoch_conf_acc(const ProbPairLog& log, double gamma) {
  if (log.records.empty())
    throw std::invalid_argument("epoch_conf_acc: empty log");
  double conf = 0.0, acc = 0.0;
  for (const auto& r : log.records) {
    FusedPrediction f = fused_probs(r.p_sta, r.p_etf, gamma);
    conf += f.confidence;
    acc += f.predicted_class == r.label ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(log.records.size());
  return {conf / n, acc / n};
}

namespace {

// |conf(x) - delta*acc(x)| minimization shared by the gamma and beta search.
// g can jump where the fused argmax flips, so pure bisection is not enough;
// a dense grid scan finds the right basin, the sign-change bisection result
// is cross-checked against it, and the better point wins.
template <typename GapFn>
double minimize_abs_gap(GapFn g, double lo, double hi, bool flat_to_half) {
  const int kGrid = 1001;
  std::vector<double> xs(kGrid), gs(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    xs[i] = lo + (hi - lo) * i / (kGrid - 1);
    gs[i] = g(xs[i]);
  }
  double gmin = *std::min_element(gs.begin(), gs.end(),
                                  [](double a, double b) { return std::abs(a) < std::abs(b); });
  double gmax_abs = 0.0, gmin_abs = std::abs(gmin);
  for (double v : gs) gmax_abs = std::max(gmax_abs, std::abs(v));
  for (double v : gs) gmin_abs = std::min(gmin_abs, std::abs(v));
  if (flat_to_half && gmax_abs - gmin_abs < 1e-9) return 0.5;

  double best_x = xs[0], best_abs = std::abs(gs[0]);
  for (int i = 1; i < kGrid; ++i)
    if (std::abs(gs[i]) < best_abs) { best_abs = std::abs(gs[i]); best_x = xs[i]; }

  if (g(lo) * g(hi) < 0) {
    double a = lo, b = hi, ga = g(lo);
    for (int it = 0; it < 40; ++it) {
      double mid = 0.5 * (a + b);
      double gm = g(mid);
      if (ga * gm <= 0) b = mid;
      else { a = mid; ga = gm; }
    }
    double x = 0.5 * (a + b);
    if (std::abs(g(x)) < best_abs) { best_abs = std::abs(g(x)); best_x = x; }
  }

  // Refine the best grid cell by bisection on |g|.
  int best_i = static_cast<int>(
      std::llround((best_x - lo) / (hi - lo) * (kGrid - 1)));
  double a = xs[std::max(0, best_i - 1)];
  double b = xs[std::min(kGrid - 1, best_i + 1)];
  for (int it = 0; it < 20; ++it) {
    double m1 = a + (b - a) / 3.0;
    double m2 = b - (b - a) / 3.0;
    if (std::abs(g(m1)) < std::abs(g(m2))) b = m2;
    else a = m1;
  }
  double refined = 0.5 * (a + b);
  if (std::abs(g(refined)) < best_abs) best_x = refined;
  return best_x;
}

}  // namespace

double search_gamma(const ProbPairLog& log, double delta) {
  if (log.records.empty()) throw std::invalid_argument("search_gamma: empty log");
  if (delta <= 0) throw std::invalid_argument("search_gamma: delta must be > 0");
  auto gap = [&](double gamma) {
    auto [conf, acc] = epoch_conf_acc(log, gamma);
    return conf - delta * acc;
  };
  return minimize_abs_gap(gap, 0.0, 1.0, /*flat_to_half=*/true);
}

double search_beta(const ProbPairLog& log, double delta, int k, double beta_log) {
  if (log.records.empty()) throw std::invalid_argument("search_beta: empty log");
  // Logged ETF probabilities determine the logits up to an irrelevant shift.
  std::vector<Vector> logits;
  logits.reserve(log.records.size());
  for (const auto& r : log.records) {
    Vector l(r.p_etf.size());
    for (int i = 0; i < l.size(); ++i)
      l[i] = std::log(std::max(r.p_etf[i], 1e-300));
    logits.push_back(std::move(l));
  }
  auto gap = [&](double beta) {
    double conf = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      Vector p = nn::softmax((beta / beta_log) * logits[i]);
      int arg = 0;
      conf += p.maxCoeff(&arg);
      acc += arg == log.records[i].label ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(logits.size());
    return conf / n - delta * acc / n;
  };
  return minimize_abs_gap(gap, 1e-3, 4.0 * k, /*flat_to_half=*/false);
}

std::vector<nn::ParamRef> Model::matrix_params() {
  std::vector<nn::ParamRef> out;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& layer = net.layers()[l];
    out.push_back({"net.layer" + std::to_string(l) + ".w", &layer.w, &layer.grad_w});
  }
  if (use_head) out.push_back({"head.w", &head.w, &head.grad_w});
  if (use_adapter) {
    out.push_back({"adapter.v1", &adapter.v1, &adapter.grad_v1});
    out.push_back({"adapter.v2", &adapter.v2, &adapter.grad_v2});
  }
  return out;
}

std::vector<nn::VecParamRef> Model::vector_params() {
  std::vector<nn::VecParamRef> out;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& layer = net.layers()[l];
    out.push_back({"net.layer" + std::to_string(l) + ".b", &layer.b, &layer.grad_b});
  }
  return out;
}

Model make_model(const TrainConfig& cfg) {
  Model m;
  m.k = cfg.k;
  Rng init_rng(derive_seed(cfg.seed, seed_stream::kInit));
  m.net = nn::DenseNet({cfg.input_dim, cfg.hidden_width, cfg.hidden_width,
                        cfg.feature_dim}, init_rng);
  m.use_head = cfg.uses_learnable_head();
  if (m.use_head) m.head = nn::LinearHead(cfg.feature_dim, cfg.k, init_rng);
  m.use_adapter = cfg.uses_etf_branch() &&
                  cfg.method != Method::kBalcalNoAdapter &&
                  cfg.method != Method::kEtfOnlyFixedBeta &&
                  cfg.method != Method::kEtfOnlyDynamicBeta;
  if (m.use_adapter) m.adapter = nn::Adapter(cfg.feature_dim, init_rng);
  if (cfg.uses_etf_branch()) {
    std::uint64_t basis_seed = derive_seed(cfg.seed, seed_stream::kBasis);
    double beta = select_beta(cfg.beta_policy, cfg.k,
                              cfg.uses_mixup() ? cfg.mixup_alpha : 0.0);
    m.etf = etf::build_etf(etf::make_orthogonal_basis(cfg.feature_dim, cfg.k,
                                                      basis_seed),
                           beta, basis_seed);
  }
  return m;
}

BatchEval forward_loss(Model& model, const Matrix& x, const Matrix& soft_labels,
                       double gamma, bool train) {
  BatchEval out;
  Matrix z = train ? model.net.forward_train(x) : model.net.forward(x);
  if (model.use_head) {
    out.p_sta = nn::softmax_rows(model.head.logits(z));
    out.loss_sta = nn::cross_entropy(out.p_sta, soft_labels);
  }
  if (model.use_etf()) {
    Matrix zp = model.use_adapter
                    ? (train ? model.adapter.forward_train(z) : model.adapter.forward(z))
                    : z;
    out.p_etf = nn::softmax_rows(etf::etf_logits(zp, *model.etf));
    out.loss_etf = nn::cross_entropy(out.p_etf, soft_labels);
  }
  if (!model.use_head) { out.p_sta = out.p_etf; gamma = 0.0; }
  if (!model.use_etf()) { out.p_etf = out.p_sta; gamma = 1.0; }
  out.loss_total = gamma * out.loss_sta + (1.0 - gamma) * out.loss_etf;
  return out;
}

BatchEval forward_backward(Model& model, const Matrix& x,
                           const Matrix& soft_labels, double gamma) {
  BatchEval out;
  const double n = static_cast<double>(x.rows());
  Matrix z = model.net.forward_train(x);
  Matrix grad_z = Matrix::Zero(z.rows(), z.cols());
  double loss_weight_sta = model.use_head ? gamma : 0.0;
  double loss_weight_etf = model.use_etf() ? 1.0 - gamma : 0.0;
  if (!model.use_head) loss_weight_etf = 1.0;
  if (!model.use_etf()) loss_weight_sta = 1.0;

  if (model.use_head) {
    out.p_sta = nn::softmax_rows(model.head.logits(z));
    out.loss_sta = nn::cross_entropy(out.p_sta, soft_labels);
    Matrix dlog = (loss_weight_sta / n) * (out.p_sta - soft_labels);
    model.head.grad_w += z.transpose() * dlog;
    grad_z += dlog * model.head.w.transpose();
  }
  if (model.use_etf()) {
    Matrix zp = model.use_adapter ? model.adapter.forward_train(z) : z;
    out.p_etf = nn::softmax_rows(etf::etf_logits(zp, *model.etf));
    out.loss_etf = nn::cross_entropy(out.p_etf, soft_labels);
    Matrix dlog = (loss_weight_etf / n) * (out.p_etf - soft_labels);
    Matrix dzp = dlog * model.etf->weights().transpose();
    grad_z += model.use_adapter ? model.adapter.backward(dzp) : dzp;
  }
  if (!model.use_head) out.p_sta = out.p_etf;
  if (!model.use_etf()) out.p_etf = out.p_sta;
  out.loss_total = loss_weight_sta * out.loss_sta + loss_weight_etf * out.loss_etf;
  model.net.backward(grad_z);
  return out;
}

std::pair<BatchEval, ProbPairLog> train_epoch(Model& model, nn::Optimizer& opt,
                                              const data::Dataset& train_set,
                                              const TrainConfig& cfg,
                                              double gamma, int epoch) {
  if (gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("train_epoch: gamma must be in [0,1]");
  const int n = static_cast<int>(train_set.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, seed_stream::kShuffle) +
                  static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
  Rng mixup_rng(derive_seed(cfg.seed, seed_stream::kMixup) +
                static_cast<std::uint64_t>(epoch));

  auto mats = model.matrix_params();
  auto vecs = model.vector_params();
  ProbPairLog log;
  BatchEval totals;
  int batches = 0;
  for (int start = 0; start < n; start += cfg.batch_size) {
    int count = std::min(cfg.batch_size, n - start);
    Matrix xb(count, train_set.input_dim());
    std::vector<int> yb(count);
    for (int i = 0; i < count; ++i) {
      xb.row(i) = train_set.x.row(order[start + i]);
      yb[i] = train_set.labels[order[start + i]];
    }
    Matrix soft;
    std::vector<int> log_labels = yb;
    if (cfg.uses_mixup()) {
      data::MixupBatch mixed =
          data::mixup_batch(xb, yb, cfg.k, cfg.mixup_alpha, mixup_rng);
      xb = std::move(mixed.x);
      soft = std::move(mixed.soft_labels);
      for (int i = 0; i < count; ++i) {
        int arg = 0;
        soft.row(i).maxCoeff(&arg);
        log_labels[i] = arg;
      }
    } else {
      soft = nn::one_hot(yb, cfg.k);
    }

    opt.zero_grads(mats, vecs);
    BatchEval eval = forward_backward(model, xb, soft, gamma);
    if (!std::isfinite(eval.loss_total))
      throw std::runtime_error("train_epoch: non-finite loss at epoch " +
                               std::to_string(epoch));
    // Pre-update probabilities go to the log, one record per sample.
    for (int i = 0; i < count; ++i)
      log.add(eval.p_sta.row(i).transpose(), eval.p_etf.row(i).transpose(),
              log_labels[i]);
    opt.step(mats, vecs);
    totals.loss_sta += eval.loss_sta;
    totals.loss_etf += eval.loss_etf;
    totals.loss_total += eval.loss_total;
    ++batches;
  }
  totals.loss_sta /= batches;
  totals.loss_etf /= batches;
  totals.loss_total /= batches;
  return {totals, log};
}

namespace {
double validation_metric(const Model& model, const data::Dataset& val_set,
                         double gamma, bool fused) {
  Model& m = const_cast<Model&>(model);
  Matrix soft = nn::one_hot(val_set.labels, val_set.k);
  BatchEval eval = forward_loss(m, val_set.x, soft, gamma, /*train=*/false);
  if (!fused || !model.use_etf()) return model.use_head ? eval.loss_sta : eval.loss_etf;
  Matrix fused_p = gamma * eval.p_sta + (1.0 - gamma) * eval.p_etf;
  return nn::cross_entropy(fused_p, soft);
}
}  // namespace

RunResult run_training(const TrainConfig& cfg, const data::Dataset& train_set,
                       const data::Dataset& val_set) {
  if (cfg.epochs < 1) throw std::invalid_argument("run_training: epochs must be >= 1");
  if (cfg.delta <= 0.0 || cfg.delta >= 2.0)
    throw std::invalid_argument("run_training: delta must be in (0, 2)");

  Model model = make_model(cfg);
  nn::OptimizerConfig ocfg;
  ocfg.mode = cfg.sgd ? nn::OptimizerMode::kSgd : nn::OptimizerMode::kAdam;
  ocfg.lr = cfg.lr;
  nn::Optimizer opt(ocfg);

  RunResult result;
  double gamma = cfg.dynamic_gamma() ? 0.5
               : (cfg.uses_learnable_head() && !cfg.uses_etf_branch() ? 1.0
               : (!cfg.uses_learnable_head() ? 0.0 : 0.5));
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto [totals, log] = train_epoch(model, opt, train_set, cfg, gamma, epoch);
    auto [train_conf, train_acc] = epoch_conf_acc(log, gamma);
    double val = validation_metric(model, val_set, gamma, cfg.val_use_fused);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.gamma = gamma;
    rec.beta = model.use_etf() ? model.etf->beta() : 0.0;
    rec.loss_sta = totals.loss_sta;
    rec.loss_etf = totals.loss_etf;
    rec.loss_total = totals.loss_total;
    rec.train_conf = train_conf;
    rec.train_acc = train_acc;
    rec.val_metric = val;
    result.history.push_back(rec);

    if (val < best_val) {
      best_val = val;
      result.best_model = model;
      result.best_gamma = gamma;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }

    if (cfg.dynamic_gamma() && epoch >= 1 + cfg.warmup_epochs)
      gamma = search_gamma(log, cfg.delta);
    if (cfg.method == Method::kEtfOnlyDynamicBeta) {
      double beta_next = search_beta(log, cfg.delta, cfg.k, model.etf->beta());
      model.etf = model.etf->with_beta(beta_next);
    }
  }
  if (result.history.empty() || result.best_epoch == 0) {
    result.best_model = model;
    result.best_gamma = gamma;
  }
  return result;
}

metrics::PredictionSet predict(const Model& model, const data::Dataset& d,
                               double gamma) {
  Model& m = const_cast<Model&>(model);
  Matrix soft = nn::one_hot(d.labels, d.k);
  BatchEval eval = forward_loss(m, d.x, soft, gamma, /*train=*/false);
  metrics::PredictionSet preds;
  preds.k = d.k;
  double g = model.use_etf() ? (model.use_head ? gamma : 0.0) : 1.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Vector p_sta = eval.p_sta.row(static_cast<int>(i)).transpose();
    Vector p_etf = eval.p_etf.row(static_cast<int>(i)).transpose();
    preds.add(d.labels[i], fused_probs(p_sta, p_etf, g).p_fused);
  }
  return preds;
}

std::pair<Matrix, Matrix> branch_logits(const Model& model, const Matrix& x) {
  Matrix z = model.net.forward(x);
  Matrix sta = model.use_head ? model.head.logits(z)
                              : Matrix::Zero(z.rows(), model.k);
  Matrix etf_l = Matrix::Zero(z.rows(), model.k);
  if (model.use_etf()) {
    Matrix zp = model.use_adapter ? model.adapter.forward(z) : z;
    etf_l = etf::etf_logits(zp, *model.etf);
  }
  return {std::move(sta), std::move(etf_l)};
}

namespace {
nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  int rows = j.at("rows").get<int>();
  int cols = j.at("cols").get<int>();
  auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<int>(data.size()) != rows * cols)
    throw std::runtime_error("matrix_from_json: size mismatch");
  Matrix m(rows, cols);
  std::size_t idx = 0;
  for (int i = 0; i < rows; ++i)
    for (int j2 = 0; j2 < cols; ++j2) m(i, j2) = data[idx++];
  return m;
}
}  // namespace

nlohmann::json model_to_json(const Model& model) {
  nlohmann::json j;
  j["k"] = model.k;
  j["use_head"] = model.use_head;
  j["use_adapter"] = model.use_adapter;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : model.net.layers()) {
    std::vector<double> b(layer.b.data(), layer.b.data() + layer.b.size());
    layers.push_back({{"w", matrix_to_json(layer.w)},
                      {"b", b},
                      {"tanh", layer.tanh_activation}});
  }
  j["net"] = std::move(layers);
  if (model.use_head) j["head"] = matrix_to_json(model.head.w);
  if (model.use_adapter) {
    j["adapter_v1"] = matrix_to_json(model.adapter.v1);
    j["adapter_v2"] = matrix_to_json(model.adapter.v2);
  }
  j["etf"] = model.use_etf() ? etf::to_json(*model.etf) : nlohmann::json();
  return j;
}

Model model_from_json(const nlohmann::json& j) {
  Model m;
  m.k = j.at("k").get<int>();
  m.use_head = j.at("use_head").get<bool>();
  m.use_adapter = j.at("use_adapter").get<bool>();
  for (const auto& lj : j.at("net")) {
    nn::DenseLayer layer;
    layer.w = matrix_from_json(lj.at("w"));
    auto b = lj.at("b").get<std::vector<double>>();
    layer.b = Eigen::Map<const Vector>(b.data(), static_cast<int>(b.size()));
    layer.tanh_activation = lj.at("tanh").get<bool>();
    layer.grad_w = Matrix::Zero(layer.w.rows(), layer.w.cols());
    layer.grad_b = Vector::Zero(layer.b.size());
    m.net.layers().push_back(std::move(layer));
  }
  if (m.use_head) {
    m.head.w = matrix_from_json(j.at("head"));
    m.head.grad_w = Matrix::Zero(m.head.w.rows(), m.head.w.cols());
  }
  if (m.use_adapter) {
    m.adapter.v1 = matrix_from_json(j.at("adapter_v1"));
    m.adapter.v2 = matrix_from_json(j.at("adapter_v2"));
    m.adapter.grad_v1 = Matrix::Zero(m.adapter.v1.rows(), m.adapter.v1.cols());
    m.adapter.grad_v2 = Matrix::Zero(m.adapter.v2.rows(), m.adapter.v2.cols());
  }
  if (!j.at("etf").is_null()) m.etf = etf::etf_from_json(j.at("etf"));
  return m;
}

nlohmann::json epoch_record_to_json(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch},
                        {"gamma", r.gamma},
                        {"beta", r.beta},
                        {"loss_sta", r.loss_sta},
                        {"loss_etf", r.loss_etf},
                        {"loss_total", r.loss_total},
                        {"train_conf", r.train_conf},
                        {"train_acc", r.train_acc},
                        {"val_metric", r.val_metric}};
}

}  // namespace balcal::train
