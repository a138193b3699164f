#include "balcal/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "balcal/posthoc.hpp"

namespace balcal::experiment {

nlohmann::json ExperimentConfig::to_json() const {
  return nlohmann::json{{"method", method},
                        {"dataset", dataset},
                        {"seeds", seeds},
                        {"epochs", epochs},
                        {"batch_size", batch_size},
                        {"lr", lr},
                        {"sgd", sgd},
                        {"delta", delta},
                        {"beta_policy", beta_policy},
                        {"mixup_alpha", mixup_alpha},
                        {"bins", bins},
                        {"label_noise", label_noise},
                        {"warmup_epochs", warmup_epochs},
                        {"patience", patience},
                        {"posthoc", posthoc},
                        {"out_dir", out_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.method = j.value("method", c.method);
  c.dataset = j.value("dataset", c.dataset);
  c.seeds = j.value("seeds", c.seeds);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.sgd = j.value("sgd", c.sgd);
  c.delta = j.value("delta", c.delta);
  c.beta_policy = j.value("beta_policy", c.beta_policy);
  c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
  c.bins = j.value("bins", c.bins);
  c.label_noise = j.value("label_noise", c.label_noise);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.patience = j.value("patience", c.patience);
  c.posthoc = j.value("posthoc", c.posthoc);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

void ExperimentConfig::validate() const {
  train::method_from_string(method);       // throws on unknown names
  train::beta_policy_from_string(beta_policy);
  if (delta <= 0.0 || delta >= 2.0)
    throw std::invalid_argument("delta must be in (0, 2); paper range is [0.91, 0.99]");
  if (delta < 0.91 || delta > 0.99)
    std::cerr << "warning: delta " << delta
              << " is outside the recommended range [0.91, 0.99]\n";
  auto m = train::method_from_string(method);
  if ((m == train::Method::kMixup || m == train::Method::kBalcalMixup) &&
      mixup_alpha <= 0.0)
    throw std::invalid_argument("mixup methods require alpha > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("at least one seed required");
}

DatasetBundle resolve_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  DatasetBundle bundle;
  double val_fraction = 0.15;
  if (cfg.dataset == "blobs10") {
    bundle.spec = data::BlobsSpec{10, 32, 500, 2.0, 1.65, -1.5, 1.5};
  } else if (cfg.dataset == "blobs100") {
    bundle.spec = data::BlobsSpec{100, 64, 100, 4.0, 1.6, -5.0, 5.0};
    val_fraction = 0.05;
  } else if (cfg.dataset.size() > 4 &&
             cfg.dataset.substr(cfg.dataset.size() - 4) == ".csv") {
    data::Dataset whole = data::load_csv(cfg.dataset);
    auto [train_pool, test] =
        data::split(whole, 0.2, derive_seed(seed, seed_stream::kTestDraw));
    auto [train_set, val] =
        data::split(train_pool, val_fraction, derive_seed(seed, seed_stream::kSplit));
    if (cfg.label_noise > 0.0)
      train_set = data::inject_label_noise(
          train_set, cfg.label_noise, derive_seed(seed, seed_stream::kLabelNoise));
    bundle.train = std::move(train_set);
    bundle.val = std::move(val);
    bundle.test = std::move(test);
    bundle.test.split = "test";
    return bundle;
  } else {
    throw std::invalid_argument("unknown dataset preset: " + cfg.dataset);
  }

  std::uint64_t data_seed = derive_seed(seed, seed_stream::kData);
  data::Dataset pool = data::make_blobs(bundle.spec, data_seed);
  auto [train_set, val] =
      data::split(pool, val_fraction, derive_seed(seed, seed_stream::kSplit));
  if (cfg.label_noise > 0.0)
    train_set = data::inject_label_noise(
        train_set, cfg.label_noise, derive_seed(seed, seed_stream::kLabelNoise));
  // Test set: same centers, fresh noise draws.
  data::BlobsSpec test_spec = bundle.spec;
  test_spec.n_per_class = std::max(50, bundle.spec.n_per_class / 2);
  bundle.train = std::move(train_set);
  bundle.val = std::move(val);
  bundle.test = data::make_blobs(test_spec, data_seed,
                                 derive_seed(seed, seed_stream::kTestDraw));
  bundle.test.split = "test";
  return bundle;
}

train::TrainConfig to_train_config(const ExperimentConfig& cfg,
                                   std::uint64_t seed, int input_dim, int k) {
  train::TrainConfig tc;
  tc.method = train::method_from_string(cfg.method);
  tc.input_dim = input_dim;
  tc.k = k;
  tc.feature_dim = input_dim >= 32 ? 64 : 16;
  tc.hidden_width = 64;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.sgd = cfg.sgd;
  tc.delta = cfg.delta;
  tc.beta_policy = train::beta_policy_from_string(cfg.beta_policy);
  tc.mixup_alpha = cfg.mixup_alpha;
  tc.warmup_epochs = cfg.warmup_epochs;
  tc.patience = cfg.patience;
  tc.seed = seed;
  return tc;
}

std::string serialize_canonical(const nlohmann::json& j) {
  return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void save_checkpoint(const std::string& path, const train::Model& model,
                     double best_gamma, const ExperimentConfig& cfg,
                     std::uint64_t seed) {
  nlohmann::json j;
  j["format"] = "balcal-checkpoint-v1";
  j["config"] = cfg.to_json();
  j["seed"] = seed;
  j["best_gamma"] = best_gamma;
  j["model"] = train::model_to_json(model);
  write_text_file(path, serialize_canonical(j));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  Checkpoint ck;
  ck.model = train::model_from_json(j.at("model"));
  ck.best_gamma = j.at("best_gamma").get<double>();
  ck.config = ExperimentConfig::from_json(j.at("config"));
  ck.seed = j.at("seed").get<std::uint64_t>();
  return ck;
}

namespace {
std::string run_stem(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::string dataset = cfg.dataset;
  for (char& c : dataset)
    if (c == '/' || c == '.') c = '_';
  return cfg.out_dir + "/" + cfg.method + "_" + dataset + "_seed" +
         std::to_string(seed);
}
}  // namespace

RunArtifacts run_one(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DatasetBundle bundle = resolve_dataset(cfg, seed);
  train::TrainConfig tc =
      to_train_config(cfg, seed, bundle.train.input_dim(), bundle.train.k);
  RunArtifacts art;
  art.result = train::run_training(tc, bundle.train, bundle.val);

  std::string stem = run_stem(cfg, seed);
  art.checkpoint_path = stem + ".checkpoint.json";
  art.history_path = stem + ".history.jsonl";
  save_checkpoint(art.checkpoint_path, art.result.best_model,
                  art.result.best_gamma, cfg, seed);
  std::string hist;
  for (const auto& rec : art.result.history)
    hist += train::epoch_record_to_json(rec).dump() + "\n";
  write_text_file(art.history_path, hist);
  return art;
}

ResultRow evaluate(const ExperimentConfig& cfg, const train::Model& model,
                   double gamma, const DatasetBundle& bundle,
                   std::uint64_t seed) {
  ResultRow row;
  row.method = cfg.method;
  row.dataset = cfg.dataset;
  row.seed = seed;
  metrics::PredictionSet preds = train::predict(model, bundle.test, gamma);
  row.acc = metrics::accuracy(preds);
  row.ece = metrics::ece(preds, cfg.bins);
  row.aece = metrics::aece(preds, cfg.bins);
  row.nll = metrics::nll(preds);
  row.mean_conf = metrics::mean_confidence(preds);
  row.mean_entropy = metrics::mean_entropy(preds);

  if (cfg.posthoc) {
    auto [sta_val, etf_val] = train::branch_logits(model, bundle.val.x);
    auto [sta_test, etf_test] = train::branch_logits(model, bundle.test.x);
    double g = model.use_etf() ? (model.use_head ? gamma : 0.0) : 1.0;
    double t_sta = 1.0, t_etf = 1.0;
    if (model.use_head)
      t_sta = posthoc::fit_temperature(sta_val, bundle.val.labels).t;
    if (model.use_etf())
      t_etf = posthoc::fit_temperature(etf_val, bundle.val.labels).t;
    Matrix p_sta = posthoc::apply_temperature(sta_test, t_sta);
    Matrix p_etf = model.use_etf() ? posthoc::apply_temperature(etf_test, t_etf)
                                   : p_sta;
    if (!model.use_head) p_sta = p_etf;
    metrics::PredictionSet scaled;
    scaled.k = bundle.test.k;
    for (std::size_t i = 0; i < bundle.test.size(); ++i) {
      Vector ps = p_sta.row(static_cast<int>(i)).transpose();
      Vector pe = p_etf.row(static_cast<int>(i)).transpose();
      scaled.add(bundle.test.labels[i], train::fused_probs(ps, pe, g).p_fused);
    }
    row.has_posthoc = true;
    row.posthoc_ece = metrics::ece(scaled, cfg.bins);
    row.posthoc_nll = metrics::nll(scaled);
  }
  return row;
}

nlohmann::json ResultRow::to_json() const {
  nlohmann::json j{{"method", method}, {"dataset", dataset}, {"seed", seed},
                   {"acc", acc},       {"ece", ece},         {"aece", aece},
                   {"nll", nll},       {"mean_conf", mean_conf},
                   {"mean_entropy", mean_entropy}};
  if (has_posthoc) {
    j["posthoc_ece"] = posthoc_ece;
    j["posthoc_nll"] = posthoc_nll;
  }
  return j;
}

}  // namespace balcal::experiment
