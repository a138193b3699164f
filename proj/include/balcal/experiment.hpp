#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "balcal/balcal.hpp"
#include "balcal/data.hpp"

namespace balcal::experiment {

// Resolved experiment configuration: dataset preset or file, method, and
// every hyperparameter needed to reproduce a run byte-for-byte.
struct ExperimentConfig {
  std::string method = "balcal";
  std::string dataset = "blobs10";
  std::vector<std::uint64_t> seeds = {1};
  int epochs = 100;
  int batch_size = 128;
  double lr = 1e-4;
  bool sgd = false;
  double delta = 0.95;
  std::string beta_policy = "fixed-1";
  double mixup_alpha = 0.2;
  int bins = 15;
  double label_noise = 0.0;
  int warmup_epochs = 0;
  int patience = 15;
  bool posthoc = false;
  std::string out_dir = "out";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct DatasetBundle {
  data::Dataset train;
  data::Dataset val;
  data::Dataset test;
  data::BlobsSpec spec;  // preset geometry, reused for shift/OOD sets
};

// Presets: blobs10 (K=10, dim 32, 500/class, 15% val) and blobs100
// (K=100, dim 64, 100/class, 5% val). A path ending in .csv loads instead.
DatasetBundle resolve_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

train::TrainConfig to_train_config(const ExperimentConfig& cfg,
                                   std::uint64_t seed, int input_dim, int k);

struct RunArtifacts {
  std::string checkpoint_path;
  std::string history_path;
  train::RunResult result;
};

// Trains one seed, writes <out>/<method>_<dataset>_seed<seed>.checkpoint.json
// and the matching .history.jsonl.
RunArtifacts run_one(const ExperimentConfig& cfg, std::uint64_t seed);

struct ResultRow {
  std::string method, dataset;
  std::uint64_t seed = 0;
  double acc = 0, ece = 0, aece = 0, nll = 0;
  double mean_conf = 0, mean_entropy = 0;
  bool has_posthoc = false;
  double posthoc_ece = 0, posthoc_nll = 0;

  nlohmann::json to_json() const;
};

ResultRow evaluate(const ExperimentConfig& cfg, const train::Model& model,
                   double gamma, const DatasetBundle& bundle,
                   std::uint64_t seed);

// Checkpoint I/O; the effective config is embedded for reproducibility.
void save_checkpoint(const std::string& path, const train::Model& model,
                     double best_gamma, const ExperimentConfig& cfg,
                     std::uint64_t seed);
struct Checkpoint {
  train::Model model;
  double best_gamma = 1.0;
  ExperimentConfig config;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_canonical(const nlohmann::json& j);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace balcal::experiment
