// Experiment driver: train / eval / sweep / shift-eval / ood-eval / report.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "balcal/experiment.hpp"
#include "balcal/posthoc.hpp"

namespace fs = std::filesystem;
using namespace balcal;
using experiment::ExperimentConfig;

namespace {

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string pct(double v) { return fmt(100.0 * v, 2); }

ExperimentConfig load_base_config(const std::string& config_path) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config " + config_path);
    cfg = ExperimentConfig::from_json(nlohmann::json::parse(in));
  }
  if (const char* env = std::getenv("BALCAL_OUT_DIR"); env && cfg.out_dir == "out")
    cfg.out_dir = env;
  return cfg;
}

// Flags override config-file values; CLI11 only writes flags the user passed.
void add_common_flags(CLI::App* app, ExperimentConfig& cfg,
                      std::vector<std::uint64_t>& seed_flags) {
  app->add_option("--method", cfg.method,
                  "vanilla|balcal|mixup|balcal+mixup|etf-only-fixed-beta|"
                  "etf-only-dynamic-beta|balcal-no-adapter");
  app->add_option("--dataset", cfg.dataset, "blobs10, blobs100, or a CSV path");
  app->add_option("--seed,--seeds", seed_flags, "seed list");
  app->add_option("--epochs", cfg.epochs);
  app->add_option("--lr", cfg.lr);
  app->add_option("--delta", cfg.delta, "cautious parameter, recommended [0.91,0.99]");
  app->add_option("--beta-policy", cfg.beta_policy, "fixed-1|fixed-K|dynamic");
  app->add_option("--alpha", cfg.mixup_alpha, "mixup Beta(alpha,alpha)");
  app->add_option("--bins", cfg.bins);
  app->add_option("--label-noise", cfg.label_noise);
  app->add_option("--batch-size", cfg.batch_size);
  app->add_option("--warmup", cfg.warmup_epochs);
  app->add_option("--patience", cfg.patience);
  app->add_flag("--posthoc", cfg.posthoc, "add temperature-scaled columns");
  app->add_flag("--sgd", cfg.sgd, "plain SGD instead of Adam");
  app->add_option("--out", cfg.out_dir, "output directory");
}

void write_rows_csv(const std::string& path,
                    const std::vector<experiment::ResultRow>& rows) {
  std::string csv =
      "method,dataset,seed,acc,ece,aece,nll,mean_conf,mean_entropy,"
      "posthoc_ece,posthoc_nll\r\n";
  for (const auto& r : rows) {
    csv += r.method + "," + r.dataset + "," + std::to_string(r.seed) + "," +
           fmt(r.acc, 6) + "," + fmt(r.ece, 6) + "," + fmt(r.aece, 6) + "," +
           fmt(r.nll, 6) + "," + fmt(r.mean_conf, 6) + "," +
           fmt(r.mean_entropy, 6) + ",";
    csv += (r.has_posthoc ? fmt(r.posthoc_ece, 6) : std::string("-")) + ",";
    csv += (r.has_posthoc ? fmt(r.posthoc_nll, 6) : std::string("-")) + "\r\n";
  }
  experiment::write_text_file(path, csv);
}

int cmd_train(const ExperimentConfig& cfg) {
  for (std::uint64_t seed : cfg.seeds) {
    auto art = experiment::run_one(cfg, seed);
    const auto& last = art.result.history.back();
    std::cout << "trained " << cfg.method << " on " << cfg.dataset << " seed "
              << seed << ": best epoch " << art.result.best_epoch
              << ", best gamma " << fmt(art.result.best_gamma) << ", final val "
              << fmt(last.val_metric) << " -> " << art.checkpoint_path << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const ExperimentConfig& overrides,
             bool have_dataset_override) {
  auto ck = experiment::load_checkpoint(checkpoint_path);
  ExperimentConfig cfg = ck.config;
  if (have_dataset_override) cfg.dataset = overrides.dataset;
  cfg.bins = overrides.bins;
  cfg.posthoc = overrides.posthoc || cfg.posthoc;
  if (overrides.out_dir != "out") cfg.out_dir = overrides.out_dir;

  auto bundle = experiment::resolve_dataset(cfg, ck.seed);
  auto row = experiment::evaluate(cfg, ck.model, ck.best_gamma, bundle, ck.seed);

  std::string stem = cfg.out_dir + "/" +
                     fs::path(checkpoint_path).stem().stem().string() + ".result";
  experiment::write_text_file(stem + ".json",
                              experiment::serialize_canonical(row.to_json()));
  write_rows_csv(stem + ".csv", {row});
  std::cout << cfg.method << " " << cfg.dataset << " seed " << ck.seed
            << ": ACC " << pct(row.acc) << " ECE " << pct(row.ece) << " AECE "
            << pct(row.aece) << " NLL " << fmt(row.nll);
  if (row.has_posthoc) std::cout << " ECE(TS) " << pct(row.posthoc_ece);
  std::cout << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& parameter,
              const std::vector<double>& grid) {
  if (grid.empty()) throw std::runtime_error("sweep: empty grid");
  std::string csv = "parameter,value,seed,acc,ece,mean_conf\r\n";
  for (double value : grid) {
    for (std::uint64_t seed : cfg.seeds) {
      ExperimentConfig c = cfg;
      if (parameter == "alpha") c.mixup_alpha = value;
      else if (parameter == "delta") c.delta = value;
      else if (parameter != "beta" && parameter != "gamma")
        throw std::runtime_error("sweep: unknown parameter " + parameter);

      auto bundle = experiment::resolve_dataset(c, seed);
      train::TrainConfig tc = experiment::to_train_config(
          c, seed, bundle.train.input_dim(), bundle.train.k);
      auto result = train::run_training(tc, bundle.train, bundle.val);
      train::Model model = result.best_model;
      double gamma = result.best_gamma;

      if (parameter == "beta" && model.use_etf())
        model.etf = model.etf->with_beta(value);
      if (parameter == "gamma") gamma = value;

      auto preds = train::predict(model, bundle.test, gamma);
      csv += parameter + "," + fmt(value) + "," + std::to_string(seed) + "," +
             fmt(metrics::accuracy(preds), 6) + "," +
             fmt(metrics::ece(preds, c.bins), 6) + "," +
             fmt(metrics::mean_confidence(preds), 6) + "\r\n";
    }
  }
  std::string path = cfg.out_dir + "/sweep_" + parameter + ".csv";
  experiment::write_text_file(path, csv);
  std::cout << "sweep written to " << path << "\n";
  return 0;
}

int cmd_shift_eval(const std::string& checkpoint_path,
                   const std::vector<std::string>& kinds,
                   const ExperimentConfig& overrides) {
  auto ck = experiment::load_checkpoint(checkpoint_path);
  ExperimentConfig cfg = ck.config;
  if (overrides.out_dir != "out") cfg.out_dir = overrides.out_dir;
  auto bundle = experiment::resolve_dataset(cfg, ck.seed);

  std::string csv = "kind,severity,seed,acc,ece\r\n";
  for (const auto& kind_name : kinds) {
    auto kind = data::corruption_kind_from_string(kind_name);
    for (int severity = 1; severity <= 5; ++severity) {
      data::Dataset shifted =
          data::corrupt(bundle.test, kind, severity,
                        derive_seed(ck.seed, seed_stream::kCorrupt));
      auto preds = train::predict(ck.model, shifted, ck.best_gamma);
      csv += kind_name + "," + std::to_string(severity) + "," +
             std::to_string(ck.seed) + "," + fmt(metrics::accuracy(preds), 6) +
             "," + fmt(metrics::ece(preds, cfg.bins), 6) + "\r\n";
    }
  }
  std::string path = cfg.out_dir + "/" +
                     fs::path(checkpoint_path).stem().stem().string() +
                     ".shift.csv";
  experiment::write_text_file(path, csv);
  std::cout << "shift eval written to " << path << "\n";
  return 0;
}

int cmd_ood_eval(const std::string& checkpoint_path,
                 const ExperimentConfig& overrides) {
  auto ck = experiment::load_checkpoint(checkpoint_path);
  ExperimentConfig cfg = ck.config;
  if (overrides.out_dir != "out") cfg.out_dir = overrides.out_dir;
  auto bundle = experiment::resolve_dataset(cfg, ck.seed);

  data::BlobsSpec out_spec = bundle.spec;
  out_spec.center_lo += 12.0;
  out_spec.center_hi += 12.0;
  out_spec.n_per_class = std::max(50, bundle.spec.n_per_class / 2);
  data::Dataset out_set = data::make_blobs(
      out_spec, derive_seed(ck.seed, seed_stream::kData) + 1);

  auto preds_in = train::predict(ck.model, bundle.test, ck.best_gamma);
  // Out-set labels are meaningless; only scores and entropy are reported.
  auto preds_out = train::predict(ck.model, out_set, ck.best_gamma);
  auto s_in = metrics::confidences(preds_in);
  auto s_out = metrics::confidences(preds_out);

  nlohmann::json j{{"auroc", metrics::auroc(s_in, s_out)},
                   {"fpr95", metrics::fpr95(s_in, s_out)},
                   {"in_mean_conf", metrics::mean_confidence(preds_in)},
                   {"in_mean_entropy", metrics::mean_entropy(preds_in)},
                   {"out_mean_conf", metrics::mean_confidence(preds_out)},
                   {"out_mean_entropy", metrics::mean_entropy(preds_out)}};
  std::string path = cfg.out_dir + "/" +
                     fs::path(checkpoint_path).stem().stem().string() + ".ood.json";
  experiment::write_text_file(path, experiment::serialize_canonical(j));
  std::cout << "AUROC " << fmt(j["auroc"].get<double>()) << " FPR95 "
            << fmt(j["fpr95"].get<double>()) << " -> " << path << "\n";
  return 0;
}

int cmd_report(const std::string& results_dir, const std::string& out_path) {
  std::vector<nlohmann::json> rows;
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(results_dir))
    if (entry.path().string().ends_with(".result.json"))
      paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    std::ifstream in(p);
    rows.push_back(nlohmann::json::parse(in));
  }
  if (rows.empty()) throw std::runtime_error("report: no .result.json files in " + results_dir);

  // (method, dataset) -> per-metric samples across seeds.
  std::map<std::pair<std::string, std::string>,
           std::map<std::string, std::vector<double>>> groups;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.at("method").get<std::string>(),
                              r.at("dataset").get<std::string>());
    for (const char* metric : {"acc", "ece", "aece", "posthoc_ece"})
      if (r.contains(metric))
        groups[key][metric].push_back(r.at(metric).get<double>());
  }

  auto mean_sd = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    double sd = v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0.0;
    return std::make_pair(mean, sd);
  };
  auto cell = [&](const std::map<std::string, std::vector<double>>& g,
                  const std::string& metric) -> std::string {
    auto it = g.find(metric);
    if (it == g.end() || it->second.empty()) return "-";
    auto [m, sd] = mean_sd(it->second);
    return pct(m) + "\xC2\xB1" + pct(sd);
  };

  std::string md = "| method | dataset | ACC | ECE | AECE | ECE(TS) |\n"
                   "|---|---|---|---|---|---|\n";
  nlohmann::json jout = nlohmann::json::array();
  for (const auto& [key, g] : groups) {
    md += "| " + key.first + " | " + key.second + " | " + cell(g, "acc") +
          " | " + cell(g, "ece") + " | " + cell(g, "aece") + " | " +
          cell(g, "posthoc_ece") + " |\n";
    nlohmann::json row{{"method", key.first}, {"dataset", key.second}};
    for (const char* metric : {"acc", "ece", "aece", "posthoc_ece"})
      if (auto it = g.find(metric); it != g.end()) {
        auto [m, sd] = mean_sd(it->second);
        row[metric] = {{"mean", m}, {"sd", sd}, {"n", it->second.size()}};
      }
    jout.push_back(std::move(row));
  }
  experiment::write_text_file(out_path + ".md", md);
  experiment::write_text_file(out_path + ".json",
                              experiment::serialize_canonical(jout));
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BalCAL calibration laboratory"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, parameter, results_dir, report_out;
  std::vector<double> grid;
  std::vector<std::string> kinds = {"gaussian-noise", "feature-dropout", "blur-mix"};
  ExperimentConfig cfg;
  std::vector<std::uint64_t> seed_flags;

  auto* train_cmd = app.add_subcommand("train", "train one or more seeds");
  train_cmd->add_option("--config", config_path, "JSON config; flags override");
  add_common_flags(train_cmd, cfg, seed_flags);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint_path)->required();
  add_common_flags(eval_cmd, cfg, seed_flags);

  auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sweep");
  sweep_cmd->add_option("parameter", parameter, "beta|gamma|delta|alpha")->required();
  sweep_cmd->add_option("--grid", grid, "grid values")->required();
  add_common_flags(sweep_cmd, cfg, seed_flags);

  auto* shift_cmd = app.add_subcommand("shift-eval", "corruption-severity eval");
  shift_cmd->add_option("checkpoint", checkpoint_path)->required();
  shift_cmd->add_option("--kinds", kinds);
  add_common_flags(shift_cmd, cfg, seed_flags);

  auto* ood_cmd = app.add_subcommand("ood-eval", "OOD detection eval");
  ood_cmd->add_option("checkpoint", checkpoint_path)->required();
  add_common_flags(ood_cmd, cfg, seed_flags);

  auto* report_cmd = app.add_subcommand("report", "aggregate result files");
  report_cmd->add_option("results_dir", results_dir)->required();
  report_cmd->add_option("--out", report_out);

  CLI11_PARSE(app, argc, argv);

  try {
    // Config file fills in every flag the user did not pass; flags win.
    CLI::App* active = nullptr;
    for (auto* sub : {train_cmd, eval_cmd, sweep_cmd, shift_cmd, ood_cmd})
      if (sub->parsed()) active = sub;
    ExperimentConfig base = load_base_config(config_path);
    if (active) {
      auto keep = [&](const std::string& flag) {
        return active->count(flag) > 0;
      };
      if (!keep("--method")) cfg.method = base.method;
      if (!keep("--dataset")) cfg.dataset = base.dataset;
      if (!keep("--epochs")) cfg.epochs = base.epochs;
      if (!keep("--lr")) cfg.lr = base.lr;
      if (!keep("--delta")) cfg.delta = base.delta;
      if (!keep("--beta-policy")) cfg.beta_policy = base.beta_policy;
      if (!keep("--alpha")) cfg.mixup_alpha = base.mixup_alpha;
      if (!keep("--bins")) cfg.bins = base.bins;
      if (!keep("--label-noise")) cfg.label_noise = base.label_noise;
      if (!keep("--batch-size")) cfg.batch_size = base.batch_size;
      if (!keep("--warmup")) cfg.warmup_epochs = base.warmup_epochs;
      if (!keep("--patience")) cfg.patience = base.patience;
      if (!keep("--posthoc")) cfg.posthoc = base.posthoc;
      if (!keep("--sgd")) cfg.sgd = base.sgd;
      if (!keep("--out")) cfg.out_dir = base.out_dir;
    }
    if (!seed_flags.empty()) cfg.seeds = seed_flags;
    else cfg.seeds = base.seeds;

    bool dataset_overridden = false;
    for (auto* sub : {train_cmd, eval_cmd, sweep_cmd, shift_cmd, ood_cmd})
      if (sub->parsed() && sub->count("--dataset") > 0) dataset_overridden = true;

    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint_path, cfg, dataset_overridden);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, parameter, grid);
    if (shift_cmd->parsed()) return cmd_shift_eval(checkpoint_path, kinds, cfg);
    if (ood_cmd->parsed()) return cmd_ood_eval(checkpoint_path, cfg);
    if (report_cmd->parsed())
      return cmd_report(results_dir,
                        report_out.empty() ? results_dir + "/report" : report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
