#pragma once

#include <nlohmann/json_fwd.hpp>

#include <string>
#include <vector>

#include "balcal/common.hpp"

namespace balcal::metrics {

struct Prediction {
  int label = 0;
  int predicted = 0;
  double confidence = 0.0;
  std::vector<double> probs;
  bool correct() const { return predicted == label; }
};

struct PredictionSet {
  std::vector<Prediction> items;
  int k = 0;

  std::size_t size() const { return items.size(); }
  void add(int label, const Vector& probs);
};

struct BinReport {
  struct Bin {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;
    double confidence = 0.0;
  };
  std::vector<Bin> bins;
  double ece = 0.0;  // weighted gap sum over the same bins
};

// Fixed-width binning on (0,1], left-open right-closed.
double ece(const PredictionSet& preds, int bins = 15);
// Equal-count (quantile) binning; first (n mod bins) bins take the extra sample.
double aece(const PredictionSet& preds, int bins = 15);
BinReport reliability_bins(const PredictionSet& preds, int bins = 15);

double accuracy(const PredictionSet& preds);
double mean_confidence(const PredictionSet& preds);
double mean_entropy(const PredictionSet& preds);
double nll(const PredictionSet& preds);

// Mann-Whitney AUROC; in-distribution scores are the positives.
double auroc(const std::vector<double>& scores_in,
             const std::vector<double>& scores_out);
// FPR at the largest threshold reaching TPR >= 0.95 on in-scores.
double fpr95(const std::vector<double>& scores_in,
             const std::vector<double>& scores_out);

std::vector<double> confidences(const PredictionSet& preds);

// CSV with header index,label,pred,confidence,p_0..p_{K-1}.
void write_csv(const PredictionSet& preds, const std::string& path);
PredictionSet read_csv(const std::string& path);

nlohmann::json bin_report_to_json(const BinReport& report);

}  // namespace balcal::metrics
