#include "balcal/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace balcal::metrics {

void PredictionSet::add(int label, const Vector& probs) {
  Prediction p;
  p.label = label;
  int arg = 0;
  probs.maxCoeff(&arg);
  p.predicted = arg;
  p.confidence = probs[arg];
  p.probs.assign(probs.data(), probs.data() + probs.size());
  if (k == 0) k = static_cast<int>(probs.size());
  items.push_back(std::move(p));
}

namespace {
void require_nonempty(const PredictionSet& preds, const char* op) {
  if (preds.items.empty())
    throw std::invalid_argument(std::string(op) + ": empty prediction set");
}

int fixed_bin_index(double confidence, int bins) {
  // (0,1] split into `bins` equal intervals, each (lo, hi].
  for (int b = 0; b < bins - 1; ++b)
    if (confidence <= static_cast<double>(b + 1) / bins) return b;
  return bins - 1;
}
}  // namespace

double ece(const PredictionSet& preds, int bins) {
  return reliability_bins(preds, bins).ece;
}

BinReport reliability_bins(const PredictionSet& preds, int bins) {
  require_nonempty(preds, "reliability_bins");
  if (bins < 1) throw std::invalid_argument("reliability_bins: bins must be >= 1");
  BinReport report;
  report.bins.resize(bins);
  for (int b = 0; b < bins; ++b) {
    report.bins[b].lo = static_cast<double>(b) / bins;
    report.bins[b].hi = static_cast<double>(b + 1) / bins;
  }
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  for (const auto& p : preds.items) {
    int b = fixed_bin_index(p.confidence, bins);
    report.bins[b].count++;
    conf_sum[b] += p.confidence;
    acc_sum[b] += p.correct() ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(preds.size());
  for (int b = 0; b < bins; ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    bin.confidence = conf_sum[b] / bin.count;
    bin.accuracy = acc_sum[b] / bin.count;
    report.ece += (bin.count / n) * std::abs(bin.accuracy - bin.confidence);
  }
  return report;
}

double aece(const PredictionSet& preds, int bins) {
  require_nonempty(preds, "aece");
  if (bins < 1) throw std::invalid_argument("aece: bins must be >= 1");
  const std::size_t n = preds.size();
  if (n < static_cast<std::size_t>(bins))
    throw std::invalid_argument("aece: need n >= bins");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds.items[a].confidence < preds.items[b].confidence;
  });
  const std::size_t base = n / bins, extra = n % bins;
  double total = 0.0;
  std::size_t pos = 0;
  for (int b = 0; b < bins; ++b) {
    std::size_t count = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
    double conf = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < count; ++i, ++pos) {
      const auto& p = preds.items[order[pos]];
      conf += p.confidence;
      acc += p.correct() ? 1.0 : 0.0;
    }
    total += (static_cast<double>(count) / n) * std::abs(acc / count - conf / count);
  }
  return total;
}

double accuracy(const PredictionSet& preds) {
  require_nonempty(preds, "accuracy");
  double c = 0.0;
  for (const auto& p : preds.items) c += p.correct() ? 1.0 : 0.0;
  return c / preds.size();
}

double mean_confidence(const PredictionSet& preds) {
  require_nonempty(preds, "mean_confidence");
  double s = 0.0;
  for (const auto& p : preds.items) s += p.confidence;
  return s / preds.size();
}

double mean_entropy(const PredictionSet& preds) {
  require_nonempty(preds, "mean_entropy");
  double s = 0.0;
  for (const auto& p : preds.items) {
    double h = 0.0;
    for (double q : p.probs)
      if (q > 0.0) h -= q * std::log(q);
    s += h;
  }
  return s / preds.size();
}

double nll(const PredictionSet& preds) {
  require_nonempty(preds, "nll");
  double s = 0.0;
  for (const auto& p : preds.items)
    s -= std::log(std::max(p.probs[p.label], 1e-12));
  return s / preds.size();
}

double auroc(const std::vector<double>& scores_in,
             const std::vector<double>& scores_out) {
  if (scores_in.empty() || scores_out.empty())
    throw std::invalid_argument("auroc: empty score list");
  // Rank-sum form; O((n+m) log(n+m)) instead of all pairs.
  struct Item { double s; bool in; };
  std::vector<Item> all;
  all.reserve(scores_in.size() + scores_out.size());
  for (double s : scores_in) all.push_back({s, true});
  for (double s : scores_out) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.s < b.s; });
  double rank_sum_in = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].s == all[i].s) ++j;
    double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t)
      if (all[t].in) rank_sum_in += mid_rank;
    i = j;
  }
  const double n1 = static_cast<double>(scores_in.size());
  const double n2 = static_cast<double>(scores_out.size());
  return (rank_sum_in - n1 * (n1 + 1.0) / 2.0) / (n1 * n2);
}

double fpr95(const std::vector<double>& scores_in,
             const std::vector<double>& scores_out) {
  if (scores_in.empty() || scores_out.empty())
    throw std::invalid_argument("fpr95: empty score list");
  // A sample is flagged in-distribution when score >= threshold. Pick the
  // largest threshold with TPR >= 0.95; candidates are the in-scores.
  std::vector<double> sorted_in = scores_in;
  std::sort(sorted_in.begin(), sorted_in.end(), std::greater<>());
  const std::size_t need =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted_in.size())));
  double threshold = sorted_in[need - 1];
  std::size_t fp = 0;
  for (double s : scores_out)
    if (s >= threshold) ++fp;
  return static_cast<double>(fp) / scores_out.size();
}

std::vector<double> confidences(const PredictionSet& preds) {
  std::vector<double> out;
  out.reserve(preds.size());
  for (const auto& p : preds.items) out.push_back(p.confidence);
  return out;
}

namespace {
std::string fmt_double(double v) {
  char buf[32];
  int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, len);
}
}  // namespace

void write_csv(const PredictionSet& preds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  out << "index,label,pred,confidence";
  for (int k = 0; k < preds.k; ++k) out << ",p_" << k;
  out << "\r\n";
  for (std::size_t i = 0; i < preds.items.size(); ++i) {
    const auto& p = preds.items[i];
    out << i << ',' << p.label << ',' << p.predicted << ',' << fmt_double(p.confidence);
    for (double q : p.probs) out << ',' << fmt_double(q);
    out << "\r\n";
  }
}

PredictionSet read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file");
  PredictionSet preds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5)
      throw std::runtime_error("read_csv: ragged row at line " + std::to_string(lineno));
    Prediction p;
    p.label = std::stoi(cells[1]);
    p.predicted = std::stoi(cells[2]);
    p.confidence = std::stod(cells[3]);
    for (std::size_t c = 4; c < cells.size(); ++c) p.probs.push_back(std::stod(cells[c]));
    if (preds.k == 0) preds.k = static_cast<int>(p.probs.size());
    else if (preds.k != static_cast<int>(p.probs.size()))
      throw std::runtime_error("read_csv: ragged row at line " + std::to_string(lineno));
    preds.items.push_back(std::move(p));
  }
  return preds;
}

nlohmann::json bin_report_to_json(const BinReport& report) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.bins)
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count},
                    {"accuracy", b.accuracy}, {"confidence", b.confidence}});
  return nlohmann::json{{"bins", bins}, {"ece", report.ece}};
}

}  // namespace balcal::metrics
