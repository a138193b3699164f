#pragma once

#include <string>
#include <vector>

#include "balcal/common.hpp"

namespace balcal::data {

struct Dataset {
  Matrix x;                  // n x input_dim
  std::vector<int> labels;   // values in [0, k)
  int k = 0;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  int input_dim() const { return static_cast<int>(x.cols()); }
};

struct MixupBatch {
  Matrix x;                  // mixed features
  Matrix soft_labels;        // n x k, rows sum to 1
  std::vector<double> lambdas;
  double alpha = 0.0;
};

struct BlobsSpec {
  int k = 10;
  int input_dim = 32;
  int n_per_class = 500;
  double separation = 4.0;
  double noise_sd = 1.0;
  double center_lo = -5.0;
  double center_hi = 5.0;
};

// K seeded Gaussian clusters. Centers come from `seed`; if sample_seed is
// nonzero the point noise uses its own stream, so a fresh test set can share
// the training centers.
Dataset make_blobs(const BlobsSpec& spec, std::uint64_t seed,
                   std::uint64_t sample_seed = 0);

// Stratified seeded split into (train, val).
std::pair<Dataset, Dataset> split(const Dataset& d, double val_fraction,
                                  std::uint64_t seed);

// Pairs each row of the batch with a seeded permutation partner and mixes
// with lambda ~ Beta(alpha, alpha). forced_lambda >= 0 overrides sampling
// (test hook).
MixupBatch mixup_batch(const Matrix& x, const std::vector<int>& labels, int k,
                       double alpha, Rng& rng, double forced_lambda = -1.0);

enum class CorruptionKind { kGaussianNoise, kFeatureDropout, kBlurMix };

CorruptionKind corruption_kind_from_string(const std::string& name);
std::string to_string(CorruptionKind kind);

// Label-preserving shift; magnitude strictly increasing in severity 1..5.
Dataset corrupt(const Dataset& d, CorruptionKind kind, int severity,
                std::uint64_t seed);

// Relabels a fraction of samples to a different uniformly chosen class.
Dataset inject_label_noise(const Dataset& d, double fraction, std::uint64_t seed);

// In-distribution blobs plus an out-set drawn from a shifted center box.
std::pair<Dataset, Dataset> ood_pair(const BlobsSpec& spec, std::uint64_t seed_in,
                                     std::uint64_t seed_out, double center_shift);

// CSV: label in the first column, features after. K inferred unless forced.
Dataset load_csv(const std::string& path, int k_override = 0);
// Classic IDX image/label file pair; pixels scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace balcal::data
