#include "balcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace balcal::data {

Dataset make_blobs(const BlobsSpec& spec, std::uint64_t seed,
                   std::uint64_t sample_seed) {
  if (spec.k < 2 || spec.input_dim < 1 || spec.n_per_class < 1 ||
      spec.separation <= 0 || spec.noise_sd <= 0)
    throw std::invalid_argument("make_blobs: all spec fields must be positive");

  Rng center_rng(seed);
  std::vector<Vector> centers;
  int attempts = 0;
  while (static_cast<int>(centers.size()) < spec.k) {
    if (++attempts > 1000 * spec.k)
      throw std::runtime_error("make_blobs: cannot place centers at requested separation");
    Vector c(spec.input_dim);
    for (int i = 0; i < spec.input_dim; ++i)
      c[i] = center_rng.uniform(spec.center_lo, spec.center_hi);
    bool ok = true;
    for (const auto& other : centers)
      if ((c - other).norm() < spec.separation) { ok = false; break; }
    if (ok) centers.push_back(std::move(c));
  }

  Rng noise_rng(sample_seed != 0 ? sample_seed : seed + 1);
  const int n = spec.k * spec.n_per_class;
  Dataset d;
  d.k = spec.k;
  d.x = Matrix(n, spec.input_dim);
  d.labels.resize(n);
  int row = 0;
  for (int c = 0; c < spec.k; ++c) {
    for (int s = 0; s < spec.n_per_class; ++s, ++row) {
      for (int i = 0; i < spec.input_dim; ++i)
        d.x(row, i) = centers[c][i] + spec.noise_sd * noise_rng.normal();
      d.labels[row] = c;
    }
  }
  return d;
}

std::pair<Dataset, Dataset> split(const Dataset& d, double val_fraction,
                                  std::uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("split: fraction must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(d.k);
  for (std::size_t i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& idxs : by_class) {
    std::shuffle(idxs.begin(), idxs.end(), rng.engine());
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(idxs.size())));
    for (std::size_t i = 0; i < idxs.size(); ++i)
      (i < n_val ? val_idx : train_idx).push_back(idxs[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto take = [&](const std::vector<std::size_t>& idxs, const char* tag) {
    Dataset out;
    out.k = d.k;
    out.split = tag;
    out.x = Matrix(static_cast<int>(idxs.size()), d.input_dim());
    out.labels.resize(idxs.size());
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      out.x.row(static_cast<int>(i)) = d.x.row(static_cast<int>(idxs[i]));
      out.labels[i] = d.labels[idxs[i]];
    }
    return out;
  };
  return {take(train_idx, "train"), take(val_idx, "val")};
}

MixupBatch mixup_batch(const Matrix& x, const std::vector<int>& labels, int k,
                       double alpha, Rng& rng, double forced_lambda) {
  if (alpha <= 0) throw std::invalid_argument("mixup_batch: alpha must be > 0");
  if (x.rows() != static_cast<int>(labels.size()))
    throw std::invalid_argument("mixup_batch: batch size mismatch");
  const int n = static_cast<int>(x.rows());
  std::vector<int> partner(n);
  std::iota(partner.begin(), partner.end(), 0);
  std::shuffle(partner.begin(), partner.end(), rng.engine());

  MixupBatch out;
  out.alpha = alpha;
  out.x = Matrix(n, x.cols());
  out.soft_labels = Matrix::Zero(n, k);
  out.lambdas.resize(n);
  for (int i = 0; i < n; ++i) {
    double lam = forced_lambda >= 0.0 ? forced_lambda : rng.beta(alpha);
    out.lambdas[i] = lam;
    out.x.row(i) = lam * x.row(i) + (1.0 - lam) * x.row(partner[i]);
    out.soft_labels(i, labels[i]) += lam;
    out.soft_labels(i, labels[partner[i]]) += 1.0 - lam;
  }
  return out;
}

CorruptionKind corruption_kind_from_string(const std::string& name) {
  if (name == "gaussian-noise") return CorruptionKind::kGaussianNoise;
  if (name == "feature-dropout") return CorruptionKind::kFeatureDropout;
  if (name == "blur-mix") return CorruptionKind::kBlurMix;
  throw std::invalid_argument("unknown corruption kind: " + name);
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return "gaussian-noise";
    case CorruptionKind::kFeatureDropout: return "feature-dropout";
    case CorruptionKind::kBlurMix: return "blur-mix";
  }
  return "?";
}

Dataset corrupt(const Dataset& d, CorruptionKind kind, int severity,
                std::uint64_t seed) {
  if (severity < 1 || severity > 5)
    throw std::invalid_argument("corrupt: severity must be in 1..5");
  Dataset out = d;
  Rng rng(seed);
  switch (kind) {
    case CorruptionKind::kGaussianNoise: {
      double data_sd = std::sqrt(
          (d.x.array() - d.x.mean()).square().sum() / (d.x.size() - 1));
      double sd = 0.1 * severity * data_sd;
      for (int i = 0; i < out.x.rows(); ++i)
        for (int j = 0; j < out.x.cols(); ++j)
          out.x(i, j) += sd * rng.normal();
      break;
    }
    case CorruptionKind::kFeatureDropout: {
      double rate = 0.08 * severity;
      for (int i = 0; i < out.x.rows(); ++i)
        for (int j = 0; j < out.x.cols(); ++j)
          if (rng.uniform() < rate) out.x(i, j) = 0.0;
      break;
    }
    case CorruptionKind::kBlurMix: {
      // Mix toward a 3-tap moving average along the feature axis.
      double c = 0.1 * severity;
      Matrix smooth = out.x;
      const int w = static_cast<int>(out.x.cols());
      for (int i = 0; i < out.x.rows(); ++i)
        for (int j = 0; j < w; ++j) {
          double a = out.x(i, std::max(0, j - 1));
          double b = out.x(i, j);
          double cc = out.x(i, std::min(w - 1, j + 1));
          smooth(i, j) = (a + b + cc) / 3.0;
        }
      out.x = (1.0 - c) * out.x + c * smooth;
      break;
    }
  }
  return out;
}

Dataset inject_label_noise(const Dataset& d, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw std::invalid_argument("inject_label_noise: fraction must be in [0,1)");
  Dataset out = d;
  Rng rng(seed);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  std::size_t n_flip = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(d.size())));
  for (std::size_t i = 0; i < n_flip; ++i) {
    int old = out.labels[idx[i]];
    int neu = static_cast<int>(rng.next_index(d.k - 1));
    if (neu >= old) ++neu;
    out.labels[idx[i]] = neu;
  }
  return out;
}

std::pair<Dataset, Dataset> ood_pair(const BlobsSpec& spec, std::uint64_t seed_in,
                                     std::uint64_t seed_out, double center_shift) {
  Dataset in = make_blobs(spec, seed_in);
  BlobsSpec out_spec = spec;
  out_spec.center_lo += center_shift;
  out_spec.center_hi += center_shift;
  Dataset out = make_blobs(out_spec, seed_out);
  out.split = "ood";
  return {std::move(in), std::move(out)};
}

Dataset load_csv(const std::string& path, int k_override) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  Dataset d;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  int width = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: bad value at line " + std::to_string(lineno));
      }
    }
    if (vals.size() < 2)
      throw std::runtime_error("load_csv: too few columns at line " + std::to_string(lineno));
    if (width < 0) width = static_cast<int>(vals.size());
    else if (width != static_cast<int>(vals.size()))
      throw std::runtime_error("load_csv: ragged row at line " + std::to_string(lineno));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);
  d.x = Matrix(static_cast<int>(rows.size()), width - 1);
  d.labels.resize(rows.size());
  int max_label = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double lab = rows[i][0];
    if (lab < 0 || lab != std::floor(lab))
      throw std::runtime_error("load_csv: bad label at line " + std::to_string(i + 1));
    d.labels[i] = static_cast<int>(lab);
    max_label = std::max(max_label, d.labels[i]);
    for (int j = 1; j < width; ++j) d.x(static_cast<int>(i), j - 1) = rows[i][j];
  }
  d.k = k_override > 0 ? k_override : max_label + 1;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (d.labels[i] >= d.k)
      throw std::runtime_error("load_csv: label out of range at line " + std::to_string(i + 1));
  return d;
}

namespace {
std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw std::runtime_error("load_idx: truncated file " + path + " at byte " +
                             std::to_string(offset));
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}
}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  std::size_t off = 0;
  if (read_be32(img, images_path, off) != 0x00000803u)
    throw std::runtime_error("load_idx: bad image magic in " + images_path);
  std::uint32_t n = read_be32(img, images_path, off);
  std::uint32_t rows = read_be32(img, images_path, off);
  std::uint32_t cols = read_be32(img, images_path, off);
  const std::size_t dim = static_cast<std::size_t>(rows) * cols;

  Dataset d;
  d.x = Matrix(static_cast<int>(n), static_cast<int>(dim));
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    if (!img)
      throw std::runtime_error("load_idx: truncated file " + images_path +
                               " at byte " + std::to_string(off));
    off += dim;
    for (std::size_t j = 0; j < dim; ++j)
      d.x(static_cast<int>(i), static_cast<int>(j)) = buf[j] / 255.0;
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);
  std::size_t loff = 0;
  if (read_be32(lab, labels_path, loff) != 0x00000801u)
    throw std::runtime_error("load_idx: bad label magic in " + labels_path);
  std::uint32_t nl = read_be32(lab, labels_path, loff);
  if (nl != n) throw std::runtime_error("load_idx: image/label count mismatch");
  d.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    char c;
    lab.read(&c, 1);
    if (!lab)
      throw std::runtime_error("load_idx: truncated file " + labels_path +
                               " at byte " + std::to_string(loff));
    ++loff;
    d.labels[i] = static_cast<unsigned char>(c);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.k = max_label + 1;
  return d;
}

}  // namespace balcal::data
