#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace balcal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Seeded RNG used by every stochastic component. One stream per purpose
// (data, init, mixup, basis, ...) so ablations can vary one source at a time.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return uni_(gen_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uni_(gen_); }
  double normal() { return norm_(gen_); }
  double gamma(double shape) {
    std::gamma_distribution<double> g(shape, 1.0);
    return g(gen_);
  }
  // Beta(a,a) via two gamma draws.
  double beta(double a) {
    double g1 = gamma(a);
    double g2 = gamma(a);
    return g1 / (g1 + g2);
  }
  std::uint64_t next_index(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> uni_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

// Stream offsets applied to the experiment's top-level seed.
namespace seed_stream {
constexpr std::uint64_t kData = 1;
constexpr std::uint64_t kInit = 2;
constexpr std::uint64_t kMixup = 3;
constexpr std::uint64_t kBasis = 4;
constexpr std::uint64_t kSplit = 5;
constexpr std::uint64_t kLabelNoise = 6;
constexpr std::uint64_t kCorrupt = 7;
constexpr std::uint64_t kTestDraw = 8;
constexpr std::uint64_t kShuffle = 9;
}  // namespace seed_stream

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 step keeps the derived streams decorrelated.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace balcal
