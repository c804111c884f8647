#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace metflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg, long node = -1)
      : std::runtime_error(msg), node_id(node) {}
  long node_id;
};

struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg, double res)
      : std::runtime_error(msg), residual(res) {}
  double residual;
};

// Deterministic random stream. Streams are derived from a root seed and a
// stream index so independent chains/trajectories can be generated in any
// order (or concurrently) with reproducible results.
class RngStream {
 public:
  explicit RngStream(std::uint64_t root_seed, std::uint64_t stream = 0)
      : gen_(mix(root_seed, stream)) {}

  // uniform on [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // Box-Muller; u1 bounded away from 0
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  Vec normal_vec(int n) {
    Vec out(n);
    for (int i = 0; i < n; ++i) out[i] = normal();
    return out;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // +1 with probability p_plus, else -1
  int rademacher(double p_plus) { return bernoulli(p_plus) ? +1 : -1; }

  int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over (seed, stream) so nearby indices decorrelate
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
  }

  std::mt19937_64 gen_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace metflow
