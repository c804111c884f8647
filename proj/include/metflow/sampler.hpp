#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "metflow/train.hpp"

namespace metflow::sampler {

struct SampleSet {
  Mat points;  // N x D
  std::uint64_t seed = 0;
  int kernel_count = 0;  // total MetFlow kernels applied per chain (m * K)
};

// Independent chains: each runs the K trained steps, then (m-1)*K fresh-noise
// MetFlow kernels. Chain c uses rng stream 1 + c so the m = 1 endpoints
// coincide with training-time trajectory endpoints for the same stream.
SampleSet sample(const elbo::ModelRefs& model, const ParamTree& params,
                 const std::vector<Vec>& trained_u, train::NoiseSetting setting, int n,
                 int extra_kernels, std::uint64_t seed);

// Plain flow pushforward (no accept/reject): every step applied forward. Used
// for models trained with the normalizing-flow baseline objective.
SampleSet sample_baseline(const elbo::ModelRefs& model, const ParamTree& params,
                          const std::vector<Vec>& trained_u, train::NoiseSetting setting,
                          int n, std::uint64_t seed);

struct ModeReport {
  int modes_retrieved = 0;
  std::vector<int> occupancy;  // hits per mode ball
};

// A mode counts as retrieved iff at least min_hits samples fall in the ball
// of the given radius around its center.
ModeReport mode_count(const Mat& points, const std::vector<Vec>& centers, double radius,
                      int min_hits = 10);

struct InvarianceReport {
  bool pass = false;
  double energy_stat = 0.0;
  double p_value = 0.0;          // permutation p-value of the energy distance
  double max_mean_sigma = 0.0;   // worst componentwise mean shift, in std errors
};

using OneStepKernel = std::function<Vec(RngStream&, const Vec&)>;

// Pushes n exact target draws through one kernel step and compares against a
// fresh exact draw (moments + energy-distance permutation test).
InvarianceReport invariance_test(const OneStepKernel& kernel,
                                 const targets::TargetModel& target, int n,
                                 std::uint64_t seed, int n_permutations = 200,
                                 double p_threshold = 0.01);

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

// One-sample Kolmogorov-Smirnov test of one coordinate against an exact cdf.
KsResult marginal_ks(const Mat& points, int coord, const std::function<double(double)>& cdf);

}  // namespace metflow::sampler
