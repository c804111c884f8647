#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "metflow/common.hpp"

namespace metflow::targets {

// Unnormalized target density with gradient. An exact sampler is attached
// where one exists (mixtures, the funnel); it backs the invariance tests.
struct TargetModel {
  int dim = 0;
  std::function<double(const Vec&)> log_density;
  std::function<Vec(const Vec&)> grad_log_density;
  std::function<Vec(RngStream&)> exact_sampler;  // may be empty

  bool has_exact_sampler() const { return static_cast<bool>(exact_sampler); }
};

struct MixtureSpec {
  std::vector<Vec> centers;
  double sigma = 1.0;
  std::vector<double> weights;  // empty means equal weights
};

TargetModel gaussian_mixture(const MixtureSpec& spec);

// 2-D ring of 8 equal-weight unit-variance components at radius 8.
MixtureSpec ring8_spec(double radius = 8.0, double sigma = 1.0);

// Neal's funnel: z1 ~ N(0, sigma1^2), z2 | z1 ~ N(0, e^{z1}).
TargetModel neal_funnel(double sigma1 = 1.0);

// 8 equal-weight unit-variance Gaussians at distinct corners of {-c,+c}^d.
// d = 2 cannot host 8 distinct corners and falls back to the 8-mode ring.
TargetModel hypercube_mixture(int d, double half_width = 5.0);
std::vector<Vec> hypercube_centers(int d, double half_width = 5.0);

// Plug-in registry: targets constructible by name from a parameter vector.
using TargetFactory = std::function<TargetModel(const std::vector<double>&)>;
void register_target(const std::string& name, TargetFactory factory);
bool has_target(const std::string& name);
TargetModel make_target(const std::string& name, const std::vector<double>& params = {});
std::vector<std::string> registered_targets();

}  // namespace metflow::targets
