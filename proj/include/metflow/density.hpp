#pragma once

#include <limits>
#include <string>
#include <vector>

#include "metflow/kernels.hpp"

namespace metflow::density {

// Diagonal reparameterizable Gaussian start distribution:
// V(y) = mu + diag(exp(log_scale)) y, so log m0(V(y)) + sum(log_scale) = log g(y).
struct PriorModel {
  int dim = 0;
  std::string mu_name = "prior.mu";
  std::string log_scale_name = "prior.log_scale";

  static PriorModel standard(int dim) { return PriorModel{dim}; }

  void init_params(ParamTree& params, const Vec& mu, const Vec& log_scale) const {
    if (mu.size() != dim || log_scale.size() != dim)
      throw ShapeError("PriorModel: init size mismatch");
    params.set(mu_name, mu);
    params.set(log_scale_name, log_scale);
  }

  void init_params(ParamTree& params, double log_scale = 0.0) const {
    init_params(params, Vec::Zero(dim), Vec::Constant(dim, log_scale));
  }
};

template <typename S>
VecX<S> prior_transform(const PriorModel& prior, const flows::ParamsRef<S>& p,
                        const VecX<S>& y) {
  using std::exp;
  using grad::exp;
  const VecX<S> mu = p.vec(prior.mu_name);
  const VecX<S> ls = p.vec(prior.log_scale_name);
  VecX<S> z(prior.dim);
  for (int i = 0; i < prior.dim; ++i) z[i] = mu[i] + exp(ls[i]) * y[i];
  return z;
}

template <typename S>
S prior_logpdf(const PriorModel& prior, const flows::ParamsRef<S>& p, const VecX<S>& z) {
  using std::exp;
  using grad::exp;
  const VecX<S> mu = p.vec(prior.mu_name);
  const VecX<S> ls = p.vec(prior.log_scale_name);
  S out = S(-0.5 * prior.dim * std::log(2.0 * M_PI));
  for (int i = 0; i < prior.dim; ++i) {
    const S w = (z[i] - mu[i]) * exp(-ls[i]);
    out = out - ls[i] - S(0.5) * w * w;
  }
  return out;
}

inline constexpr int kMaxEnumerationSteps = 12;

// Density contribution of one accept/direction pattern (the path component):
// accepted steps are inverted in reverse order, with the acceptance factors
// evaluated at the reconstructed intermediate points.
template <typename S>
S component_logpdf(const PriorModel& prior, const flows::FlowStack& stack,
                   const flows::ParamsRef<S>& p, const std::vector<VecX<S>>* u_list,
                   const VecX<S>& z, const std::vector<int>& a, const std::vector<int>& v,
                   const targets::TargetModel& target, const kernels::DirectionDist& nu,
                   kernels::RatioFamily family) {
  const int K = stack.K;
  if (static_cast<int>(a.size()) != K || static_cast<int>(v.size()) != K)
    throw ShapeError("component_logpdf: pattern length must equal K");
  VecX<S> w = z;
  S inv_log_jac = S(0.0);
  S log_weight = S(0.0);
  for (int i = K - 1; i >= 0; --i) {
    const VecX<S>* u = u_list ? &(*u_list)[i] : nullptr;
    if (a[i] == 1) {
      auto [prev, lj] = flows::step_apply(stack, i, p, w, -v[i], u);
      w = std::move(prev);
      inv_log_jac += lj;
    }
    const auto ev = kernels::metflow_proposal(target, stack, i, p, w, v[i], nu, family, u);
    if (a[i] == 1) {
      log_weight += ev.log_alpha;
    } else {
      if (grad::value_of(ev.log_alpha) >= 0.0)
        return S(-std::numeric_limits<double>::infinity());  // rejection has zero mass
      log_weight += log1mexp(ev.log_alpha);
    }
  }
  return prior_logpdf(prior, p, w) + inv_log_jac + log_weight;
}

// One-step conditional density (single kernel step at fixed direction v):
// alpha(T^-1 z) m0(T^-1 z) J_{T^-1}(z) + (1 - alpha(z)) m0(z).
double one_step_logpdf(const PriorModel& prior, const flows::FlowStack& stack, int k,
                       const ParamTree& params, const Vec* u, const Vec& z,
                       const targets::TargetModel& target, const kernels::DirectionDist& nu,
                       kernels::RatioFamily family, int v = +1);

// Exact marginal by enumeration over all (a_{1:K}, v_{1:K}) patterns, mixed
// over the direction distribution. 4^K terms; K is capped.
double marginal_logpdf(const PriorModel& prior, const flows::FlowStack& stack,
                       const ParamTree& params, const std::vector<Vec>* u_list,
                       const kernels::DirectionDist& nu, const Vec& z,
                       const targets::TargetModel& target, kernels::RatioFamily family);

}  // namespace metflow::density
