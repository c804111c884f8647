#include "metflow/density.hpp"

#include <algorithm>
#include <cmath>

namespace metflow::density {

namespace {
double logsumexp2(double a, double b) {
  if (std::isinf(a) && a < 0) return b;
  if (std::isinf(b) && b < 0) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace

double one_step_logpdf(const PriorModel& prior, const flows::FlowStack& stack, int k,
                       const ParamTree& params, const Vec* u, const Vec& z,
                       const targets::TargetModel& target, const kernels::DirectionDist& nu,
                       kernels::RatioFamily family, int v) {
  flows::ParamsRef<double> p{&params};
  auto [pre, inv_lj] = flows::step_apply(stack, k, p, z, -v, u);
  const auto ev_pre = kernels::metflow_proposal(target, stack, k, p, pre, v, nu, family, u);
  const double accepted =
      ev_pre.log_alpha + prior_logpdf(prior, p, pre) + inv_lj;
  const auto ev_here = kernels::metflow_proposal(target, stack, k, p, z, v, nu, family, u);
  double rejected;
  if (ev_here.log_alpha >= 0.0)
    rejected = -std::numeric_limits<double>::infinity();
  else
    rejected = log1mexp(ev_here.log_alpha) + prior_logpdf(prior, p, z);
  return logsumexp2(accepted, rejected);
}

double marginal_logpdf(const PriorModel& prior, const flows::FlowStack& stack,
                       const ParamTree& params, const std::vector<Vec>* u_list,
                       const kernels::DirectionDist& nu, const Vec& z,
                       const targets::TargetModel& target, kernels::RatioFamily family) {
  const int K = stack.K;
  if (K > kMaxEnumerationSteps)
    throw CapacityError("marginal_logpdf: K too large for enumeration; "
                        "compare against a Monte-Carlo histogram instead");
  flows::ParamsRef<double> p{&params};
  std::vector<int> a(K), v(K);
  std::vector<double> terms;
  terms.reserve(1L << (2 * K));
  // lexicographic over (a, v) patterns: 2 bits per step
  const long n_patterns = 1L << (2 * K);
  for (long code = 0; code < n_patterns; ++code) {
    double log_nu = 0.0;
    for (int k = 0; k < K; ++k) {
      a[k] = static_cast<int>((code >> (2 * k)) & 1);
      v[k] = ((code >> (2 * k + 1)) & 1) ? +1 : -1;
      const double pk = nu.prob_plus(k, &params);
      const double pv = v[k] == 1 ? pk : 1.0 - pk;
      if (pv <= 0.0) {
        log_nu = -std::numeric_limits<double>::infinity();
        break;
      }
      log_nu += std::log(pv);
    }
    if (std::isinf(log_nu)) continue;
    const double comp =
        component_logpdf(prior, stack, p, u_list, z, a, v, target, nu, family);
    terms.push_back(log_nu + comp);
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : terms) mx = std::max(mx, t);
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace metflow::density
