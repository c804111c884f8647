#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "metflow/flows.hpp"
#include "metflow/targets.hpp"

namespace metflow::kernels {

// log pi~(z) as a tape node: the value comes from the target's log_density and
// the local partials from its analytic gradient, so target internals never
// need to be recorded.
inline double target_logpdf(const targets::TargetModel& t, const Vec& z) {
  return t.log_density(z);
}

inline grad::Var target_logpdf(const targets::TargetModel& t, const VecX<grad::Var>& z) {
  Vec zv(z.size());
  grad::Tape* tape = nullptr;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zv[i] = z[i].value();
    if (!tape) tape = z[i].tape();
  }
  const double lp = t.log_density(zv);
  if (!tape) return grad::Var(lp);
  const Vec g = t.grad_log_density(zv);
  std::vector<std::pair<int, double>> args;
  args.reserve(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const grad::Var zi = tape->lift(z[i]);
    args.emplace_back(zi.node(), g[i]);
  }
  return tape->record(lp, args);
}

enum class RatioFamily { MetropolisHastings, Barker };

// phi(t) for t >= 0; both families satisfy t*phi(1/t) = phi(t), phi(inf) = 1.
double accept_ratio(RatioFamily family, double t);

// log phi(e^{log_t}); works on +-inf log-ratios.
template <typename S>
S log_accept_ratio(RatioFamily family, const S& log_t) {
  if (family == RatioFamily::MetropolisHastings) return min_const(0.0, log_t);
  return log_t - softplus(log_t);  // Barker: t / (1 + t)
}

// Per-step direction distribution on {-1,+1}: fixed probabilities or
// trainable through logits stored in the ParamTree.
struct DirectionDist {
  int K = 0;
  bool trainable = false;
  std::vector<double> probs;           // P(v = +1) per step (fixed mode)
  std::string param_name = "nu.logits";  // trainable mode: probs = sigmoid(logits)

  static DirectionDist uniform(int K) {
    DirectionDist d;
    d.K = K;
    d.probs.assign(K, 0.5);
    return d;
  }

  static DirectionDist trained(int K, const std::string& name = "nu.logits") {
    DirectionDist d;
    d.K = K;
    d.trainable = true;
    d.param_name = name;
    return d;
  }

  double prob_plus(int k, const ParamTree* params = nullptr) const {
    if (!trainable) return probs.at(k);
    if (!params) throw ConfigError("DirectionDist: trainable but no params given");
    return sigmoid(params->vec(param_name)[k]);
  }

  template <typename S>
  S log_prob(int k, int v, const flows::ParamsRef<S>& p) const {
    if (v != 1 && v != -1) throw DomainError("DirectionDist: v must be +1 or -1");
    if (!trainable) {
      const double pk = probs.at(k);
      const double pv = v == 1 ? pk : 1.0 - pk;
      if (pv <= 0.0) throw DomainError("DirectionDist: zero-probability direction");
      return S(std::log(pv));
    }
    const S beta = p.vec(param_name)[k];
    // log sigmoid(b) = -softplus(-b), log(1 - sigmoid(b)) = -softplus(b)
    return v == 1 ? -softplus(-beta) : -softplus(beta);
  }
};

// One MetFlow step outcome. a = 0 leaves the state unchanged.
struct StepOutcome {
  Vec z_next;
  int a = 0;
  int v = +1;
  double log_alpha = 0.0;  // log acceptance probability at (z, v)
  double log_jac = 0.0;    // signed log-Jacobian of the applied map (0 if rejected)
};

template <typename S>
struct ProposalEval {
  S log_alpha;       // log alpha_hat(z, v)
  S log_ratio;       // log t fed to the ratio family
  VecX<S> proposed;  // T^v(z)
  S log_jac;         // log J_{T^v}(z)
};

// alpha_hat(z,v) = phi( pi(T^v z) nu(-v) J_{T^v}(z) / (pi(z) nu(v)) )
template <typename S>
ProposalEval<S> metflow_proposal(const targets::TargetModel& target,
                                 const flows::FlowStack& stack, int k,
                                 const flows::ParamsRef<S>& p, const VecX<S>& z, int v,
                                 const DirectionDist& nu, RatioFamily family,
                                 const VecX<S>* u = nullptr) {
  ProposalEval<S> ev;
  auto [prop, lj] = flows::step_apply(stack, k, p, z, v, u);
  ev.proposed = std::move(prop);
  ev.log_jac = lj;
  const S lp_cur = target_logpdf(target, z);
  const S lp_prop = target_logpdf(target, ev.proposed);
  ev.log_ratio = lp_prop - lp_cur + lj + nu.log_prob(k, -v, p) - nu.log_prob(k, v, p);
  ev.log_alpha = log_accept_ratio(family, ev.log_ratio);
  return ev;
}

double metflow_accept_prob(const targets::TargetModel& target, const flows::FlowStack& stack,
                           int k, const ParamTree& params, const Vec& z, int v,
                           const DirectionDist& nu, RatioFamily family,
                           const Vec* u = nullptr);

StepOutcome metflow_step(RngStream& rng, const targets::TargetModel& target,
                         const flows::FlowStack& stack, int k, const ParamTree& params,
                         const Vec& z, const DirectionDist& nu, RatioFamily family,
                         const Vec* u = nullptr);

// Classical kernels ---------------------------------------------------------

StepOutcome rwm_step(RngStream& rng, const targets::TargetModel& target, const Mat& cov_root,
                     const Vec& z);

Vec mala_forward(const targets::TargetModel& target, double gamma, const Vec& z, const Vec& u);

// Fixed-point inverse of the MALA proposal map (requires gamma * L <= 1/2).
Vec mala_inverse(const targets::TargetModel& target, double gamma, const Vec& y, const Vec& u,
                 double tol = 1e-10, int max_iter = 200);

std::pair<Vec, Vec> leapfrog(const targets::TargetModel& target, double gamma, int n_steps,
                             const Vec& q, const Vec& p);

struct HmcOutcome {
  Vec q;
  Vec p;
  int a = 0;
  double log_alpha = 0.0;
};

// Momentum-flip HMC proposal T(q,p) = LF(q,-p); an involution with unit
// Jacobian, accepted with phi(exp(-dH)).
HmcOutcome hmc_flip_step(RngStream& rng, const targets::TargetModel& target, double gamma,
                         int n_steps, const Vec& q, const Vec& p,
                         RatioFamily family = RatioFamily::MetropolisHastings);

Vec momentum_refresh(RngStream& rng, double a_coef, const Vec& p);

// Two-sample detailed-balance check on a box partition: compares the joint
// (z, z') occupancy matrix against its transpose.
struct BalanceReport {
  double max_asym = 0.0;         // max |P(A,B) - P(B,A)|
  double max_sigma_units = 0.0;  // same, in binomial standard errors
  bool pass = false;
};

using OneStepKernel = std::function<Vec(RngStream&, const Vec&)>;

BalanceReport detailed_balance_check(const OneStepKernel& kernel,
                                     const targets::TargetModel& target, int n_samples,
                                     int grid_per_dim, double box_lo, double box_hi,
                                     double tol_sigma_units, RngStream& rng);

}  // namespace metflow::kernels
