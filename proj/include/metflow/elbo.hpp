#pragma once

#include <string>
#include <vector>

#include "metflow/density.hpp"

namespace metflow::elbo {

// Inference function r(a_{1:K} | z, u): uniform (constant 2^{-K}) or a
// factorized Bernoulli with trainable logits.
struct InferenceFn {
  enum class Kind { Uniform, FactorizedBernoulli };
  Kind kind = Kind::Uniform;
  int K = 0;
  std::string logits_name = "r.logits";

  static InferenceFn uniform(int K) { return InferenceFn{Kind::Uniform, K}; }
  static InferenceFn bernoulli(int K, const std::string& name = "r.logits") {
    return InferenceFn{Kind::FactorizedBernoulli, K, name};
  }

  template <typename S>
  S log_prob(const std::vector<int>& a, const flows::ParamsRef<S>& p) const {
    if (static_cast<int>(a.size()) != K) throw ShapeError("InferenceFn: length mismatch");
    if (kind == Kind::Uniform) return S(-K * std::log(2.0));
    const VecX<S> beta = p.vec(logits_name);
    S out = S(0.0);
    for (int k = 0; k < K; ++k)
      out += a[k] == 1 ? -softplus(-beta[k]) : -softplus(beta[k]);
    return out;
  }
};

// Full record of one reparameterized forward simulation.
struct Trajectory {
  Vec y;                             // start draw, y ~ N(0, I)
  std::vector<Vec> u;                // innovation noise per step (empty if none)
  std::vector<int> v;                // directions
  std::vector<int> a;                // accept bits
  std::vector<Vec> states;           // z_0 .. z_K
  std::vector<double> log_alpha_hat; // log alpha_hat(z_{k-1}, v_k)
  std::vector<double> log_alpha;     // realized factor: a log(a_hat) + (1-a) log(1-a_hat)
  double log_jac_cum = 0.0;          // forward log-Jacobian over accepted steps
  double log_prior_at_start = 0.0;   // log m0(z_0)

  const Vec& endpoint() const { return states.back(); }
  int K() const { return static_cast<int>(a.size()); }
};

struct ModelRefs {
  const density::PriorModel* prior;
  const flows::FlowStack* stack;
  const kernels::DirectionDist* nu;
  const targets::TargetModel* target;
  kernels::RatioFamily family;
};

// Algorithm: y ~ N(0,I), z0 = V(y); per step sample direction and accept bit
// from the current acceptance probability and advance.
// fixed_u: pre-drawn innovation noise (pseudo-random setting); when null and
// the stack consumes noise, fresh noise is drawn from rng.
Trajectory simulate_trajectory(RngStream& rng, const ModelRefs& model,
                               const ParamTree& params,
                               const std::vector<Vec>* fixed_u = nullptr);

// Single-sample estimate of the auxiliary ELBO:
//   log pi~(z_K) + log r(a) - [log m0(z_0) - logJ_fwd + sum of log alpha factors]
double elbo_value(const Trajectory& traj, const ModelRefs& model, const InferenceFn& r,
                  const ParamTree& params);

// Unbiased single-trajectory gradient: pathwise terms plus the score-function
// correction (p + r - q) * (S_a + S_p).
ParamTree grad_estimate(const Trajectory& traj, const ModelRefs& model, const InferenceFn& r,
                        const ParamTree& params);

// Plain normalizing-flow ELBO baseline: all steps applied, no accept/reject.
double nf_baseline_elbo(RngStream& rng, const ModelRefs& model, const ParamTree& params,
                        const std::vector<Vec>* fixed_u = nullptr);

struct ValueGrad {
  double value;
  ParamTree grad;
};

ValueGrad nf_baseline_sample(RngStream& rng, const ModelRefs& model, const ParamTree& params,
                             const std::vector<Vec>* fixed_u = nullptr);

}  // namespace metflow::elbo
