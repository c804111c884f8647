#include "metflow/elbo.hpp"

#include <cmath>

namespace metflow::elbo {

namespace {
std::vector<VecX<grad::Var>> lift_noise(const std::vector<Vec>& u) {
  std::vector<VecX<grad::Var>> out;
  out.reserve(u.size());
  for (const Vec& ui : u) {
    VecX<grad::Var> v(ui.size());
    for (Eigen::Index i = 0; i < ui.size(); ++i) v[i] = grad::Var(ui[i]);
    out.push_back(std::move(v));
  }
  return out;
}
}  // namespace

Trajectory simulate_trajectory(RngStream& rng, const ModelRefs& model,
                               const ParamTree& params, const std::vector<Vec>* fixed_u) {
  const auto& stack = *model.stack;
  const auto& prior = *model.prior;
  flows::ParamsRef<double> p{&params};
  Trajectory traj;
  traj.y = rng.normal_vec(prior.dim);
  if (stack.noise_dim > 0) {
    if (fixed_u) {
      if (static_cast<int>(fixed_u->size()) != stack.K)
        throw ShapeError("simulate_trajectory: fixed noise list length must equal K");
      traj.u = *fixed_u;
    } else {
      for (int k = 0; k < stack.K; ++k) traj.u.push_back(rng.normal_vec(stack.noise_dim));
    }
  }
  Vec z = density::prior_transform(prior, p, traj.y);
  traj.log_prior_at_start = density::prior_logpdf(prior, p, z);
  traj.states.push_back(z);
  for (int k = 0; k < stack.K; ++k) {
    const int v = rng.rademacher(model.nu->prob_plus(k, &params));
    const Vec* u = stack.noise_dim > 0 ? &traj.u[k] : nullptr;
    const auto ev =
        kernels::metflow_proposal(*model.target, stack, k, p, z, v, *model.nu, model.family, u);
    if (std::isnan(ev.log_alpha))
      throw NumericalError("simulate_trajectory: NaN acceptance at step " + std::to_string(k));
    const int a = rng.uniform() < std::exp(ev.log_alpha) ? 1 : 0;
    traj.v.push_back(v);
    traj.a.push_back(a);
    traj.log_alpha_hat.push_back(ev.log_alpha);
    if (a == 1) {
      traj.log_alpha.push_back(ev.log_alpha);
      traj.log_jac_cum += ev.log_jac;
      z = ev.proposed;
    } else {
      traj.log_alpha.push_back(log1mexp(ev.log_alpha));
    }
    traj.states.push_back(z);
  }
  return traj;
}

double elbo_value(const Trajectory& traj, const ModelRefs& model, const InferenceFn& r,
                  const ParamTree& params) {
  flows::ParamsRef<double> p{&params};
  double log_q = traj.log_prior_at_start - traj.log_jac_cum;
  for (double la : traj.log_alpha) log_q += la;
  const double log_r = r.log_prob(traj.a, p);
  return model.target->log_density(traj.endpoint()) + log_r - log_q;
}

ParamTree grad_estimate(const Trajectory& traj, const ModelRefs& model, const InferenceFn& r,
                        const ParamTree& params) {
  using grad::Var;
  const auto& stack = *model.stack;
  const auto& prior = *model.prior;
  grad::Tape tape;
  grad::ParamVars pv(tape, params);
  flows::ParamsRef<Var> p{&pv};

  VecX<Var> y(prior.dim);
  for (int i = 0; i < prior.dim; ++i) y[i] = Var(traj.y[i]);
  const auto u_vars = lift_noise(traj.u);

  VecX<Var> z = density::prior_transform(prior, p, y);
  // log m0(z0) = log g(y) - sum(log_scale): only the scale part carries gradient
  const double log_g_y =
      -0.5 * prior.dim * std::log(2.0 * M_PI) - 0.5 * traj.y.squaredNorm();
  Var log_m0 = Var(log_g_y);
  {
    const VecX<Var> ls = p.vec(prior.log_scale_name);
    for (int i = 0; i < prior.dim; ++i) log_m0 -= ls[i];
  }

  Var ell_sum(0.0);    // sum of realized log acceptance factors (part of q)
  Var score_sum(0.0);  // same factors plus direction log-probs, for the score term
  Var cum_log_jac(0.0);
  for (int k = 0; k < stack.K; ++k) {
    const VecX<Var>* u = stack.noise_dim > 0 ? &u_vars[k] : nullptr;
    const auto ev = kernels::metflow_proposal(*model.target, stack, k, p, z, traj.v[k],
                                              *model.nu, model.family, u);
    const Var ell = traj.a[k] == 1 ? ev.log_alpha : log1mexp(ev.log_alpha);
    ell_sum += ell;
    score_sum += ell + model.nu->log_prob(k, traj.v[k], p);
    if (traj.a[k] == 1) {
      z = ev.proposed;
      cum_log_jac += ev.log_jac;
    }
  }

  const Var p_term = kernels::target_logpdf(*model.target, z);
  const Var r_term = r.log_prob(traj.a, p);
  const Var log_q = log_m0 - cum_log_jac + ell_sum;
  const Var objective_path = p_term + r_term - log_q;
  // score correction with the bracket value frozen as a constant weight
  const double weight = objective_path.value();
  const Var objective = objective_path + Var(weight) * score_sum;
  return pv.gradient(tape, objective);
}

ValueGrad nf_baseline_sample(RngStream& rng, const ModelRefs& model, const ParamTree& params,
                             const std::vector<Vec>* fixed_u) {
  using grad::Var;
  const auto& stack = *model.stack;
  const auto& prior = *model.prior;
  const Vec y = rng.normal_vec(prior.dim);
  std::vector<Vec> u;
  if (stack.noise_dim > 0) {
    if (fixed_u) {
      u = *fixed_u;
    } else {
      for (int k = 0; k < stack.K; ++k) u.push_back(rng.normal_vec(stack.noise_dim));
    }
  }

  grad::Tape tape;
  grad::ParamVars pv(tape, params);
  flows::ParamsRef<Var> p{&pv};
  VecX<Var> yv(prior.dim);
  for (int i = 0; i < prior.dim; ++i) yv[i] = Var(y[i]);
  const auto u_vars = lift_noise(u);

  VecX<Var> z = density::prior_transform(prior, p, yv);
  const double log_g_y = -0.5 * prior.dim * std::log(2.0 * M_PI) - 0.5 * y.squaredNorm();
  Var log_m0 = Var(log_g_y);
  {
    const VecX<Var> ls = p.vec(prior.log_scale_name);
    for (int i = 0; i < prior.dim; ++i) log_m0 -= ls[i];
  }
  Var cum_log_jac(0.0);
  for (int k = 0; k < stack.K; ++k) {
    const VecX<Var>* uk = stack.noise_dim > 0 ? &u_vars[k] : nullptr;
    auto [next, lj] = flows::step_forward(stack, k, p, z, uk);
    z = std::move(next);
    cum_log_jac += lj;
  }
  const Var objective = kernels::target_logpdf(*model.target, z) - (log_m0 - cum_log_jac);
  ValueGrad out{objective.value(), pv.gradient(tape, objective)};
  return out;
}

double nf_baseline_elbo(RngStream& rng, const ModelRefs& model, const ParamTree& params,
                        const std::vector<Vec>* fixed_u) {
  const auto& stack = *model.stack;
  const auto& prior = *model.prior;
  flows::ParamsRef<double> p{&params};
  const Vec y = rng.normal_vec(prior.dim);
  std::vector<Vec> u;
  if (stack.noise_dim > 0) {
    if (fixed_u) {
      u = *fixed_u;
    } else {
      for (int k = 0; k < stack.K; ++k) u.push_back(rng.normal_vec(stack.noise_dim));
    }
  }
  Vec z = density::prior_transform(prior, p, y);
  const double log_m0 = density::prior_logpdf(prior, p, z);
  double cum_log_jac = 0.0;
  for (int k = 0; k < stack.K; ++k) {
    const Vec* uk = stack.noise_dim > 0 ? &u[k] : nullptr;
    auto [next, lj] = flows::step_forward(stack, k, p, z, uk);
    z = std::move(next);
    cum_log_jac += lj;
  }
  return model.target->log_density(z) - (log_m0 - cum_log_jac);
}

}  // namespace elbo
