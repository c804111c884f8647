#include "metflow/kernels.hpp"

#include <Eigen/LU>
#include <cmath>

namespace metflow::kernels {

double accept_ratio(RatioFamily family, double t) {
  if (t < 0.0) throw DomainError("accept_ratio: t must be nonnegative");
  if (std::isinf(t)) return 1.0;
  if (family == RatioFamily::MetropolisHastings) return std::min(1.0, t);
  return t / (1.0 + t);
}

double metflow_accept_prob(const targets::TargetModel& target, const flows::FlowStack& stack,
                           int k, const ParamTree& params, const Vec& z, int v,
                           const DirectionDist& nu, RatioFamily family, const Vec* u) {
  const double pv = v == 1 ? nu.prob_plus(k, &params) : 1.0 - nu.prob_plus(k, &params);
  if (pv <= 0.0) throw DomainError("metflow_accept_prob: nu(v) = 0");
  flows::ParamsRef<double> p{&params};
  const auto ev = metflow_proposal(target, stack, k, p, z, v, nu, family, u);
  return std::exp(ev.log_alpha);
}

StepOutcome metflow_step(RngStream& rng, const targets::TargetModel& target,
                         const flows::FlowStack& stack, int k, const ParamTree& params,
                         const Vec& z, const DirectionDist& nu, RatioFamily family,
                         const Vec* u) {
  flows::ParamsRef<double> p{&params};
  StepOutcome out;
  out.v = rng.rademacher(nu.prob_plus(k, &params));
  const auto ev = metflow_proposal(target, stack, k, p, z, out.v, nu, family, u);
  out.log_alpha = ev.log_alpha;
  if (std::isnan(ev.log_alpha)) throw NumericalError("metflow_step: NaN acceptance");
  if (rng.uniform() < std::exp(ev.log_alpha)) {
    out.a = 1;
    out.z_next = ev.proposed;
    out.log_jac = ev.log_jac;
  } else {
    out.a = 0;
    out.z_next = z;
    out.log_jac = 0.0;
  }
  return out;
}

StepOutcome rwm_step(RngStream& rng, const targets::TargetModel& target, const Mat& cov_root,
                     const Vec& z) {
  if (cov_root.rows() != target.dim || cov_root.cols() != target.dim)
    throw ConfigError("rwm_step: cov_root must be D x D");
  Eigen::FullPivLU<Mat> lu(cov_root);
  if (!lu.isInvertible()) throw ConfigError("rwm_step: singular covariance root");
  const Vec u = rng.normal_vec(target.dim);
  const Vec prop = z + cov_root * u;
  StepOutcome out;
  out.v = +1;
  out.log_alpha = std::min(0.0, target.log_density(prop) - target.log_density(z));
  if (rng.uniform() < std::exp(out.log_alpha)) {
    out.a = 1;
    out.z_next = prop;
  } else {
    out.a = 0;
    out.z_next = z;
  }
  out.log_jac = 0.0;
  return out;
}

Vec mala_forward(const targets::TargetModel& target, double gamma, const Vec& z, const Vec& u) {
  return z + gamma * target.grad_log_density(z) + std::sqrt(2.0 * gamma) * u;
}

Vec mala_inverse(const targets::TargetModel& target, double gamma, const Vec& y, const Vec& u,
                 double tol, int max_iter) {
  const Vec base = y - std::sqrt(2.0 * gamma) * u;
  Vec z = base;
  for (int it = 0; it < max_iter; ++it) {
    z = base - gamma * target.grad_log_density(z);
    const double res = (mala_forward(target, gamma, z, u) - y).lpNorm<Eigen::Infinity>();
    if (res <= tol) return z;
  }
  const double res = (mala_forward(target, gamma, z, u) - y).lpNorm<Eigen::Infinity>();
  throw ConvergenceError("mala_inverse: no convergence", res);
}

std::pair<Vec, Vec> leapfrog(const targets::TargetModel& target, double gamma, int n_steps,
                             const Vec& q, const Vec& p) {
  if (gamma < 0.0 || n_steps < 1) throw ConfigError("leapfrog: need gamma >= 0, n_steps >= 1");
  Vec qc = q, pc = p;
  for (int i = 0; i < n_steps; ++i) {
    Vec ph = pc + 0.5 * gamma * target.grad_log_density(qc);  // grad U = -grad log pi
    qc += gamma * ph;
    pc = ph + 0.5 * gamma * target.grad_log_density(qc);
  }
  return {qc, pc};
}

HmcOutcome hmc_flip_step(RngStream& rng, const targets::TargetModel& target, double gamma,
                         int n_steps, const Vec& q, const Vec& p, RatioFamily family) {
  auto [qn, pn] = leapfrog(target, gamma, n_steps, q, Vec(-p));
  const double h_cur = -target.log_density(q) + 0.5 * p.squaredNorm();
  const double h_prop = -target.log_density(qn) + 0.5 * pn.squaredNorm();
  HmcOutcome out;
  const double log_t = h_cur - h_prop;
  out.log_alpha = log_accept_ratio(family, log_t);
  if (rng.uniform() < std::exp(out.log_alpha)) {
    out.a = 1;
    out.q = qn;
    out.p = pn;
  } else {
    out.a = 0;
    out.q = q;
    out.p = p;
  }
  return out;
}

Vec momentum_refresh(RngStream& rng, double a_coef, const Vec& p) {
  if (a_coef <= 0.0 || a_coef >= 1.0)
    throw ConfigError("momentum_refresh: a must be in (0, 1)");
  const Vec u = rng.normal_vec(static_cast<int>(p.size()));
  return a_coef * p + std::sqrt(1.0 - a_coef * a_coef) * u;
}

BalanceReport detailed_balance_check(const OneStepKernel& kernel,
                                     const targets::TargetModel& target, int n_samples,
                                     int grid_per_dim, double box_lo, double box_hi,
                                     double tol_sigma_units, RngStream& rng) {
  if (!target.has_exact_sampler())
    throw ConfigError("detailed_balance_check: target needs an exact sampler");
  const int dim = target.dim;
  const double width = (box_hi - box_lo) / grid_per_dim;
  auto box_of = [&](const Vec& z) {
    long idx = 0;
    for (int d = 0; d < dim; ++d) {
      double c = (z[d] - box_lo) / width;
      long cell = static_cast<long>(std::floor(c));
      cell = std::max(0L, std::min<long>(grid_per_dim - 1, cell));
      idx = idx * grid_per_dim + cell;
    }
    return idx;
  };
  long n_boxes = 1;
  for (int d = 0; d < dim; ++d) n_boxes *= grid_per_dim;

  Mat joint = Mat::Zero(n_boxes, n_boxes);
  for (int i = 0; i < n_samples; ++i) {
    const Vec z = target.exact_sampler(rng);
    const Vec zp = kernel(rng, z);
    joint(box_of(z), box_of(zp)) += 1.0;
  }
  joint /= static_cast<double>(n_samples);

  BalanceReport rep;
  for (long i = 0; i < n_boxes; ++i) {
    for (long j = i + 1; j < n_boxes; ++j) {
      const double diff = std::abs(joint(i, j) - joint(j, i));
      // variance of p_ij - p_ji under multinomial sampling
      const double var =
          (joint(i, j) + joint(j, i) - std::pow(joint(i, j) - joint(j, i), 2)) / n_samples;
      const double se = std::sqrt(std::max(var, 1e-300));
      rep.max_asym = std::max(rep.max_asym, diff);
      if (joint(i, j) + joint(j, i) > 5.0 / n_samples)
        rep.max_sigma_units = std::max(rep.max_sigma_units, diff / se);
    }
  }
  rep.pass = rep.max_sigma_units <= tol_sigma_units;
  return rep;
}

}  // namespace metflow::kernels
