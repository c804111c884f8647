#include "metflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metflow::sampler {

SampleSet sample(const elbo::ModelRefs& model, const ParamTree& params,
                 const std::vector<Vec>& trained_u, train::NoiseSetting setting, int n,
                 int extra_kernels, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample: need n >= 1");
  if (extra_kernels < 1) throw ConfigError("sample: extra_kernels must be >= 1");
  if (extra_kernels > 1 && setting == train::NoiseSetting::Deterministic)
    throw ConfigError("sample: the deterministic setting cannot mint new kernels");
  const auto& stack = *model.stack;
  const std::vector<Vec>* fixed_u =
      setting == train::NoiseSetting::PseudoRandom ? &trained_u : nullptr;

  SampleSet out;
  out.seed = seed;
  out.kernel_count = extra_kernels * stack.K;
  out.points.resize(n, stack.dim);
  for (int c = 0; c < n; ++c) {
    RngStream rng(seed, 1 + static_cast<std::uint64_t>(c));
    auto traj = elbo::simulate_trajectory(rng, model, params, fixed_u);
    Vec z = traj.endpoint();
    // fresh-noise kernel iterations; shared parameters, so step 0's nets are
    // every minted kernel
    for (int m = 1; m < extra_kernels; ++m) {
      for (int k = 0; k < stack.K; ++k) {
        const Vec u = rng.normal_vec(stack.noise_dim);
        const auto step = kernels::metflow_step(rng, *model.target, stack, 0, params, z,
                                                *model.nu, model.family, &u);
        z = step.z_next;
      }
    }
    out.points.row(c) = z.transpose();
  }
  return out;
}

SampleSet sample_baseline(const elbo::ModelRefs& model, const ParamTree& params,
                          const std::vector<Vec>& trained_u, train::NoiseSetting setting,
                          int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_baseline: need n >= 1");
  const auto& stack = *model.stack;
  const auto& prior = *model.prior;
  const flows::ParamsRef<double> p{&params};
  SampleSet out;
  out.seed = seed;
  out.kernel_count = stack.K;
  out.points.resize(n, stack.dim);
  for (int c = 0; c < n; ++c) {
    RngStream rng(seed, 1 + static_cast<std::uint64_t>(c));
    const Vec y = rng.normal_vec(prior.dim);
    std::vector<Vec> u;
    if (stack.noise_dim > 0) {
      if (setting == train::NoiseSetting::PseudoRandom) {
        u = trained_u;
      } else {
        for (int k = 0; k < stack.K; ++k) u.push_back(rng.normal_vec(stack.noise_dim));
      }
    }
    Vec z = density::prior_transform(prior, p, y);
    for (int k = 0; k < stack.K; ++k) {
      const Vec* uk = stack.noise_dim > 0 ? &u[k] : nullptr;
      z = flows::step_forward(stack, k, p, z, uk).first;
    }
    out.points.row(c) = z.transpose();
  }
  return out;
}

ModeReport mode_count(const Mat& points, const std::vector<Vec>& centers, double radius,
                      int min_hits) {
  if (radius <= 0.0) throw ConfigError("mode_count: radius must be positive");
  ModeReport rep;
  rep.occupancy.assign(centers.size(), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec z = points.row(i).transpose();
    for (std::size_t m = 0; m < centers.size(); ++m)
      if ((z - centers[m]).norm() <= radius) rep.occupancy[m] += 1;
  }
  for (int occ : rep.occupancy)
    if (occ >= min_hits) rep.modes_retrieved += 1;
  return rep;
}

namespace {

double energy_statistic(const Mat& x, const Mat& y) {
  const Eigen::Index n = x.rows(), m = y.rows();
  double exy = 0.0, exx = 0.0, eyy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) exy += (x.row(i) - y.row(j)).norm();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) exx += (x.row(i) - x.row(j)).norm();
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) eyy += (y.row(i) - y.row(j)).norm();
  return 2.0 * exy / (n * m) - exx / (n * n) - eyy / (m * m);
}

}  // namespace

InvarianceReport invariance_test(const OneStepKernel& kernel,
                                 const targets::TargetModel& target, int n,
                                 std::uint64_t seed, int n_permutations,
                                 double p_threshold) {
  if (!target.has_exact_sampler())
    throw ConfigError("invariance_test: target needs an exact sampler");
  RngStream rng(seed, 0);
  const int d = target.dim;
  Mat pushed(n, d), fresh(n, d);
  for (int i = 0; i < n; ++i) {
    const Vec z = target.exact_sampler(rng);
    pushed.row(i) = kernel(rng, z).transpose();
    fresh.row(i) = target.exact_sampler(rng).transpose();
  }

  InvarianceReport rep;
  // componentwise mean comparison in combined standard errors
  for (int j = 0; j < d; ++j) {
    const double m1 = pushed.col(j).mean();
    const double m2 = fresh.col(j).mean();
    const double v1 = (pushed.col(j).array() - m1).square().sum() / (n - 1);
    const double v2 = (fresh.col(j).array() - m2).square().sum() / (n - 1);
    const double se = std::sqrt(v1 / n + v2 / n);
    rep.max_mean_sigma = std::max(rep.max_mean_sigma, std::abs(m1 - m2) / se);
  }

  rep.energy_stat = energy_statistic(pushed, fresh);
  // permutation null: pool and reshuffle labels
  Mat pool(2 * n, d);
  pool.topRows(n) = pushed;
  pool.bottomRows(n) = fresh;
  std::vector<int> idx(2 * n);
  std::iota(idx.begin(), idx.end(), 0);
  int ge = 0;
  for (int p = 0; p < n_permutations; ++p) {
    for (int i = 2 * n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    Mat a(n, d), b(n, d);
    for (int i = 0; i < n; ++i) {
      a.row(i) = pool.row(idx[i]);
      b.row(i) = pool.row(idx[n + i]);
    }
    if (energy_statistic(a, b) >= rep.energy_stat) ++ge;
  }
  rep.p_value = (ge + 1.0) / (n_permutations + 1.0);
  rep.pass = rep.p_value > p_threshold && rep.max_mean_sigma <= 3.0;
  return rep;
}

KsResult marginal_ks(const Mat& points, int coord, const std::function<double(double)>& cdf) {
  const Eigen::Index n = points.rows();
  std::vector<double> x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = points(i, coord);
  std::sort(x.begin(), x.end());
  double d = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double f = cdf(x[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  KsResult res;
  res.statistic = d;
  const double rn = std::sqrt(static_cast<double>(n));
  const double lambda = (rn + 0.12 + 0.11 / rn) * d;
  // asymptotic Kolmogorov survival function
  double p = 0.0;
  for (int j = 1; j <= 100; ++j)
    p += 2.0 * (j % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
  res.p_value = std::min(1.0, std::max(0.0, p));
  return res;
}

}  // namespace metflow::sampler
