#include <doctest.h>

#include <cmath>

#include "metflow/sampler.hpp"

using namespace metflow;
using kernels::RatioFamily;
using train::NoiseSetting;

namespace {

struct Setup {
  targets::TargetModel target;
  density::PriorModel prior;
  flows::FlowStack stack;
  kernels::DirectionDist nu;
  ParamTree params;

  elbo::ModelRefs refs() const {
    return {&prior, &stack, &nu, &target, RatioFamily::MetropolisHastings};
  }
};

Setup make_setup(int K, int noise_dim, bool shared, double perturb, std::uint64_t seed) {
  Setup s{targets::gaussian_mixture(targets::ring8_spec(2.0, 1.0)),
          density::PriorModel::standard(2),
          flows::FlowStack::create(2, K, 2, 4, shared, noise_dim),
          kernels::DirectionDist::uniform(K),
          {}};
  RngStream rng(seed, 0);
  s.stack.init_params(s.params, rng);
  s.prior.init_params(s.params);
  if (perturb > 0.0) {
    Vec flat = s.params.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += perturb * rng.normal();
    s.params.unflatten(flat);
  }
  return s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("single-pass endpoints coincide with training trajectories per stream") {
  const auto s = make_setup(3, 2, true, 0.3, 1);
  std::vector<Vec> trained_u;
  RngStream setup(9, 0);
  for (int k = 0; k < 3; ++k) trained_u.push_back(setup.normal_vec(2));
  const auto set = sampler::sample(s.refs(), s.params, trained_u,
                                   NoiseSetting::PseudoRandom, 20, 1, 9);
  CHECK(set.kernel_count == 3);
  CHECK(set.points.rows() == 20);
  for (int c = 0; c < 20; ++c) {
    RngStream rng(9, 1 + static_cast<std::uint64_t>(c));
    const auto traj = elbo::simulate_trajectory(rng, s.refs(), s.params, &trained_u);
    CHECK((set.points.row(c).transpose() - traj.endpoint()).lpNorm<Eigen::Infinity>() ==
          0.0);
  }
}

TEST_CASE("sampling is deterministic in the seed and chains are independent streams") {
  const auto s = make_setup(2, 2, true, 0.3, 2);
  std::vector<Vec> trained_u = {Vec::Zero(2), Vec::Zero(2)};
  const auto a = sampler::sample(s.refs(), s.params, trained_u,
                                 NoiseSetting::PseudoRandom, 50, 3, 5);
  const auto b = sampler::sample(s.refs(), s.params, trained_u,
                                 NoiseSetting::PseudoRandom, 50, 3, 5);
  CHECK((a.points - b.points).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(a.kernel_count == 6);
  // a longer run keeps the shorter run's prefix chains intact
  const auto c = sampler::sample(s.refs(), s.params, trained_u,
                                 NoiseSetting::PseudoRandom, 80, 3, 5);
  CHECK((c.points.topRows(50) - a.points).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("identity flows on a matching target draw from the start distribution") {
  Setup s{targets::make_target("std_normal", {2}),
          density::PriorModel::standard(2),
          flows::FlowStack::create(2, 2, 2, 4, false, 0),
          kernels::DirectionDist::uniform(2),
          {}};
  RngStream rng(3, 0);
  s.stack.init_params(s.params, rng);
  s.prior.init_params(s.params);
  const auto set =
      sampler::sample(s.refs(), s.params, {}, NoiseSetting::Deterministic, 5000, 1, 4);
  // every step is the identity and always accepted: endpoints are z0 = y draws
  for (int c = 0; c < 5000; ++c) {
    RngStream cr(4, 1 + static_cast<std::uint64_t>(c));
    const Vec y = cr.normal_vec(2);
    CHECK((set.points.row(c).transpose() - y).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("sampling argument validation") {
  const auto s = make_setup(2, 0, false, 0.0, 5);
  CHECK_THROWS_AS(sampler::sample(s.refs(), s.params, {}, NoiseSetting::Deterministic, 0, 1, 1),
                  ConfigError);
  CHECK_THROWS_AS(sampler::sample(s.refs(), s.params, {}, NoiseSetting::Deterministic, 5, 0, 1),
                  ConfigError);
  // deterministic setting has no noise stream to mint fresh kernels from
  CHECK_THROWS_AS(sampler::sample(s.refs(), s.params, {}, NoiseSetting::Deterministic, 5, 2, 1),
                  ConfigError);
}

TEST_CASE("baseline sampling is the plain pushforward") {
  const auto s = make_setup(2, 2, true, 0.3, 6);
  std::vector<Vec> trained_u;
  RngStream setup(11, 0);
  for (int k = 0; k < 2; ++k) trained_u.push_back(setup.normal_vec(2));
  const auto set = sampler::sample_baseline(s.refs(), s.params, trained_u,
                                            NoiseSetting::PseudoRandom, 20, 11);
  const flows::ParamsRef<double> p{&s.params};
  for (int c = 0; c < 20; ++c) {
    RngStream rng(11, 1 + static_cast<std::uint64_t>(c));
    Vec z = density::prior_transform(s.prior, p, VecX<double>(rng.normal_vec(2)));
    for (int k = 0; k < 2; ++k) z = flows::step_forward(s.stack, k, p, z, &trained_u[k]).first;
    CHECK((set.points.row(c).transpose() - z).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("mode counting") {
  const auto centers = targets::hypercube_centers(2);  // 8-mode ring
  Mat pts(30, 2);
  for (int i = 0; i < 30; ++i) pts.row(i) = centers[0].transpose();  // all at one center
  const auto one = sampler::mode_count(pts, centers, 1.0);
  CHECK(one.modes_retrieved == 1);
  CHECK(one.occupancy[0] == 30);

  // monotone in the radius
  RngStream rng(7, 0);
  const auto target = targets::hypercube_mixture(2);
  Mat draws(2000, 2);
  for (int i = 0; i < 2000; ++i) draws.row(i) = target.exact_sampler(rng).transpose();
  int prev = 0;
  for (double radius : {0.5, 1.0, 2.0, 3.0}) {
    const auto rep = sampler::mode_count(draws, centers, radius);
    CHECK(rep.modes_retrieved >= prev);
    prev = rep.modes_retrieved;
  }
  const auto full = sampler::mode_count(draws, centers, 3.0);
  CHECK(full.modes_retrieved == 8);

  CHECK_THROWS_AS(sampler::mode_count(draws, centers, 0.0), ConfigError);
}

TEST_CASE("invariance test separates exact kernels from biased ones") {
  const auto target = targets::gaussian_mixture(targets::ring8_spec(2.0, 1.0));

  const sampler::OneStepKernel identity = [](RngStream&, const Vec& z) { return z; };
  const auto ok = sampler::invariance_test(identity, target, 400, 21);
  CHECK(ok.pass);

  // exact MH kernel is also invariant
  const auto s = make_setup(1, 0, false, 0.3, 8);
  const sampler::OneStepKernel mh = [&](RngStream& r, const Vec& z) {
    return kernels::metflow_step(r, s.target, s.stack, 0, s.params, z, s.nu,
                                 RatioFamily::MetropolisHastings)
        .z_next;
  };
  const auto mh_rep = sampler::invariance_test(mh, target, 400, 22);
  CHECK(mh_rep.pass);

  // unadjusted pushforward of a non-identity flow is not invariant
  const sampler::OneStepKernel raw = [&](RngStream&, const Vec& z) {
    const flows::ParamsRef<double> p{&s.params};
    return flows::step_forward(s.stack, 0, p, z).first;
  };
  const auto bad = sampler::invariance_test(raw, target, 400, 23);
  CHECK_FALSE(bad.pass);
}

TEST_CASE("ks test calibration against a known cdf") {
  RngStream rng(9, 0);
  // correct null: p-values should not cluster near 0
  int small = 0;
  double median_bucket = 0;
  std::vector<double> ps;
  for (int rep = 0; rep < 20; ++rep) {
    Mat pts(500, 1);
    for (int i = 0; i < 500; ++i) pts(i, 0) = rng.normal();
    const auto res = sampler::marginal_ks(pts, 0, normal_cdf);
    ps.push_back(res.p_value);
    if (res.p_value < 0.01) ++small;
  }
  std::sort(ps.begin(), ps.end());
  median_bucket = ps[10];
  CHECK(small <= 2);
  CHECK(median_bucket >= 0.1);
  CHECK(median_bucket <= 0.95);

  // a wrong distribution is rejected decisively
  Mat shifted(500, 1);
  for (int i = 0; i < 500; ++i) shifted(i, 0) = rng.normal() + 1.0;
  CHECK(sampler::marginal_ks(shifted, 0, normal_cdf).p_value < 1e-6);

  // exact statistic for a degenerate sample: all mass at 0, cdf(0) = 0.5
  Mat zeros = Mat::Zero(100, 1);
  CHECK(sampler::marginal_ks(zeros, 0, normal_cdf).statistic ==
        doctest::Approx(0.5).epsilon(1e-12));
}
