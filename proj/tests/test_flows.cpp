#include <doctest.h>

#include <cmath>

#include "metflow/flows.hpp"

using namespace metflow;

namespace {

// Random non-identity parameters for a block or stack.
void perturb(ParamTree& params, RngStream& rng, double scale = 0.4) {
  Vec flat = params.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += scale * rng.normal();
  params.unflatten(flat);
}

// log|det| of the forward map by central finite differences.
double fd_log_det(const flows::RnvpBlock& b, const ParamTree& params, const Vec& z,
                  const Vec* u, double h = 1e-6) {
  const flows::ParamsRef<double> p{&params};
  const int d = b.dim;
  Mat jac(d, d);
  for (int j = 0; j < d; ++j) {
    Vec zp = z, zm = z;
    zp[j] += h;
    zm[j] -= h;
    const Vec fp = flows::block_forward(b, p, zp, u).first;
    const Vec fm = flows::block_forward(b, p, zm, u).first;
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace

TEST_CASE("zero-initialized block is the identity") {
  RngStream rng(1, 0);
  const auto b = flows::RnvpBlock::create(4, false, 4, 0, "blk");
  ParamTree params;
  b.init_params(params, rng);  // output layers zero -> s = t = 0
  const flows::ParamsRef<double> p{&params};
  const Vec z = rng.normal_vec(4);
  const auto [out, lj] = flows::block_forward(b, p, z);
  CHECK((out - z).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(lj == 0.0);
  const auto [inv, ilj] = flows::block_inverse(b, p, z);
  CHECK((inv - z).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(ilj == 0.0);
}

TEST_CASE("constant-net coupling example in D=2") {
  // mask {0}: s(z1) = ln 2 (via tanh(atanh(ln 2))), t(z1) = 0.5
  const auto b = flows::RnvpBlock::create(2, false, 1, 0, "blk");
  ParamTree params;
  for (const char* net : {"blk.s", "blk.t"}) {
    params.set(std::string(net) + ".W1", Mat::Zero(1, 1));
    params.set(std::string(net) + ".b1", Vec::Zero(1));
    params.set(std::string(net) + ".W2", Mat::Zero(1, 1));
  }
  params.set("blk.s.b2", Vec::Constant(1, std::atanh(std::log(2.0))));
  params.set("blk.t.b2", Vec::Constant(1, 0.5));
  const flows::ParamsRef<double> p{&params};
  Vec z(2);
  z << 1.0, 1.0;
  const auto [out, lj] = flows::block_forward(b, p, z);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(lj == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const auto [back, ilj] = flows::block_inverse(b, p, out);
  CHECK(back[0] == doctest::Approx(1.0));
  CHECK(back[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ilj == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("1000 random blocks round-trip") {
  RngStream rng(2, 0);
  double worst_z = 0.0, worst_lj = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(5));
    const int noise_dim = trial % 3 == 0 ? dim : 0;  // mix RNVP and LN-NVP
    const auto b = flows::RnvpBlock::create(dim, trial % 2 == 1, 4, noise_dim, "blk");
    ParamTree params;
    b.init_params(params, rng);
    perturb(params, rng);
    const flows::ParamsRef<double> p{&params};
    const Vec z = rng.normal_vec(dim);
    const Vec u = rng.normal_vec(noise_dim);
    const Vec* up = noise_dim > 0 ? &u : nullptr;
    const auto [fwd, lj] = flows::block_forward(b, p, z, up);
    const auto [back, ilj] = flows::block_inverse(b, p, fwd, up);
    worst_z = std::max(worst_z, (back - z).lpNorm<Eigen::Infinity>());
    worst_lj = std::max(worst_lj, std::abs(lj + ilj));
  }
  CHECK(worst_z <= 1e-9);
  CHECK(worst_lj <= 1e-9);
}

TEST_CASE("analytic log-jacobian vs finite-difference determinant") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(5));
    const int noise_dim = trial % 2 == 0 ? 0 : dim;
    const auto b = flows::RnvpBlock::create(dim, false, 4, noise_dim, "blk");
    ParamTree params;
    b.init_params(params, rng);
    perturb(params, rng);
    const flows::ParamsRef<double> p{&params};
    const Vec z = rng.normal_vec(dim);
    const Vec u = rng.normal_vec(noise_dim);
    const Vec* up = noise_dim > 0 ? &u : nullptr;
    const double lj = flows::block_forward(b, p, z, up).second;
    const double fd = fd_log_det(b, params, z, up);
    CHECK(std::abs(lj - fd) / std::max({std::abs(lj), std::abs(fd), 1.0}) <= 1e-5);
  }
}

TEST_CASE("stack_apply with all rejections is the identity") {
  RngStream rng(4, 0);
  const auto st = flows::FlowStack::create(3, 4, 2, 4, false, 0);
  ParamTree params;
  st.init_params(params, rng);
  perturb(params, rng);
  const flows::ParamsRef<double> p{&params};
  const Vec z0 = rng.normal_vec(3);
  const auto res = flows::stack_apply(st, p, z0, {0, 0, 0, 0}, {1, -1, 1, -1});
  CHECK((res.z - z0).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(res.log_jac == 0.0);
  CHECK(res.states.size() == 5);
}

TEST_CASE("single backward step equals step_inverse") {
  RngStream rng(5, 0);
  const auto st = flows::FlowStack::create(2, 1, 2, 4, false, 0);
  ParamTree params;
  st.init_params(params, rng);
  perturb(params, rng);
  const flows::ParamsRef<double> p{&params};
  const Vec z0 = rng.normal_vec(2);
  const auto res = flows::stack_apply(st, p, z0, {1}, {-1});
  const auto [inv, ilj] = flows::step_inverse(st, 0, p, z0);
  CHECK((res.z - inv).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(res.log_jac == ilj);
}

TEST_CASE("reversed signed composition recovers the start point") {
  RngStream rng(6, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 3;
    const auto st = flows::FlowStack::create(3, K, 2, 4, false, 0);
    ParamTree params;
    st.init_params(params, rng);
    perturb(params, rng);
    const flows::ParamsRef<double> p{&params};
    const Vec z0 = rng.normal_vec(3);
    std::vector<int> a(K), v(K);
    for (int k = 0; k < K; ++k) {
      a[k] = static_cast<int>(rng.uniform_int(2));
      v[k] = rng.rademacher(0.5);
    }
    const auto fwd = flows::stack_apply(st, p, z0, a, v);
    Vec z = fwd.z;
    double lj = 0.0;
    for (int k = K - 1; k >= 0; --k) {
      if (a[k] == 0) continue;
      auto [prev, l] = flows::step_apply(st, k, p, z, -v[k]);
      z = std::move(prev);
      lj += l;
    }
    CHECK((z - z0).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(std::abs(fwd.log_jac + lj) <= 1e-8);
  }
}

TEST_CASE("complementary masks move every coordinate") {
  RngStream rng(7, 0);
  const auto st = flows::FlowStack::create(5, 1, 2, 4, false, 0);
  ParamTree params;
  st.init_params(params, rng);
  perturb(params, rng, 0.6);
  const flows::ParamsRef<double> p{&params};
  const Vec z = rng.normal_vec(5);
  const Vec out = flows::step_forward(st, 0, p, z).first;
  for (int i = 0; i < 5; ++i) CHECK(std::abs(out[i] - z[i]) > 1e-8);
}

TEST_CASE("shape and direction errors") {
  RngStream rng(8, 0);
  const auto b = flows::RnvpBlock::create(3, false, 4, 0, "blk");
  ParamTree params;
  b.init_params(params, rng);
  const flows::ParamsRef<double> p{&params};
  CHECK_THROWS_AS(flows::block_forward(b, p, Vec(rng.normal_vec(4))), ShapeError);
  const Vec u = rng.normal_vec(3);
  CHECK_THROWS_AS(flows::block_forward(b, p, Vec(rng.normal_vec(3)), &u), ShapeError);
  CHECK_THROWS_AS(flows::RnvpBlock::create(1, false, 4, 0, "blk"), ConfigError);
  const auto st = flows::FlowStack::create(3, 1, 2, 4, false, 0);
  ParamTree sp;
  st.init_params(sp, rng);
  const flows::ParamsRef<double> pr{&sp};
  CHECK_THROWS_AS(flows::step_apply(st, 0, pr, Vec(rng.normal_vec(3)), 0), DomainError);
  CHECK_THROWS_AS(flows::stack_apply(st, pr, Vec(rng.normal_vec(3)), {1, 1}, {1, 1}),
                  ShapeError);
}
