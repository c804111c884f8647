#pragma once

#include <string>
#include <utility>
#include <vector>

#include "metflow/common.hpp"
#include "metflow/param_tree.hpp"
#include "metflow/scalar_ops.hpp"

namespace metflow::flows {

// Parameter lookup for a given scalar type: plain values for double, tape
// inputs for Var. Both present the same at()/vec() surface to the templated
// flow code.
template <typename S>
struct ParamsRef;

template <>
struct ParamsRef<double> {
  const ParamTree* tree;
  const MatX<double>& at(const std::string& name) const { return tree->at(name); }
  VecX<double> vec(const std::string& name) const { return tree->vec(name); }
  bool has(const std::string& name) const { return tree->has(name); }
};

template <>
struct ParamsRef<Var> {
  const grad::ParamVars* vars;
  const MatX<Var>& at(const std::string& name) const { return vars->at(name); }
  VecX<Var> vec(const std::string& name) const { return vars->vec(name); }
  bool has(const std::string& name) const { return vars->has(name); }
};

// Two-layer perceptron: leaky-relu(0.01) hidden layer, then tanh (scale nets)
// or identity (shift nets) on the output.
struct MlpSpec {
  std::string prefix;  // parameter names are prefix + ".W1" ".b1" ".W2" ".b2"
  int in = 0;
  int hidden = 0;
  int out = 0;
  bool tanh_out = false;
};

template <typename S>
VecX<S> mlp_apply(const MlpSpec& net, const ParamsRef<S>& p, const VecX<S>& x) {
  if (static_cast<int>(x.size()) != net.in)
    throw ShapeError("mlp_apply: input size mismatch for " + net.prefix);
  VecX<S> h = p.at(net.prefix + ".W1") * x + p.vec(net.prefix + ".b1");
  for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = leaky_relu(h[i]);
  VecX<S> y = p.at(net.prefix + ".W2") * h + p.vec(net.prefix + ".b2");
  if (net.tanh_out) {
    using std::tanh;
    using grad::tanh;
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = tanh(y[i]);
  }
  return y;
}

// One affine coupling layer. Coordinates in `mask` pass through unchanged and
// feed the scale/shift nets; the complement is transformed. For noise_dim > 0
// the innovation noise is stacked onto the net input (LN-NVP).
struct RnvpBlock {
  int dim = 0;
  int noise_dim = 0;
  std::vector<int> mask;  // pass-through coordinate indices (nonempty, proper)
  std::vector<int> comp;  // transformed coordinate indices
  MlpSpec s_net;
  MlpSpec t_net;

  static RnvpBlock create(int dim, bool odd_mask, int hidden, int noise_dim,
                          const std::string& prefix) {
    if (dim < 2) throw ConfigError("RnvpBlock: dim must be >= 2");
    RnvpBlock b;
    b.dim = dim;
    b.noise_dim = noise_dim;
    for (int i = 0; i < dim; ++i)
      ((i % 2 == (odd_mask ? 1 : 0)) ? b.mask : b.comp).push_back(i);
    const int in = static_cast<int>(b.mask.size()) + noise_dim;
    const int out = static_cast<int>(b.comp.size());
    b.s_net = {prefix + ".s", in, hidden, out, true};
    b.t_net = {prefix + ".t", in, hidden, out, false};
    return b;
  }

  // Random hidden layer, zero-initialized output layer so the block starts as
  // the identity map.
  void init_params(ParamTree& params, RngStream& rng, double w_scale = 0.5) const {
    for (const MlpSpec* net : {&s_net, &t_net}) {
      Mat w1(net->hidden, net->in);
      for (Eigen::Index j = 0; j < w1.cols(); ++j)
        for (Eigen::Index i = 0; i < w1.rows(); ++i) w1(i, j) = w_scale * rng.normal();
      params.set(net->prefix + ".W1", w1);
      Vec b1(net->hidden);
      for (int i = 0; i < net->hidden; ++i) b1[i] = 0.1 * rng.normal();
      params.set(net->prefix + ".b1", b1);
      params.set(net->prefix + ".W2", Mat::Zero(net->out, net->hidden));
      params.set(net->prefix + ".b2", Vec::Zero(net->out));
    }
  }
};

namespace detail {
template <typename S>
VecX<S> net_input(const RnvpBlock& b, const VecX<S>& z, const VecX<S>* u) {
  const int m = static_cast<int>(b.mask.size());
  if ((b.noise_dim > 0) != (u != nullptr))
    throw ShapeError("RnvpBlock: noise presence does not match noise_dim");
  VecX<S> x(m + b.noise_dim);
  for (int i = 0; i < m; ++i) x[i] = z[b.mask[i]];
  if (u) {
    if (static_cast<int>(u->size()) != b.noise_dim)
      throw ShapeError("RnvpBlock: noise dimension mismatch");
    for (int i = 0; i < b.noise_dim; ++i) x[m + i] = (*u)[i];
  }
  return x;
}
}  // namespace detail

template <typename S>
std::pair<VecX<S>, S> block_forward(const RnvpBlock& b, const ParamsRef<S>& p,
                                    const VecX<S>& z, const VecX<S>* u = nullptr) {
  if (static_cast<int>(z.size()) != b.dim) throw ShapeError("block_forward: dim mismatch");
  const VecX<S> x = detail::net_input(b, z, u);
  const VecX<S> s = mlp_apply(b.s_net, p, x);
  const VecX<S> t = mlp_apply(b.t_net, p, x);
  using std::exp;
  using grad::exp;
  VecX<S> out = z;
  S log_jac = S(0.0);
  for (std::size_t i = 0; i < b.comp.size(); ++i) {
    out[b.comp[i]] = z[b.comp[i]] * exp(s[i]) + t[i];
    log_jac += s[i];
  }
  return {std::move(out), log_jac};
}

template <typename S>
std::pair<VecX<S>, S> block_inverse(const RnvpBlock& b, const ParamsRef<S>& p,
                                    const VecX<S>& z, const VecX<S>* u = nullptr) {
  if (static_cast<int>(z.size()) != b.dim) throw ShapeError("block_inverse: dim mismatch");
  const VecX<S> x = detail::net_input(b, z, u);
  const VecX<S> s = mlp_apply(b.s_net, p, x);
  const VecX<S> t = mlp_apply(b.t_net, p, x);
  using std::exp;
  using grad::exp;
  VecX<S> out = z;
  S log_jac = S(0.0);
  for (std::size_t i = 0; i < b.comp.size(); ++i) {
    out[b.comp[i]] = (z[b.comp[i]] - t[i]) * exp(-s[i]);
    log_jac -= s[i];
  }
  return {std::move(out), log_jac};
}

// Ordered sequence of K invertible transforms, each a composition of B
// coupling layers with alternating masks. With shared parameters every step
// reuses the same nets and differs only through its innovation noise.
struct FlowStack {
  int dim = 0;
  int K = 0;
  int B = 0;
  int hidden = 0;
  int noise_dim = 0;  // 0: plain RNVP, dim: LN-NVP
  bool shared = false;
  std::vector<std::vector<RnvpBlock>> steps;  // steps[k][b]

  static FlowStack create(int dim, int K, int B, int hidden, bool shared, int noise_dim) {
    // K = 0 is the degenerate empty stack (prior-only objective)
    if (K < 0 || B < 1) throw ConfigError("FlowStack: need K >= 0 and B >= 1");
    FlowStack st;
    st.dim = dim;
    st.K = K;
    st.B = B;
    st.hidden = hidden;
    st.noise_dim = noise_dim;
    st.shared = shared;
    st.steps.resize(K);
    for (int k = 0; k < K; ++k) {
      const std::string step_prefix = shared ? "flow" : "flow.step" + std::to_string(k);
      for (int b = 0; b < B; ++b)
        st.steps[k].push_back(RnvpBlock::create(dim, b % 2 == 1, hidden, noise_dim,
                                                step_prefix + ".b" + std::to_string(b)));
    }
    return st;
  }

  void init_params(ParamTree& params, RngStream& rng) const {
    if (K == 0) return;
    const int n_steps = shared ? 1 : K;
    for (int k = 0; k < n_steps; ++k)
      for (const RnvpBlock& b : steps[k]) b.init_params(params, rng);
  }
};

// T_k(z): forward composition of the B blocks of step k.
template <typename S>
std::pair<VecX<S>, S> step_forward(const FlowStack& st, int k, const ParamsRef<S>& p,
                                   const VecX<S>& z, const VecX<S>* u = nullptr) {
  VecX<S> cur = z;
  S log_jac = S(0.0);
  for (const RnvpBlock& b : st.steps.at(k)) {
    auto [next, lj] = block_forward(b, p, cur, u);
    cur = std::move(next);
    log_jac += lj;
  }
  return {std::move(cur), log_jac};
}

template <typename S>
std::pair<VecX<S>, S> step_inverse(const FlowStack& st, int k, const ParamsRef<S>& p,
                                   const VecX<S>& z, const VecX<S>* u = nullptr) {
  VecX<S> cur = z;
  S log_jac = S(0.0);
  const auto& blocks = st.steps.at(k);
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    auto [next, lj] = block_inverse(*it, p, cur, u);
    cur = std::move(next);
    log_jac += lj;
  }
  return {std::move(cur), log_jac};
}

// T_k^{v}: direction v = +1 forward, v = -1 inverse.
template <typename S>
std::pair<VecX<S>, S> step_apply(const FlowStack& st, int k, const ParamsRef<S>& p,
                                 const VecX<S>& z, int v, const VecX<S>* u = nullptr) {
  if (v == +1) return step_forward(st, k, p, z, u);
  if (v == -1) return step_inverse(st, k, p, z, u);
  throw DomainError("step_apply: direction must be +1 or -1");
}

template <typename S>
struct StackResult {
  VecX<S> z;
  S log_jac;                  // sum of applied-map log-Jacobians
  std::vector<VecX<S>> states;  // z_0 .. z_K
};

// z_k = T_k^{v_k a_k}(z_{k-1}); rejected steps are the identity with zero
// Jacobian contribution.
template <typename S>
StackResult<S> stack_apply(const FlowStack& st, const ParamsRef<S>& p, const VecX<S>& z0,
                           const std::vector<int>& a, const std::vector<int>& v,
                           const std::vector<VecX<S>>* u_list = nullptr) {
  if (static_cast<int>(a.size()) != st.K || static_cast<int>(v.size()) != st.K)
    throw ShapeError("stack_apply: accept/direction length must equal K");
  if (st.noise_dim > 0 && (!u_list || static_cast<int>(u_list->size()) != st.K))
    throw ShapeError("stack_apply: noise list length must equal K");
  StackResult<S> res;
  res.states.reserve(st.K + 1);
  res.states.push_back(z0);
  res.log_jac = S(0.0);
  VecX<S> cur = z0;
  for (int k = 0; k < st.K; ++k) {
    if (a[k] == 1) {
      const VecX<S>* u = u_list ? &(*u_list)[k] : nullptr;
      auto [next, lj] = step_apply(st, k, p, cur, v[k], u);
      cur = std::move(next);
      res.log_jac += lj;
    }
    res.states.push_back(cur);
  }
  res.z = std::move(cur);
  return res;
}

}  // namespace metflow::flows
