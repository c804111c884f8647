#include "metflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

namespace metflow::train {

int max_threads() {
  if (const char* env = std::getenv("METFLOW_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void adam_step(AdamState& state, ParamTree& params, const ParamTree& grad, double lr,
               double beta1, double beta2, double eps) {
  Vec p = params.flatten();
  const Vec g = grad.flatten();
  if (g.size() != p.size()) throw ShapeError("adam_step: gradient shape mismatch");
  if (state.m.size() != p.size()) state = AdamState::zero(static_cast<int>(p.size()));
  state.t += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * g;
  state.v = beta2 * state.v + (1.0 - beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double mh = state.m[i] / bc1;
    const double vh = state.v[i] / bc2;
    p[i] += lr * mh / (std::sqrt(vh) + eps);  // ascent
  }
  params.unflatten(p);
}

namespace {

struct SampleResult {
  double value = 0.0;
  ParamTree grad;
  std::vector<int> accepts;
};

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int threads = std::min(max_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const elbo::ModelRefs& model,
                  const elbo::InferenceFn& r, const ParamTree& init_params, Method method,
                  NoiseSetting setting, std::uint64_t seed) {
  cfg.validate();
  const auto& stack = *model.stack;
  if (setting == NoiseSetting::Deterministic && stack.noise_dim != 0)
    throw ConfigError("train: deterministic setting cannot consume innovation noise");
  if (setting != NoiseSetting::Deterministic && stack.K > 0 && stack.noise_dim == 0)
    throw ConfigError("train: pseudo/fully random settings need a noisy flow stack");

  TrainResult res;
  res.params = init_params;
  if (setting == NoiseSetting::PseudoRandom) {
    RngStream setup(seed, 0);
    for (int k = 0; k < stack.K; ++k) res.fixed_u.push_back(setup.normal_vec(stack.noise_dim));
  }
  const std::vector<Vec>* fixed_u =
      setting == NoiseSetting::PseudoRandom ? &res.fixed_u : nullptr;

  AdamState adam = AdamState::zero(res.params.total_dim());
  double ema = 0.0;
  bool ema_init = false;
  double best_ema = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<SampleResult> batch(cfg.batch_size);
  for (int it = 0; it < cfg.iterations; ++it) {
    const ParamTree& params = res.params;
    parallel_for(cfg.batch_size, [&](int b) {
      RngStream rng(seed, 1 + static_cast<std::uint64_t>(it) * cfg.batch_size + b);
      SampleResult& out = batch[b];
      if (method == Method::MetFlow) {
        const auto traj = elbo::simulate_trajectory(rng, model, params, fixed_u);
        out.value = elbo::elbo_value(traj, model, r, params);
        out.grad = elbo::grad_estimate(traj, model, r, params);
        out.accepts = traj.a;
      } else {
        auto vg = elbo::nf_baseline_sample(rng, model, params, fixed_u);
        out.value = vg.value;
        out.grad = std::move(vg.grad);
        out.accepts.clear();
      }
    });

    // deterministic reduction in trajectory-index order
    ParamTree gsum = res.params.zeros_like();
    double vsum = 0.0;
    std::vector<double> acc(stack.K, 0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      gsum.add_scaled(batch[b].grad, 1.0 / cfg.batch_size);
      vsum += batch[b].value;
      for (std::size_t k = 0; k < batch[b].accepts.size(); ++k)
        acc[k] += batch[b].accepts[k] / static_cast<double>(cfg.batch_size);
    }
    const double mean_elbo = vsum / cfg.batch_size;
    if (!gsum.all_finite())
      throw NumericalError("train: non-finite gradient at iteration " + std::to_string(it));

    if (cfg.grad_clip > 0.0) {
      Vec g = gsum.flatten();
      const double nrm = g.lpNorm<Eigen::Infinity>();
      if (nrm > cfg.grad_clip) {
        g *= cfg.grad_clip / nrm;
        gsum.unflatten(g);
      }
    }

    adam_step(adam, res.params, gsum, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

    ema = ema_init ? cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * mean_elbo : mean_elbo;
    ema_init = true;
    res.log.push_back({it, mean_elbo, ema, acc});
    res.iterations_run = it + 1;

    if (ema > best_ema) {
      best_ema = ema;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

}  // namespace metflow::train
