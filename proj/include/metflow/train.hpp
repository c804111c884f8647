#pragma once

#include <cstdint>
#include <vector>

#include "metflow/elbo.hpp"

namespace metflow::train {

// Deterministic: per-step parameters, no innovation noise.
// PseudoRandom: shared parameters, u_{1:K} drawn once at setup and fixed.
// FullyRandom: shared parameters, fresh u every trajectory.
enum class NoiseSetting { Deterministic, PseudoRandom, FullyRandom };

enum class Method { MetFlow, NfBaseline };

struct TrainConfig {
  int iterations = 5000;
  int batch_size = 250;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int early_stop_patience = 250;
  double grad_clip = 0.0;  // <= 0 disables clipping (inf-norm)
  double ema_decay = 0.99;

  void validate() const {
    if (iterations < 1 || batch_size < 1 || learning_rate <= 0.0)
      throw ConfigError("TrainConfig: iterations, batch and lr must be positive");
    if (early_stop_patience < 1 || early_stop_patience > iterations)
      throw ConfigError("TrainConfig: patience must be in [1, iterations]");
  }
};

struct AdamState {
  Vec m;
  Vec v;
  long t = 0;

  static AdamState zero(int dim) { return AdamState{Vec::Zero(dim), Vec::Zero(dim), 0}; }
};

// One bias-corrected Adam ascent step (the ELBO is maximized).
void adam_step(AdamState& state, ParamTree& params, const ParamTree& grad, double lr,
               double beta1, double beta2, double eps);

struct TrainLogRow {
  int iter = 0;
  double elbo = 0.0;
  double elbo_ema = 0.0;
  std::vector<double> accept_rate;  // per step, batch mean (MetFlow only)
};

struct TrainResult {
  ParamTree params;
  std::vector<TrainLogRow> log;
  std::vector<Vec> fixed_u;  // the pseudo-random innovation sequence, if any
  int iterations_run = 0;
  bool early_stopped = false;
};

// Stochastic-gradient loop: per-iteration batch of trajectories, averaged
// gradient, Adam ascent, EMA-based early stopping. Fully determined by
// (configs, seed); trajectory b of iteration i uses rng stream 1 + i*batch + b
// so batches may be evaluated concurrently.
TrainResult train(const TrainConfig& cfg, const elbo::ModelRefs& model,
                  const elbo::InferenceFn& r, const ParamTree& init_params, Method method,
                  NoiseSetting setting, std::uint64_t seed);

// Parallelism cap from METFLOW_THREADS (default: hardware concurrency).
int max_threads();

}  // namespace metflow::train
