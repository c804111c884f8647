#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "metflow/sampler.hpp"

namespace metflow::config {

// Full experiment description: everything needed to rebuild the model,
// training schedule and outputs from a config file plus a seed.
struct RunConfig {
  std::string target_name;
  std::vector<double> target_params;
  int dim = 2;
  int K = 5;
  int B = 2;
  int hidden = 4;
  train::NoiseSetting setting = train::NoiseSetting::PseudoRandom;
  train::Method method = train::Method::MetFlow;
  kernels::RatioFamily family = kernels::RatioFamily::MetropolisHastings;
  bool nu_trainable = false;
  bool r_bernoulli = false;
  double prior_mu_init = 0.0;
  double prior_log_scale_init = 0.0;
  train::TrainConfig train_cfg;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = ".";

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// Built-in experiment presets (hyperparameters follow the synthetic
// experiments; iteration counts are scaled down and overridable).
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Assembled model pieces; keep alive while ModelRefs is in use.
struct Model {
  targets::TargetModel target;
  flows::FlowStack stack;
  density::PriorModel prior;
  kernels::DirectionDist nu;
  elbo::InferenceFn r;
  kernels::RatioFamily family = kernels::RatioFamily::MetropolisHastings;

  elbo::ModelRefs refs() const { return {&prior, &stack, &nu, &target, family}; }
};

Model build_model(const RunConfig& cfg);
ParamTree init_params(const RunConfig& cfg, const Model& model);

// Checkpoint: versioned JSON manifest with config, parameter arrays and the
// pseudo-random innovation sequence.
struct Checkpoint {
  RunConfig cfg;
  ParamTree params;
  std::vector<Vec> fixed_u;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace metflow::config
