#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "metflow/config.hpp"

using namespace metflow;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config json round-trip") {
  config::RunConfig cfg = config::preset("funnel");
  cfg.nu_trainable = true;
  cfg.r_bernoulli = true;
  cfg.family = kernels::RatioFamily::Barker;
  cfg.prior_mu_init = 0.3;
  cfg.train_cfg.grad_clip = 5.0;
  cfg.seed = 42;
  cfg.out_dir = "/tmp/x";
  const config::RunConfig back = config::run_config_from_json(config::run_config_to_json(cfg));
  CHECK(back.target_name == cfg.target_name);
  CHECK(back.dim == cfg.dim);
  CHECK(back.K == cfg.K);
  CHECK(back.B == cfg.B);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.setting == cfg.setting);
  CHECK(back.method == cfg.method);
  CHECK(back.family == cfg.family);
  CHECK(back.nu_trainable == cfg.nu_trainable);
  CHECK(back.r_bernoulli == cfg.r_bernoulli);
  CHECK(back.prior_mu_init == cfg.prior_mu_init);
  CHECK(back.train_cfg.iterations == cfg.train_cfg.iterations);
  CHECK(back.train_cfg.batch_size == cfg.train_cfg.batch_size);
  CHECK(back.train_cfg.grad_clip == cfg.train_cfg.grad_clip);
  CHECK(back.seed == 42);
  CHECK(back.seed_set);
  CHECK(back.out_dir == "/tmp/x");
}

TEST_CASE("config validation errors") {
  const json base = config::run_config_to_json(config::preset("mog2d"));

  SUBCASE("missing seed") {
    json j = base;
    j.erase("seed");
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("unknown target") {
    json j = base;
    j["target"]["name"] = "nonsense";
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("K must be at least one") {
    json j = base;
    j["K"] = 0;
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("unknown top-level key") {
    json j = base;
    j["typo_key"] = 1;
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("unknown nested key") {
    json j = base;
    j["train"]["typo"] = 1;
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("bad enum value") {
    json j = base;
    j["setting"] = "sometimes_random";
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("patience above iterations") {
    json j = base;
    j["train"]["iterations"] = 10;
    j["train"]["early_stop_patience"] = 11;
    CHECK_THROWS_AS(config::run_config_from_json(j), ConfigError);
  }
  SUBCASE("default patience shrinks with a small iteration budget") {
    json j = base;
    j["train"].erase("early_stop_patience");
    j["train"]["iterations"] = 10;
    const auto cfg = config::run_config_from_json(j);
    CHECK(cfg.train_cfg.early_stop_patience == 10);
  }
}

TEST_CASE("all presets build") {
  for (const std::string& name : config::preset_names()) {
    const auto cfg = config::preset(name);
    const auto model = config::build_model(cfg);
    const auto params = config::init_params(cfg, model);
    CHECK(model.stack.K == cfg.K);
    CHECK(model.stack.dim == cfg.dim);
    CHECK(params.total_dim() > 0);
    // pseudo-random presets share step parameters
    if (cfg.setting != train::NoiseSetting::Deterministic) {
      CHECK(model.stack.shared);
      CHECK(model.stack.noise_dim == cfg.dim);
    }
  }
  CHECK_THROWS_AS(config::preset("nope"), ConfigError);
  // baseline presets differ from their parents only in the method
  CHECK(config::preset("mog2d-baseline").method == train::Method::NfBaseline);
  CHECK(config::preset("mog2d").method == train::Method::MetFlow);
}

TEST_CASE("build model rejects a dim mismatch") {
  config::RunConfig cfg = config::preset("hypercube4");
  cfg.dim = 3;  // hypercube target built with d = 4
  CHECK_THROWS_AS(config::build_model(cfg), ConfigError);
}

TEST_CASE("parameter initialization is seed-deterministic") {
  const auto cfg = config::preset("mog2d");
  const auto model = config::build_model(cfg);
  const auto p1 = config::init_params(cfg, model);
  const auto p2 = config::init_params(cfg, model);
  CHECK((p1.flatten() - p2.flatten()).lpNorm<Eigen::Infinity>() == 0.0);
  auto cfg2 = cfg;
  cfg2.seed = 2;
  const auto p3 = config::init_params(cfg2, model);
  CHECK((p1.flatten() - p3.flatten()).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("checkpoint round-trip is bitwise and re-saves identically") {
  auto cfg = config::preset("mog2d");
  cfg.nu_trainable = true;
  const auto model = config::build_model(cfg);
  config::Checkpoint ckpt;
  ckpt.cfg = cfg;
  ckpt.params = config::init_params(cfg, model);
  RngStream rng(cfg.seed, 0);
  for (int k = 0; k < cfg.K; ++k) ckpt.fixed_u.push_back(rng.normal_vec(cfg.dim));
  // make values irrational so the text round-trip is actually exercised
  Vec flat = ckpt.params.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += 1e-3 * std::sqrt(2.0 + i);
  ckpt.params.unflatten(flat);

  const std::string path1 = "/tmp/metflow_test_ckpt1.json";
  const std::string path2 = "/tmp/metflow_test_ckpt2.json";
  config::save_checkpoint(path1, ckpt);
  const auto loaded = config::load_checkpoint(path1);
  CHECK((loaded.params.flatten() - ckpt.params.flatten()).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(loaded.fixed_u.size() == ckpt.fixed_u.size());
  for (std::size_t k = 0; k < ckpt.fixed_u.size(); ++k)
    CHECK((loaded.fixed_u[k] - ckpt.fixed_u[k]).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(loaded.cfg.target_name == cfg.target_name);
  CHECK(loaded.cfg.seed == cfg.seed);

  config::save_checkpoint(path2, loaded);
  CHECK(slurp(path1) == slurp(path2));
  std::remove(path1.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint loader rejects foreign and corrupt files") {
  const std::string path = "/tmp/metflow_test_badckpt.json";
  {
    std::ofstream out(path);
    out << "{\"format\": \"something-else\", \"version\": 1}\n";
  }
  CHECK_THROWS_AS(config::load_checkpoint(path), ConfigError);
  {
    std::ofstream out(path);
    out << "{\"format\": \"metflow-checkpoint\", \"version\": 99}\n";
  }
  CHECK_THROWS_AS(config::load_checkpoint(path), ConfigError);
  {
    std::ofstream out(path);
    out << "not json at all\n";
  }
  CHECK_THROWS_AS(config::load_checkpoint(path), ConfigError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(config::load_checkpoint("/tmp/does_not_exist_metflow.json"), ConfigError);
}

TEST_CASE("config file loader reports parse errors") {
  const std::string path = "/tmp/metflow_test_cfg.json";
  {
    std::ofstream out(path);
    out << "{ broken\n";
  }
  CHECK_THROWS_AS(config::load_run_config(path), ConfigError);
  {
    std::ofstream out(path);
    out << config::run_config_to_json(config::preset("hypercube2")).dump(2) << "\n";
  }
  const auto cfg = config::load_run_config(path);
  CHECK(cfg.target_name == "hypercube");
  CHECK(cfg.dim == 2);
  std::remove(path.c_str());
  CHECK_THROWS_AS(config::load_run_config("/tmp/missing_metflow_cfg.json"), ConfigError);
}
