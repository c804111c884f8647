#include "metflow/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace metflow::config {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 0xA11CE;  // distinct from train/sample streams
constexpr int kCheckpointVersion = 1;

std::string setting_name(train::NoiseSetting s) {
  switch (s) {
    case train::NoiseSetting::Deterministic: return "deterministic";
    case train::NoiseSetting::PseudoRandom: return "pseudo_random";
    case train::NoiseSetting::FullyRandom: return "fully_random";
  }
  throw ConfigError("unknown noise setting");
}

train::NoiseSetting setting_from_name(const std::string& s) {
  if (s == "deterministic") return train::NoiseSetting::Deterministic;
  if (s == "pseudo_random") return train::NoiseSetting::PseudoRandom;
  if (s == "fully_random") return train::NoiseSetting::FullyRandom;
  throw ConfigError("unknown noise setting: " + s);
}

std::string method_name(train::Method m) {
  return m == train::Method::MetFlow ? "metflow" : "nf_baseline";
}

train::Method method_from_name(const std::string& s) {
  if (s == "metflow") return train::Method::MetFlow;
  if (s == "nf_baseline") return train::Method::NfBaseline;
  throw ConfigError("unknown method: " + s);
}

std::string family_name(kernels::RatioFamily f) {
  return f == kernels::RatioFamily::MetropolisHastings ? "mh" : "barker";
}

kernels::RatioFamily family_from_name(const std::string& s) {
  if (s == "mh") return kernels::RatioFamily::MetropolisHastings;
  if (s == "barker") return kernels::RatioFamily::Barker;
  throw ConfigError("unknown ratio family: " + s);
}

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (allowed.count(it.key()) == 0)
      throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

Mat mat_from_json(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw ConfigError("checkpoint: malformed array entry for " + name);
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<int>(data.size()) != rows * cols)
    throw ConfigError("checkpoint: shape/data mismatch for " + name);
  Mat m(rows, cols);
  int k = 0;  // column-major, matching ParamTree::flatten
  for (int j2 = 0; j2 < cols; ++j2)
    for (int i = 0; i < rows; ++i) m(i, j2) = data[k++];
  return m;
}

json mat_to_json(const Mat& m) {
  std::vector<double> data;
  data.reserve(m.size());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

}  // namespace

void RunConfig::validate() const {
  if (!targets::has_target(target_name))
    throw ConfigError("config: unknown target \"" + target_name + "\"");
  if (dim < 1) throw ConfigError("config: dim must be >= 1");
  if (K < 1) throw ConfigError("config: K must be >= 1");
  if (B < 1 || hidden < 1) throw ConfigError("config: B and hidden must be >= 1");
  if (!seed_set) throw ConfigError("config: seed is mandatory");
  train_cfg.validate();
}

RunConfig run_config_from_json(const json& j) {
  require_keys(j, "config",
               {"target", "dim", "K", "B", "hidden", "setting", "method", "ratio",
                "nu_trainable", "r_bernoulli", "prior", "train", "seed", "out_dir"});
  RunConfig cfg;
  if (!j.contains("target")) throw ConfigError("config: missing \"target\"");
  const json& t = j.at("target");
  require_keys(t, "config.target", {"name", "params"});
  cfg.target_name = t.at("name").get<std::string>();
  if (t.contains("params")) cfg.target_params = t.at("params").get<std::vector<double>>();

  if (j.contains("dim")) cfg.dim = j.at("dim").get<int>();
  if (j.contains("K")) cfg.K = j.at("K").get<int>();
  if (j.contains("B")) cfg.B = j.at("B").get<int>();
  if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<int>();
  if (j.contains("setting")) cfg.setting = setting_from_name(j.at("setting").get<std::string>());
  if (j.contains("method")) cfg.method = method_from_name(j.at("method").get<std::string>());
  if (j.contains("ratio")) cfg.family = family_from_name(j.at("ratio").get<std::string>());
  if (j.contains("nu_trainable")) cfg.nu_trainable = j.at("nu_trainable").get<bool>();
  if (j.contains("r_bernoulli")) cfg.r_bernoulli = j.at("r_bernoulli").get<bool>();
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    require_keys(p, "config.prior", {"mu", "log_scale"});
    if (p.contains("mu")) cfg.prior_mu_init = p.at("mu").get<double>();
    if (p.contains("log_scale")) cfg.prior_log_scale_init = p.at("log_scale").get<double>();
  }
  if (j.contains("train")) {
    const json& tr = j.at("train");
    require_keys(tr, "config.train",
                 {"iterations", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps",
                  "early_stop_patience", "grad_clip", "ema_decay"});
    auto& c = cfg.train_cfg;
    if (tr.contains("iterations")) c.iterations = tr.at("iterations").get<int>();
    if (tr.contains("batch_size")) c.batch_size = tr.at("batch_size").get<int>();
    if (tr.contains("learning_rate")) c.learning_rate = tr.at("learning_rate").get<double>();
    if (tr.contains("beta1")) c.beta1 = tr.at("beta1").get<double>();
    if (tr.contains("beta2")) c.beta2 = tr.at("beta2").get<double>();
    if (tr.contains("adam_eps")) c.adam_eps = tr.at("adam_eps").get<double>();
    if (tr.contains("early_stop_patience"))
      c.early_stop_patience = tr.at("early_stop_patience").get<int>();
    else
      c.early_stop_patience = std::min(c.early_stop_patience, c.iterations);
    if (tr.contains("grad_clip")) c.grad_clip = tr.at("grad_clip").get<double>();
    if (tr.contains("ema_decay")) c.ema_decay = tr.at("ema_decay").get<double>();
  }
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  cfg.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["target"] = {{"name", cfg.target_name}, {"params", cfg.target_params}};
  j["dim"] = cfg.dim;
  j["K"] = cfg.K;
  j["B"] = cfg.B;
  j["hidden"] = cfg.hidden;
  j["setting"] = setting_name(cfg.setting);
  j["method"] = method_name(cfg.method);
  j["ratio"] = family_name(cfg.family);
  j["nu_trainable"] = cfg.nu_trainable;
  j["r_bernoulli"] = cfg.r_bernoulli;
  j["prior"] = {{"mu", cfg.prior_mu_init}, {"log_scale", cfg.prior_log_scale_init}};
  j["train"] = {{"iterations", cfg.train_cfg.iterations},
                {"batch_size", cfg.train_cfg.batch_size},
                {"learning_rate", cfg.train_cfg.learning_rate},
                {"beta1", cfg.train_cfg.beta1},
                {"beta2", cfg.train_cfg.beta2},
                {"adam_eps", cfg.train_cfg.adam_eps},
                {"early_stop_patience", cfg.train_cfg.early_stop_patience},
                {"grad_clip", cfg.train_cfg.grad_clip},
                {"ema_decay", cfg.train_cfg.ema_decay}};
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

RunConfig preset(const std::string& name) {
  RunConfig cfg;
  cfg.seed = 1;
  cfg.seed_set = true;

  auto mixture_defaults = [&](const std::string& target, std::vector<double> params, int d) {
    cfg.target_name = target;
    cfg.target_params = std::move(params);
    cfg.dim = d;
    cfg.K = 5;
    cfg.B = 2;
    cfg.hidden = 4;
    cfg.setting = train::NoiseSetting::PseudoRandom;
    cfg.train_cfg.iterations = 5000;
    cfg.train_cfg.batch_size = 32;
    cfg.train_cfg.early_stop_patience = 250;
  };

  std::string base = name;
  bool baseline = false;
  const std::string suffix = "-baseline";
  if (base.size() > suffix.size() &&
      base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    baseline = true;
    base = base.substr(0, base.size() - suffix.size());
  }

  if (base == "mog2d") {
    mixture_defaults("ring8", {}, 2);
  } else if (base == "funnel") {
    mixture_defaults("funnel", {}, 2);
  } else if (base == "hypercube2" || base == "hypercube4") {
    const int d = base == "hypercube2" ? 2 : 4;
    mixture_defaults("hypercube", {static_cast<double>(d)}, d);
    cfg.hidden = 2 * d;
    cfg.train_cfg.iterations = 3000;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  if (baseline) cfg.method = train::Method::NfBaseline;
  cfg.validate();
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"mog2d", "mog2d-baseline", "funnel",     "funnel-baseline",
          "hypercube2", "hypercube2-baseline", "hypercube4", "hypercube4-baseline"};
}

Model build_model(const RunConfig& cfg) {
  cfg.validate();
  Model m;
  m.target = targets::make_target(cfg.target_name, cfg.target_params);
  if (m.target.dim != cfg.dim)
    throw ConfigError("config: dim " + std::to_string(cfg.dim) + " does not match target dim " +
                      std::to_string(m.target.dim));
  const bool det = cfg.setting == train::NoiseSetting::Deterministic;
  const int noise_dim = det ? 0 : cfg.dim;
  m.stack = flows::FlowStack::create(cfg.dim, cfg.K, cfg.B, cfg.hidden, !det, noise_dim);
  m.prior = density::PriorModel::standard(cfg.dim);
  m.nu = cfg.nu_trainable ? kernels::DirectionDist::trained(cfg.K)
                          : kernels::DirectionDist::uniform(cfg.K);
  m.r = cfg.r_bernoulli ? elbo::InferenceFn::bernoulli(cfg.K) : elbo::InferenceFn::uniform(cfg.K);
  m.family = cfg.family;
  return m;
}

ParamTree init_params(const RunConfig& cfg, const Model& model) {
  ParamTree params;
  model.prior.init_params(params, Vec::Constant(cfg.dim, cfg.prior_mu_init),
                          Vec::Constant(cfg.dim, cfg.prior_log_scale_init));
  RngStream rng(cfg.seed, kInitStream);
  model.stack.init_params(params, rng);
  if (cfg.nu_trainable) params.set(model.nu.param_name, Vec::Zero(cfg.K));
  if (cfg.r_bernoulli) params.set(model.r.logits_name, Vec::Zero(cfg.K));
  return params;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json j;
  j["format"] = "metflow-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = run_config_to_json(ckpt.cfg);
  json params = json::object();
  for (const auto& [name, m] : ckpt.params.entries()) params[name] = mat_to_json(m);
  j["params"] = params;
  json fixed_u = json::array();
  for (const Vec& u : ckpt.fixed_u) {
    std::vector<double> row(u.data(), u.data() + u.size());
    fixed_u.push_back(row);
  }
  j["fixed_u"] = fixed_u;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint parse error in " + path + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "metflow-checkpoint")
    throw ConfigError("not a checkpoint file: " + path);
  if (j.value("version", 0) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version in " + path);
  Checkpoint ckpt;
  ckpt.cfg = run_config_from_json(j.at("config"));
  for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it)
    ckpt.params.set(it.key(), mat_from_json(it.value(), it.key()));
  for (const json& row : j.at("fixed_u")) {
    const auto data = row.get<std::vector<double>>();
    Vec u(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) u[i] = data[i];
    ckpt.fixed_u.push_back(u);
  }
  return ckpt;
}

}  // namespace metflow::config
