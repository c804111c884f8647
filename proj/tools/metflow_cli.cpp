#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "metflow/config.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace metflow;

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const config::RunConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(config::run_config_to_json(cfg).dump())));
  return buf;
}

config::RunConfig resolve_config(const std::string& config_path, const std::string& preset_name,
                                 std::int64_t seed_flag, const std::string& out_flag) {
  if (config_path.empty() == preset_name.empty())
    throw ConfigError("give exactly one of --config or --preset");
  config::RunConfig cfg = config_path.empty() ? config::preset(preset_name)
                                              : config::load_run_config(config_path);
  if (seed_flag >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed_flag);
    cfg.seed_set = true;
  }
  if (!out_flag.empty()) cfg.out_dir = out_flag;
  cfg.validate();
  return cfg;
}

void write_training_log(const std::string& path, const train::TrainResult& res, int K) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "iteration,elbo,elbo_ema";
  for (int k = 1; k <= K; ++k) out << ",accept" << k;
  out << "\n";
  for (const auto& row : res.log) {
    out << row.iter << "," << fmt17(row.elbo) << "," << fmt17(row.elbo_ema);
    for (int k = 0; k < K; ++k)
      out << "," << (k < static_cast<int>(row.accept_rate.size())
                         ? fmt17(row.accept_rate[k])
                         : std::string("nan"));
    out << "\n";
  }
}

int cmd_train(const config::RunConfig& cfg) {
  const config::Model model = config::build_model(cfg);
  const ParamTree init = config::init_params(cfg, model);
  const auto t0 = std::chrono::steady_clock::now();
  const train::TrainResult res =
      train::train(cfg.train_cfg, model.refs(), model.r, init, cfg.method, cfg.setting, cfg.seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(cfg.out_dir);
  config::save_checkpoint(cfg.out_dir + "/checkpoint.json",
                          {cfg, res.params, res.fixed_u});
  write_training_log(cfg.out_dir + "/training_log.csv", res, cfg.K);

  json metrics;
  metrics["config_hash"] = config_hash(cfg);
  metrics["iterations_run"] = res.iterations_run;
  metrics["early_stopped"] = res.early_stopped;
  metrics["final_elbo"] = res.log.empty() ? 0.0 : res.log.back().elbo;
  metrics["final_elbo_ema"] = res.log.empty() ? 0.0 : res.log.back().elbo_ema;
  metrics["wall_seconds_nondeterministic"] = secs;
  std::ofstream mout(cfg.out_dir + "/metrics.json");
  mout << metrics.dump(2) << "\n";
  std::cout << "wrote " << cfg.out_dir << "/checkpoint.json (" << res.iterations_run
            << " iterations)\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, int n, int extra_kernels, std::int64_t seed_flag,
               const std::string& out_flag, double mode_radius) {
  config::Checkpoint ckpt = config::load_checkpoint(ckpt_path);
  if (seed_flag >= 0) ckpt.cfg.seed = static_cast<std::uint64_t>(seed_flag);
  const std::string out_dir = out_flag.empty() ? ckpt.cfg.out_dir : out_flag;
  const config::Model model = config::build_model(ckpt.cfg);

  const sampler::SampleSet set =
      ckpt.cfg.method == train::Method::NfBaseline
          ? sampler::sample_baseline(model.refs(), ckpt.params, ckpt.fixed_u,
                                     ckpt.cfg.setting, n, ckpt.cfg.seed)
          : sampler::sample(model.refs(), ckpt.params, ckpt.fixed_u, ckpt.cfg.setting, n,
                            extra_kernels, ckpt.cfg.seed);

  fs::create_directories(out_dir);
  const std::string csv_path = out_dir + "/samples.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path);
  for (int d = 0; d < ckpt.cfg.dim; ++d) csv << (d ? "," : "") << "z" << d + 1;
  csv << "\n";
  for (Eigen::Index i = 0; i < set.points.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.points.cols(); ++j)
      csv << (j ? "," : "") << fmt17(set.points(i, j));
    csv << "\n";
  }

  json meta;
  meta["config_hash"] = config_hash(ckpt.cfg);
  meta["seed"] = set.seed;
  meta["n"] = n;
  meta["kernel_count"] = set.kernel_count;
  if (mode_radius > 0.0 && ckpt.cfg.target_name != "funnel") {
    const auto centers = ckpt.cfg.target_name == "hypercube"
                             ? targets::hypercube_centers(ckpt.cfg.dim)
                             : targets::ring8_spec().centers;
    const auto rep = sampler::mode_count(set.points, centers, mode_radius);
    meta["mode_radius"] = mode_radius;
    meta["modes_retrieved"] = rep.modes_retrieved;
    meta["mode_occupancy"] = rep.occupancy;
  }
  std::ofstream side(out_dir + "/samples.json");
  side << meta.dump(2) << "\n";
  std::cout << "wrote " << csv_path << " (" << n << " samples, " << set.kernel_count
            << " kernels per chain)\n";
  return 0;
}

int cmd_eval_density(const std::string& ckpt_path, int grid_n, double lo, double hi,
                     const std::string& out_flag) {
  const config::Checkpoint ckpt = config::load_checkpoint(ckpt_path);
  if (ckpt.cfg.dim != 2) throw ConfigError("eval-density: only 2-D targets supported");
  if (ckpt.cfg.K > density::kMaxEnumerationSteps)
    throw ConfigError("eval-density: K too large for exact enumeration");
  const std::string out_dir = out_flag.empty() ? ckpt.cfg.out_dir : out_flag;
  const config::Model model = config::build_model(ckpt.cfg);
  const std::vector<Vec>* u_list = ckpt.fixed_u.empty() ? nullptr : &ckpt.fixed_u;

  fs::create_directories(out_dir);
  const std::string path = out_dir + "/density.csv";
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "z1,z2,log_density\n";
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < grid_n; ++j) {
      Vec z(2);
      z[0] = lo + (hi - lo) * i / (grid_n - 1);
      z[1] = lo + (hi - lo) * j / (grid_n - 1);
      const double lp = density::marginal_logpdf(model.prior, model.stack, ckpt.params, u_list,
                                                 model.nu, z, model.target, model.family);
      out << fmt17(z[0]) << "," << fmt17(z[1]) << "," << fmt17(lp) << "\n";
    }
  }
  std::cout << "wrote " << path << "\n";
  return 0;
}

// Self-check suites: fast spot checks of the library's analytic structure.
struct SuiteResult {
  std::string name;
  bool pass = true;
  json detail;
};

SuiteResult suite_grad() {
  SuiteResult r{"grad"};
  RngStream rng(7, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    ParamTree params;
    params.set("x", rng.normal_vec(4));
    const grad::TapeFn f = [](grad::Tape&, const grad::ParamVars& p) {
      const VecX<Var> x = p.vec("x");
      Var out(0.0);
      for (int i = 0; i < 4; ++i) out += grad::tanh(x[i] * x[(i + 1) % 4]) + grad::exp(Var(0.1) * x[i]);
      return out;
    };
    worst = std::max(worst, grad::check_grad(f, params));
  }
  r.pass = worst <= 1e-5;
  r.detail["max_rel_err"] = worst;
  return r;
}

SuiteResult suite_flows() {
  SuiteResult r{"flows"};
  RngStream rng(11, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 2 + static_cast<int>(rng.uniform_int(4));
    const int noise_dim = trial % 2 == 0 ? 0 : dim;
    const auto st = flows::FlowStack::create(dim, 1, 2, 4, false, noise_dim);
    ParamTree params;
    st.init_params(params, rng);
    // perturb away from identity
    Vec flat = params.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += 0.3 * rng.normal();
    params.unflatten(flat);
    const Vec z = rng.normal_vec(dim);
    const Vec u = rng.normal_vec(noise_dim);
    const Vec* up = noise_dim > 0 ? &u : nullptr;
    const flows::ParamsRef<double> p{&params};
    const auto [fwd, lj] = flows::step_forward(st, 0, p, z, up);
    const auto [back, ilj] = flows::step_inverse(st, 0, p, fwd, up);
    worst = std::max(worst, (back - z).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, std::abs(lj + ilj));
  }
  r.pass = worst <= 1e-9;
  r.detail["max_roundtrip_err"] = worst;
  return r;
}

SuiteResult suite_balance(bool negative_control) {
  SuiteResult r{"balance"};
  const auto target = targets::make_target("ring8");
  RngStream rng(13, 0);
  int passes = 0;
  const int trials = 5;
  for (int trial = 0; trial < trials; ++trial) {
    const auto st = flows::FlowStack::create(2, 1, 2, 4, false, 0);
    ParamTree params;
    st.init_params(params, rng);
    Vec flat = params.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += 0.2 * rng.normal();
    params.unflatten(flat);
    const auto nu = kernels::DirectionDist::uniform(1);
    sampler::OneStepKernel kernel;
    if (negative_control) {
      kernel = [&, params](RngStream&, const Vec& z) {
        const flows::ParamsRef<double> p{&params};
        return flows::step_forward(st, 0, p, z).first;
      };
    } else {
      kernel = [&, params](RngStream& kr, const Vec& z) {
        return kernels::metflow_step(kr, target, st, 0, params, z, nu,
                                     kernels::RatioFamily::MetropolisHastings)
            .z_next;
      };
    }
    const auto rep = sampler::invariance_test(kernel, target, 400, 100 + trial, 100);
    if (rep.pass) ++passes;
  }
  r.pass = passes >= trials - 1;
  r.detail["passes"] = passes;
  r.detail["trials"] = trials;
  r.detail["negative_control"] = negative_control;
  return r;
}

SuiteResult suite_density() {
  SuiteResult r{"density"};
  const auto target = targets::make_target("std_normal", {2});
  const auto st = flows::FlowStack::create(2, 2, 2, 4, false, 0);
  RngStream rng(17, 0);
  ParamTree params;
  st.init_params(params, rng);
  density::PriorModel prior = density::PriorModel::standard(2);
  prior.init_params(params);
  Vec flat = params.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += 0.2 * rng.normal();
  params.unflatten(flat);
  const auto nu = kernels::DirectionDist::uniform(2);
  const int n = 120;
  const double lo = -8.0, hi = 8.0, h = (hi - lo) / n;
  double mass = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Vec z(2);
      z[0] = lo + (i + 0.5) * h;
      z[1] = lo + (j + 0.5) * h;
      mass += std::exp(density::marginal_logpdf(prior, st, params, nullptr, nu, z, target,
                                                kernels::RatioFamily::MetropolisHastings)) *
              h * h;
    }
  r.pass = std::abs(mass - 1.0) <= 1e-3;
  r.detail["integrated_mass"] = mass;
  return r;
}

SuiteResult suite_hmc() {
  SuiteResult r{"hmc"};
  const auto target = targets::make_target("std_normal", {3});
  RngStream rng(19, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec q = rng.normal_vec(3), p = rng.normal_vec(3);
    auto [q1, p1] = kernels::leapfrog(target, 0.1, 5, q, -p);
    auto [q2, p2] = kernels::leapfrog(target, 0.1, 5, q1, -p1);
    worst = std::max({worst, (q2 - q).lpNorm<Eigen::Infinity>(),
                      (p2 - p).lpNorm<Eigen::Infinity>()});
  }
  r.pass = worst <= 1e-8;
  r.detail["max_involution_residual"] = worst;
  return r;
}

int cmd_check(const std::string& suite, bool negative_control) {
  std::vector<SuiteResult> results;
  const bool all = suite == "all";
  if (all || suite == "grad") results.push_back(suite_grad());
  if (all || suite == "flows") results.push_back(suite_flows());
  if (all || suite == "balance") results.push_back(suite_balance(negative_control));
  if (all || suite == "density") results.push_back(suite_density());
  if (all || suite == "hmc") results.push_back(suite_hmc());
  if (results.empty()) throw ConfigError("unknown suite: " + suite);

  json report = json::array();
  bool ok = true;
  for (const auto& s : results) {
    report.push_back({{"suite", s.name}, {"pass", s.pass}, {"detail", s.detail}});
    ok = ok && s.pass;
  }
  std::cout << json{{"pass", ok}, {"suites", report}}.dump(2) << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MetFlow: Metropolized normalizing-flow samplers"};
  app.require_subcommand(1);

  std::string config_path, preset_name, ckpt_path, out_dir, suite = "all";
  std::int64_t seed = -1;
  int n = 1000, extra_kernels = 1, grid_n = 101;
  double mode_radius = 0.0, grid_lo = -12.0, grid_hi = 12.0;
  bool negative_control = false;

  auto* t = app.add_subcommand("train", "Train a sampler from a config or preset");
  t->add_option("--config", config_path, "JSON config file");
  t->add_option("--preset", preset_name, "Built-in preset name");
  t->add_option("--seed", seed, "Override the config seed");
  t->add_option("--out", out_dir, "Output directory");

  auto* s = app.add_subcommand("sample", "Draw samples from a trained checkpoint");
  s->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  s->add_option("--n", n, "Number of samples (independent chains)");
  s->add_option("--extra-kernels", extra_kernels, "Kernel iterations m (total m*K steps)");
  s->add_option("--seed", seed, "Override the checkpoint seed");
  s->add_option("--out", out_dir, "Output directory");
  s->add_option("--mode-radius", mode_radius, "Report mode occupancy at this ball radius");

  auto* e = app.add_subcommand("eval-density", "Write the exact sampler density on a grid");
  e->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  e->add_option("--n", grid_n, "Grid points per axis");
  e->add_option("--grid-lo", grid_lo, "Grid lower bound");
  e->add_option("--grid-hi", grid_hi, "Grid upper bound");
  e->add_option("--out", out_dir, "Output directory");

  auto* c = app.add_subcommand("check", "Run a self-check suite");
  c->add_option("--suite", suite, "balance|density|grad|flows|hmc|all");
  c->add_flag("--negative-control", negative_control,
              "Use a deliberately non-reversible kernel in the balance suite");

  app.add_subcommand("preset-list", "List built-in presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("preset-list")) {
      for (const auto& nm : config::preset_names()) std::cout << nm << "\n";
      return 0;
    }
    if (app.got_subcommand(t))
      return cmd_train(resolve_config(config_path, preset_name, seed, out_dir));
    if (app.got_subcommand(s))
      return cmd_sample(ckpt_path, n, extra_kernels, seed, out_dir, mode_radius);
    if (app.got_subcommand(e))
      return cmd_eval_density(ckpt_path, grid_n, grid_lo, grid_hi, out_dir);
    if (app.got_subcommand(c)) return cmd_check(suite, negative_control);
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 1;
  } catch (const ConvergenceError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 2;
}
