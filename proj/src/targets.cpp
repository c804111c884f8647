#include "metflow/targets.hpp"

#include <cmath>
#include <map>
#include <numeric>

namespace metflow::targets {

TargetModel gaussian_mixture(const MixtureSpec& spec) {
  if (spec.centers.empty()) throw ConfigError("gaussian_mixture: no centers");
  if (spec.sigma <= 0.0) throw ConfigError("gaussian_mixture: sigma must be positive");
  const int dim = static_cast<int>(spec.centers.front().size());
  for (const Vec& c : spec.centers)
    if (static_cast<int>(c.size()) != dim)
      throw ConfigError("gaussian_mixture: inconsistent center dimensions");
  const std::size_t m = spec.centers.size();
  std::vector<double> w = spec.weights;
  if (w.empty()) w.assign(m, 1.0 / static_cast<double>(m));
  if (w.size() != m) throw ConfigError("gaussian_mixture: weight count mismatch");
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("gaussian_mixture: weights must sum to 1");

  const double inv2s2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
  const double invs2 = 1.0 / (spec.sigma * spec.sigma);
  auto centers = spec.centers;

  // log pi(z) = log sum_m w_m exp(-|z-c_m|^2 / 2 sigma^2), unnormalized kernel
  auto log_terms = [centers, w, inv2s2](const Vec& z) {
    std::vector<double> lt(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i)
      lt[i] = std::log(w[i]) - (z - centers[i]).squaredNorm() * inv2s2;
    return lt;
  };

  TargetModel t;
  t.dim = dim;
  t.log_density = [log_terms](const Vec& z) {
    const auto lt = log_terms(z);
    const double mx = *std::max_element(lt.begin(), lt.end());
    double s = 0.0;
    for (double v : lt) s += std::exp(v - mx);
    return mx + std::log(s);
  };
  t.grad_log_density = [log_terms, centers, invs2, dim](const Vec& z) {
    const auto lt = log_terms(z);
    const double mx = *std::max_element(lt.begin(), lt.end());
    double s = 0.0;
    std::vector<double> e(lt.size());
    for (std::size_t i = 0; i < lt.size(); ++i) {
      e[i] = std::exp(lt[i] - mx);
      s += e[i];
    }
    Vec g = Vec::Zero(dim);
    for (std::size_t i = 0; i < centers.size(); ++i)
      g += (e[i] / s) * (centers[i] - z) * invs2;
    return g;
  };
  t.exact_sampler = [centers, w, sigma = spec.sigma, dim](RngStream& rng) {
    double u = rng.uniform();
    std::size_t idx = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (u < acc) {
        idx = i;
        break;
      }
      idx = i;
    }
    return Vec(centers[idx] + sigma * rng.normal_vec(dim));
  };
  return t;
}

MixtureSpec ring8_spec(double radius, double sigma) {
  MixtureSpec spec;
  spec.sigma = sigma;
  for (int i = 0; i < 8; ++i) {
    const double th = 2.0 * M_PI * i / 8.0;
    Vec c(2);
    c << radius * std::cos(th), radius * std::sin(th);
    spec.centers.push_back(c);
  }
  return spec;
}

TargetModel neal_funnel(double sigma1) {
  if (sigma1 <= 0.0) throw ConfigError("neal_funnel: sigma1 must be positive");
  TargetModel t;
  t.dim = 2;
  const double inv_s1sq = 1.0 / (sigma1 * sigma1);
  // z2 | z1 ~ N(0, e^{z1}); the -z1/2 term is the conditional normalizer,
  // so the z1 marginal is exactly N(0, sigma1^2).
  t.log_density = [inv_s1sq](const Vec& z) {
    return -0.5 * z[0] * z[0] * inv_s1sq - 0.5 * z[1] * z[1] * std::exp(-z[0]) - 0.5 * z[0];
  };
  t.grad_log_density = [inv_s1sq](const Vec& z) {
    Vec g(2);
    const double e = std::exp(-z[0]);
    g[0] = -z[0] * inv_s1sq + 0.5 * z[1] * z[1] * e - 0.5;
    g[1] = -z[1] * e;
    return g;
  };
  t.exact_sampler = [sigma1](RngStream& rng) {
    Vec z(2);
    z[0] = sigma1 * rng.normal();
    z[1] = std::exp(0.5 * z[0]) * rng.normal();
    return z;
  };
  return t;
}

std::vector<Vec> hypercube_centers(int d, double half_width) {
  if (d < 2) throw ConfigError("hypercube_mixture: d must be >= 2");
  if (d == 2) {
    auto spec = ring8_spec();
    return spec.centers;
  }
  // 8 distinct corners: sign patterns from the low 3 bits, remaining
  // coordinates at +half_width
  std::vector<Vec> centers;
  for (int corner = 0; corner < 8; ++corner) {
    Vec c = Vec::Constant(d, half_width);
    for (int b = 0; b < 3; ++b)
      if (corner & (1 << b)) c[b] = -half_width;
    centers.push_back(c);
  }
  return centers;
}

TargetModel hypercube_mixture(int d, double half_width) {
  MixtureSpec spec;
  spec.sigma = 1.0;
  spec.centers = hypercube_centers(d, half_width);
  return gaussian_mixture(spec);
}

namespace {
std::map<std::string, TargetFactory>& registry() {
  static std::map<std::string, TargetFactory> reg = [] {
    std::map<std::string, TargetFactory> r;
    r["ring8"] = [](const std::vector<double>& p) {
      const double radius = p.size() > 0 ? p[0] : 8.0;
      const double sigma = p.size() > 1 ? p[1] : 1.0;
      return gaussian_mixture(ring8_spec(radius, sigma));
    };
    r["funnel"] = [](const std::vector<double>& p) {
      return neal_funnel(p.empty() ? 1.0 : p[0]);
    };
    r["hypercube"] = [](const std::vector<double>& p) {
      const int d = p.empty() ? 4 : static_cast<int>(p[0]);
      const double hw = p.size() > 1 ? p[1] : 5.0;
      return hypercube_mixture(d, hw);
    };
    r["std_normal"] = [](const std::vector<double>& p) {
      const int d = p.empty() ? 2 : static_cast<int>(p[0]);
      TargetModel t;
      t.dim = d;
      t.log_density = [](const Vec& z) { return -0.5 * z.squaredNorm(); };
      t.grad_log_density = [](const Vec& z) { return Vec(-z); };
      t.exact_sampler = [d](RngStream& rng) { return rng.normal_vec(d); };
      return t;
    };
    return r;
  }();
  return reg;
}
}  // namespace

void register_target(const std::string& name, TargetFactory factory) {
  registry()[name] = std::move(factory);
}

bool has_target(const std::string& name) { return registry().count(name) > 0; }

TargetModel make_target(const std::string& name, const std::vector<double>& params) {
  auto it = registry().find(name);
  if (it == registry().end()) throw ConfigError("unknown target: " + name);
  return it->second(params);
}

std::vector<std::string> registered_targets() {
  std::vector<std::string> names;
  for (const auto& [name, f] : registry()) names.push_back(name);
  return names;
}

}  // namespace metflow::targets
