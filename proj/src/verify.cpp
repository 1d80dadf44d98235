#include "distgp/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "distgp/data.hpp"
#include "distgp/error.hpp"
#include "distgp/lipschitz.hpp"
#include "distgp/measures.hpp"

namespace distgp {

SegNetConfig micro_model_config() {
  SegNetConfig c;
  c.num_classes = 3;
  c.input_tile = 1;
  c.output_tile = 1;
  c.kernel_sizes = {1, 1, 1, 1};
  c.dilations = {1, 1, 1, 1};
  c.num_inducing = 3;
  c.activation_channels = 2;
  c.pre_channels = 2;
  return c;
}

GradientReport elbo_gradient_check(std::uint64_t seed, double step, double floor) {
  const SegNetConfig config = micro_model_config();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor> tiles, labels;
  for (int i = 0; i < 5; ++i) {
    tiles.push_back(Tensor({1, 1, 1}, normal(rng)));
    labels.push_back(Tensor({1, 1}, static_cast<double>(rng() % config.num_classes)));
  }
  SegNet net = SegNet::initialize(config, tiles, seed);
  // Move away from the symmetric initial point so every entry has a generic gradient.
  ParameterSet params = net.parameters();
  for (auto& [name, t] : params) {
    for (double& v : t.data()) v += 0.3 * normal(rng);
  }
  net.set_parameters(params);

  const std::size_t n = 20;
  const ElboGradient analytic = elbo_gradient(net, tiles, labels, n);
  GradientReport report;
  for (auto& [name, t] : params) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      net.set_parameters(params);
      const double up = elbo(net, tiles, labels, n).elbo;
      t[i] = orig - step;
      net.set_parameters(params);
      const double down = elbo(net, tiles, labels, n).elbo;
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.grad.at(name)[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
      ++report.entries;
    }
  }
  net.set_parameters(params);
  return report;
}

Tensor effective_affine_weights(const SegNet& net, std::size_t layer) {
  const AffineMeasureConvParams p = net.affine_params(layer);
  return p.lipschitz_constrained ? lipschitz_normalize(p.weights) : p.weights;
}

namespace {

SuiteResult normalization_suite(const SegNet& net, const VerifyOptions& options) {
  SuiteResult r{"lipschitz_normalization", true, nlohmann::json::array()};
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.layers()[i].kind != LayerKind::AffineMeasureConv) continue;
    const bool constrained = net.affine_params(i).lipschitz_constrained;
    nlohmann::json entry = {{"layer", net.layers()[i].name}, {"constrained", constrained}};
    if (!constrained && !options.require_lipschitz) {
      entry["checked"] = false;
      r.detail.push_back(entry);
      continue;
    }
    const std::vector<double> consts = affine_lipschitz_constants(effective_affine_weights(net, i));
    double worst = 0.0;
    std::size_t bad = 0;
    for (double c : consts) {
      worst = std::max(worst, std::abs(c - 1.0));
      bad += !(std::abs(c - 1.0) <= kNormalizationTolerance);
    }
    entry["checked"] = true;
    entry["max_abs_deviation"] = worst;
    entry["violating_channels"] = bad;
    if (bad > 0) {
      r.passed = false;
      entry["violation"] = "sqrt(C)*|A_c|^2 != 1 in " + std::to_string(bad) + " of " +
                           std::to_string(consts.size()) + " channels";
    }
    r.detail.push_back(entry);
  }
  return r;
}

SuiteResult prop2_suite(const SegNet& net, const VerifyOptions& options) {
  SuiteResult r{"prop2", true, nlohmann::json::array()};
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.layers()[i].kind != LayerKind::AffineMeasureConv) continue;
    const Tensor w = effective_affine_weights(net, i);
    const std::size_t cin = w.size() / w.dim(3), cout = w.dim(3);
    const std::size_t per_channel = std::max<std::size_t>(1, options.prop2_trials / cout);
    LipschitzCheck total;
    for (std::size_t c = 0; c < cout; ++c) {
      Tensor col({cin, 1});
      for (std::size_t k = 0; k < cin; ++k) col[k] = w[k * cout + c];
      const LipschitzCheck chk = verify_prop2(col, per_channel, mix_seed(options.seed, i * 1000 + c));
      total.trials += chk.trials;
      total.violations += chk.violations;
      total.constant = std::max(total.constant, chk.constant);
      total.worst_ratio = std::max(total.worst_ratio, chk.worst_ratio / chk.constant);
    }
    r.passed = r.passed && total.violations == 0;
    r.detail.push_back({{"layer", net.layers()[i].name},
                        {"trials", total.trials},
                        {"violations", total.violations},
                        {"max_constant", total.constant},
                        {"worst_ratio_over_constant", total.worst_ratio}});
  }
  return r;
}

SuiteResult prop1_suite(const SegNet& net, const VerifyOptions& options) {
  SuiteResult r{"prop1", true, nlohmann::json::array()};
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.layers()[i].kind != LayerKind::DistGPActivation) continue;
    const LipschitzCheck chk =
        verify_prop1(net.inducing_set(i), net.kernel_params(i), options.prop1_trials, mix_seed(options.seed, i));
    r.passed = r.passed && chk.violations == 0;
    r.detail.push_back({{"layer", net.layers()[i].name},
                        {"trials", chk.trials},
                        {"violations", chk.violations},
                        {"constant", chk.constant},
                        {"worst_ratio", chk.worst_ratio}});
  }
  return r;
}

SuiteResult axioms_suite(const VerifyOptions& options) {
  std::mt19937_64 rng(mix_seed(options.seed, 0xa710));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> var(0.0, 2.0);
  auto draw = [&](std::size_t d) {
    DiagGaussianMeasure m;
    for (std::size_t k = 0; k < d; ++k) {
      m.mean.push_back(normal(rng));
      m.var.push_back(var(rng));
    }
    return m;
  };
  std::size_t asym = 0, nonzero_self = 0, triangle = 0;
  double worst_slack = 0.0;
  for (std::size_t t = 0; t < options.axiom_triples; ++t) {
    const std::size_t d = 1 + t % 8;
    const DiagGaussianMeasure a = draw(d), b = draw(d), c = draw(d);
    asym += w2(a, b) != w2(b, a);
    nonzero_self += w2(a, a) != 0.0;
    const double slack = w2(a, b) + w2(b, c) - w2(a, c);
    worst_slack = std::min(worst_slack, slack);
    triangle += slack < -1e-12;
  }
  return {"w2_metric_axioms", asym == 0 && nonzero_self == 0 && triangle == 0,
          {{"triples", options.axiom_triples},
           {"symmetry_failures", asym},
           {"identity_failures", nonzero_self},
           {"triangle_failures", triangle},
           {"worst_triangle_slack", worst_slack}}};
}

SuiteResult decomposition_suite(const SegNet& net, const VerifyOptions& options) {
  std::mt19937_64 rng(mix_seed(options.seed, 0xdec0));
  std::normal_distribution<double> normal(0.0, 0.5);
  const auto& c = net.config();
  double worst = 0.0;
  for (std::size_t t = 0; t < options.decomposition_tiles; ++t) {
    Tensor tile({c.input_tile, c.input_tile, c.input_channels});
    for (double& v : tile.data()) v = normal(rng);
    const SegForward f = net.forward(tile);
    for (std::size_t i = 0; i < f.h_var.size(); ++i) {
      worst = std::max(worst, std::abs(f.logits.var[i] - (f.h_var[i] + f.g_var[i])));
    }
  }
  return {"variance_decomposition", worst == 0.0, {{"tiles", options.decomposition_tiles}, {"max_abs_error", worst}}};
}

SuiteResult gradient_suite(const VerifyOptions& options) {
  const GradientReport g = elbo_gradient_check(options.seed);
  return {"elbo_gradient",
          g.max_rel_error <= kGradientTolerance,
          {{"entries", g.entries}, {"max_rel_error", g.max_rel_error}, {"worst_parameter", g.worst_parameter},
           {"tolerance", kGradientTolerance}}};
}

}  // namespace

std::vector<SuiteResult> verify_model(const SegNet& net, const VerifyOptions& options) {
  return {normalization_suite(net, options), prop2_suite(net, options),        prop1_suite(net, options),
          axioms_suite(options),             decomposition_suite(net, options), gradient_suite(options)};
}

nlohmann::json to_json(const std::vector<SuiteResult>& suites) {
  nlohmann::json out = nlohmann::json::object();
  bool all = true;
  for (const SuiteResult& s : suites) {
    out["suites"][s.name] = {{"passed", s.passed}, {"detail", s.detail}};
    all = all && s.passed;
  }
  out["passed"] = all;
  return out;
}

}  // namespace distgp
