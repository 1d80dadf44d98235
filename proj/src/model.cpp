#include "distgp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "distgp/error.hpp"
#include "distgp/parallel.hpp"
#include "distgp/svgp.hpp"

namespace distgp {

namespace {

constexpr double kInitQCholDiag = 1e-2;
constexpr double kInitQMeanSd = 0.1;
constexpr double kInitInducingVar = 1e-5;
constexpr double kInitInducingMeanScale = 0.5;

std::string param(const LayerStackEntry& l, const std::string& what) { return l.name + "." + what; }
std::string chol_name(const LayerStackEntry& l, std::size_t c) { return l.name + ".q_chol." + std::to_string(c); }

bool is_gp(LayerKind k) { return k != LayerKind::AffineMeasureConv; }

std::map<std::string, Tensor::Shape> expected_shapes(const SegNetConfig& config,
                                                     const std::vector<LayerStackEntry>& layers) {
  std::map<std::string, Tensor::Shape> out;
  for (const LayerStackEntry& l : layers) {
    switch (l.kind) {
      case LayerKind::ConvGP:
        out[param(l, "Z")] = {l.num_inducing, l.kernel_size * l.kernel_size * l.in_channels};
        break;
      case LayerKind::DistGPActivation:
        out[param(l, "Z_mean")] = {l.num_inducing, l.in_channels};
        out[param(l, "Z_logvar")] = {l.num_inducing, l.in_channels};
        break;
      case LayerKind::AffineMeasureConv:
        out[param(l, "A")] = {l.kernel_size, l.kernel_size, l.in_channels, l.out_channels};
        break;
    }
    if (is_gp(l.kind)) {
      out[param(l, "q_mean")] = {l.num_inducing, l.out_channels};
      for (std::size_t c = 0; c < l.out_channels; ++c) out[chol_name(l, c)] = {l.num_inducing, l.num_inducing};
      out[param(l, "kernel.raw_variance")] = {};
      out[param(l, "kernel.raw_lengthscale")] = {};
    }
  }
  (void)config;
  out["likelihood.raw_beta"] = {};
  return out;
}

const Tensor& lookup(const ParameterSet& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorKind::InvalidArgument, "missing parameter " + name);
  return it->second;
}

Tensor lower_factor(const Tensor& raw) {
  ad::Tape t(false);
  return ad::lower_from_raw(t.constant(raw)).value();
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::ConvGP: return "ConvGP";
    case LayerKind::AffineMeasureConv: return "AffineMeasureConv";
    case LayerKind::DistGPActivation: return "DistGPActivation";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Config

std::size_t SegNetConfig::derived_output_tile() const {
  std::size_t shrink = 0;
  for (std::size_t i = 0; i < kernel_sizes.size() && i < dilations.size(); ++i) {
    shrink += dilations[i] * (kernel_sizes[i] == 0 ? 0 : kernel_sizes[i] - 1);
  }
  return input_tile > shrink ? input_tile - shrink : 0;
}

void SegNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (spatial_rank != 2) fail("spatial_rank must be 2 (rank-3 execution is not supported)");
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (kernel_sizes.size() < 2) fail("kernel_sizes needs at least the ConvGP and the head affine entries");
  if (kernel_sizes.size() != dilations.size()) fail("kernel_sizes and dilations differ in length");
  for (std::size_t k : kernel_sizes) {
    if (k < 1) fail("kernel sizes must be >= 1");
  }
  for (std::size_t d : dilations) {
    if (d < 1) fail("dilations must be >= 1");
  }
  if (num_inducing < 1) fail("num_inducing must be >= 1");
  if (activation_channels < 1 || pre_channels < 1) fail("channel counts must be >= 1");
  if (!(likelihood_noise > 0.0) || !std::isfinite(likelihood_noise)) fail("likelihood_noise must be > 0");
  const std::size_t out = derived_output_tile();
  if (out < 1) fail("input_tile " + std::to_string(input_tile) + " is smaller than the receptive field");
  if (output_tile != out) {
    fail("output_tile " + std::to_string(output_tile) + " does not match input_tile minus shrinkage (" +
         std::to_string(out) + ")");
  }
}

std::vector<LayerStackEntry> SegNetConfig::layer_stack() const {
  validate();
  std::vector<LayerStackEntry> layers;
  auto name = [&] { return "layer" + std::to_string(layers.size()); };
  layers.push_back({LayerKind::ConvGP, name(), kernel_sizes[0], dilations[0], input_channels, activation_channels,
                    num_inducing});
  for (std::size_t i = 1; i < kernel_sizes.size(); ++i) {
    const bool head = i + 1 == kernel_sizes.size();
    layers.push_back({LayerKind::AffineMeasureConv, name(), kernel_sizes[i], dilations[i], activation_channels,
                      pre_channels, 0});
    layers.push_back({LayerKind::DistGPActivation, name(), 1, 1, pre_channels,
                      head ? num_classes : activation_channels, num_inducing});
  }
  return layers;
}

nlohmann::json to_json(const SegNetConfig& c) {
  return {{"spatial_rank", c.spatial_rank},
          {"input_channels", c.input_channels},
          {"num_classes", c.num_classes},
          {"input_tile", c.input_tile},
          {"output_tile", c.output_tile},
          {"kernel_sizes", c.kernel_sizes},
          {"dilations", c.dilations},
          {"num_inducing", c.num_inducing},
          {"activation_channels", c.activation_channels},
          {"pre_channels", c.pre_channels},
          {"likelihood_noise", c.likelihood_noise},
          {"lipschitz", c.lipschitz},
          {"seed", c.seed}};
}

SegNetConfig segnet_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "model config must be an object");
  SegNetConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error(ErrorKind::Config, "unknown model key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("spatial_rank", c.spatial_rank);
    get("input_channels", c.input_channels);
    get("num_classes", c.num_classes);
    get("input_tile", c.input_tile);
    get("kernel_sizes", c.kernel_sizes);
    get("dilations", c.dilations);
    get("num_inducing", c.num_inducing);
    get("activation_channels", c.activation_channels);
    get("pre_channels", c.pre_channels);
    get("likelihood_noise", c.likelihood_noise);
    get("lipschitz", c.lipschitz);
    get("seed", c.seed);
    c.output_tile = c.derived_output_tile();
    get("output_tile", c.output_tile);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// SegNet

SegNet::SegNet(SegNetConfig config, ParameterSet params)
    : config_(std::move(config)), layers_(config_.layer_stack()) {
  set_parameters(std::move(params));
}

std::map<std::string, Tensor::Shape> parameter_shapes(const SegNetConfig& config) {
  return expected_shapes(config, config.layer_stack());
}

void SegNet::set_parameters(ParameterSet params) {
  const auto expected = expected_shapes(config_, layers_);
  for (const auto& [name, shape] : expected) {
    const auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorKind::ShapeMismatch, "missing parameter " + name);
    if (it->second.shape() != shape) {
      throw Error(ErrorKind::ShapeMismatch, "parameter " + name + " has shape " + shape_string(it->second.shape()) +
                                                ", expected " + shape_string(shape));
    }
    if (!it->second.all_finite()) throw Error(ErrorKind::NonFinite, "parameter " + name);
  }
  for (const auto& [name, value] : params) {
    if (!expected.contains(name)) throw Error(ErrorKind::ShapeMismatch, "unexpected parameter " + name);
  }
  params_ = std::move(params);
}

SegNet SegNet::initialize(const SegNetConfig& config, std::span<const Tensor> training_images, std::uint64_t seed) {
  const auto layers = config.layer_stack();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParameterSet p;

  for (const LayerStackEntry& l : layers) {
    if (l.kind == LayerKind::ConvGP) {
      if (training_images.empty()) throw Error(ErrorKind::EmptyInput, "no training images to sample Z0 from");
      const std::size_t k = l.kernel_size, d = l.dilation, c = l.in_channels;
      Tensor z({l.num_inducing, k * k * c});
      std::uniform_int_distribution<std::size_t> pick(0, training_images.size() - 1);
      for (std::size_t m = 0; m < l.num_inducing; ++m) {
        const Tensor& img = training_images[pick(rng)];
        if (img.rank() != 3 || img.dim(2) != c) {
          throw Error(ErrorKind::ShapeMismatch, "training image " + shape_string(img.shape()));
        }
        const std::size_t ho = conv_output_extent(img.dim(0), k, d), wo = conv_output_extent(img.dim(1), k, d);
        const std::size_t y = std::uniform_int_distribution<std::size_t>(0, ho - 1)(rng);
        const std::size_t x = std::uniform_int_distribution<std::size_t>(0, wo - 1)(rng);
        std::size_t col = 0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) z(m, col++) = img(y + i * d, x + j * d, ch);
      }
      p[param(l, "Z")] = std::move(z);
    } else if (l.kind == LayerKind::DistGPActivation) {
      Tensor zm({l.num_inducing, l.in_channels});
      for (double& v : zm.data()) v = kInitInducingMeanScale * normal(rng);
      p[param(l, "Z_mean")] = std::move(zm);
      p[param(l, "Z_logvar")] = Tensor({l.num_inducing, l.in_channels}, std::log(kInitInducingVar));
    } else {
      const std::size_t fan_in = l.kernel_size * l.kernel_size * l.in_channels;
      Tensor a({l.kernel_size, l.kernel_size, l.in_channels, l.out_channels});
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : a.data()) v = sd * normal(rng);
      p[param(l, "A")] = std::move(a);
    }
    if (is_gp(l.kind)) {
      Tensor qm({l.num_inducing, l.out_channels});
      for (double& v : qm.data()) v = kInitQMeanSd * normal(rng);
      p[param(l, "q_mean")] = std::move(qm);
      for (std::size_t c = 0; c < l.out_channels; ++c) {
        Tensor raw({l.num_inducing, l.num_inducing});
        for (std::size_t i = 0; i < l.num_inducing; ++i) raw(i, i) = softplus_inverse(kInitQCholDiag);
        p[chol_name(l, c)] = std::move(raw);
      }
      const KernelParams kp = KernelParams::from_natural(1.0, 1.0);
      p[param(l, "kernel.raw_variance")] = Tensor::scalar(kp.raw_variance);
      p[param(l, "kernel.raw_lengthscale")] = Tensor::scalar(kp.raw_lengthscale);
    }
  }
  p["likelihood.raw_beta"] = Tensor::scalar(softplus_inverse(config.likelihood_noise));
  return SegNet(config, std::move(p));
}

InducingSet SegNet::inducing_set(std::size_t layer) const {
  const LayerStackEntry& l = layers_.at(layer);
  if (!is_gp(l.kind)) throw Error(ErrorKind::InvalidArgument, l.name + " is not a GP layer");
  InducingSet s;
  if (l.kind == LayerKind::ConvGP) {
    s.locations = lookup(params_, param(l, "Z"));
  } else {
    s.locations = lookup(params_, param(l, "Z_mean"));
    Tensor var = lookup(params_, param(l, "Z_logvar"));
    for (double& v : var.data()) v = std::exp(v);
    s.location_var = std::move(var);
  }
  s.q_mean = lookup(params_, param(l, "q_mean"));
  for (std::size_t c = 0; c < l.out_channels; ++c) s.q_chol.push_back(lower_factor(lookup(params_, chol_name(l, c))));
  return s;
}

KernelParams SegNet::kernel_params(std::size_t layer) const {
  const LayerStackEntry& l = layers_.at(layer);
  if (!is_gp(l.kind)) throw Error(ErrorKind::InvalidArgument, l.name + " is not a GP layer");
  return {lookup(params_, param(l, "kernel.raw_variance")).item(),
          lookup(params_, param(l, "kernel.raw_lengthscale")).item()};
}

AffineMeasureConvParams SegNet::affine_params(std::size_t layer) const {
  const LayerStackEntry& l = layers_.at(layer);
  if (l.kind != LayerKind::AffineMeasureConv) throw Error(ErrorKind::InvalidArgument, l.name + " is not affine");
  return {lookup(params_, param(l, "A")), l.dilation, config_.lipschitz};
}

double SegNet::beta() const { return softplus(lookup(params_, "likelihood.raw_beta").item()); }

SegForward SegNet::forward(const Tensor& tile, double jitter) const {
  ad::Tape t(false);
  const auto out = ad::forward(*this, ad::bind(t, params_, false), tile, jitter);
  return {{out.logits.mean.value(), out.logits.var.value()}, out.h_var.value(), out.g_var.value()};
}

Tensor SegNet::predict_segmentation(const Tensor& tile, double jitter) const {
  const SegForward f = forward(tile, jitter);
  const std::size_t h = f.logits.height(), w = f.logits.width(), k = f.logits.channels();
  Tensor out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (f.logits.mean[i * k + c] > f.logits.mean[i * k + best]) best = c;
    }
    out[i] = static_cast<double>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable graph

namespace ad {

ParamVars bind(Tape& tape, const ParameterSet& params, bool trainable) {
  ParamVars out;
  for (const auto& [name, value] : params) out.emplace(name, trainable ? tape.leaf(value) : tape.constant(value));
  return out;
}

namespace {

const Var& lookup_var(const ParamVars& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorKind::InvalidArgument, "missing parameter " + name);
  return it->second;
}

GpVars gp_vars(const LayerStackEntry& l, const ParamVars& p) {
  GpVars gp;
  if (l.kind == LayerKind::ConvGP) {
    gp.z_mean = lookup_var(p, param(l, "Z"));
  } else {
    gp.z_mean = lookup_var(p, param(l, "Z_mean"));
    gp.z_std = exp(scale(lookup_var(p, param(l, "Z_logvar")), 0.5));
  }
  gp.q_mean = lookup_var(p, param(l, "q_mean"));
  for (std::size_t c = 0; c < l.out_channels; ++c) gp.q_chol.push_back(lower_from_raw(lookup_var(p, chol_name(l, c))));
  gp.variance = softplus(lookup_var(p, param(l, "kernel.raw_variance")));
  gp.lengthscale = softplus(lookup_var(p, param(l, "kernel.raw_lengthscale")));
  return gp;
}

Var inducing_gram(const LayerStackEntry& l, const GpVars& gp) {
  if (l.kind == LayerKind::ConvGP) return rbf_euclid(gp.z_mean, gp.z_mean, gp.variance, gp.lengthscale);
  return rbf_w2(gp.z_mean, *gp.z_std, gp.z_mean, *gp.z_std, gp.variance, gp.lengthscale);
}

}  // namespace

SegForwardVars forward(const SegNet& net, const ParamVars& p, const Tensor& tile, double jitter) {
  const SegNetConfig& cfg = net.config();
  if (tile.shape() != Tensor::Shape{cfg.input_tile, cfg.input_tile, cfg.input_channels}) {
    throw Error(ErrorKind::ShapeMismatch, "tile " + shape_string(tile.shape()) + " does not match input_tile " +
                                              std::to_string(cfg.input_tile));
  }
  MeasureVars state;
  Var h, g;
  for (const LayerStackEntry& l : net.layers()) {
    switch (l.kind) {
      case LayerKind::ConvGP: {
        const GpLayerOutput o = conv_gp_forward(tile, l.kernel_size, l.dilation, gp_vars(l, p), jitter);
        state = o.out;
        h = o.h_var;
        g = o.g_var;
        break;
      }
      case LayerKind::AffineMeasureConv:
        state = affine_measure_conv(state, lookup_var(p, param(l, "A")), l.dilation, cfg.lipschitz);
        break;
      case LayerKind::DistGPActivation: {
        const GpLayerOutput o = distgp_activation(state, gp_vars(l, p), jitter);
        state = o.out;
        h = o.h_var;
        g = o.g_var;
        break;
      }
    }
  }
  return {state, h, g};
}

Var expected_log_lik(const MeasureVars& logits, const Tensor& labels, const Var& beta) {
  const auto& s = logits.mean.shape();
  const std::size_t h = s.at(0), w = s.at(1), k = s.at(2);
  if (labels.size() != h * w) {
    throw Error(ErrorKind::ShapeMismatch, "labels " + shape_string(labels.shape()) + " for logits " + shape_string(s));
  }
  Tensor onehot({h, w, k});
  Tensor mask({h, w, 1});
  std::size_t valid = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    const double lab = labels[i];
    if (lab < 0.0) continue;
    const auto cls = static_cast<std::size_t>(lab);
    if (cls >= k || static_cast<double>(cls) != lab) {
      throw Error(ErrorKind::InvalidArgument, "label " + std::to_string(lab) + " outside [0, " + std::to_string(k) + ")");
    }
    onehot[i * k + cls] = 1.0;
    mask[i] = 1.0;
    ++valid;
  }
  Tape& t = logits.mean.tape();
  if (valid == 0) return t.constant(Tensor::scalar(0.0));
  const Var resid = sum(t.constant(std::move(mask)) * (square(t.constant(std::move(onehot)) - logits.mean) + logits.var));
  const double kd = static_cast<double>(k);
  const Var log_term = scale(add_scalar(log(beta), std::log(2.0 * std::numbers::pi)), -0.5 * kd);
  return log_term - scale(resid / beta, 0.5 / static_cast<double>(valid));
}

Var kl_total(const SegNet& net, const ParamVars& p, double jitter) {
  Var total;
  for (const LayerStackEntry& l : net.layers()) {
    if (!is_gp(l.kind)) continue;
    const GpVars gp = gp_vars(l, p);
    const Var kl = svgp_kl(gp.q_mean, gp.q_chol, cholesky(inducing_gram(l, gp), jitter));
    total = total.valid() ? total + kl : kl;
  }
  return total;
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Objective

double expected_log_lik(const MeasureMap& logits, const Tensor& labels, double beta) {
  ad::Tape t(false);
  return ad::expected_log_lik({t.constant(logits.mean), t.constant(logits.var)}, labels,
                              t.constant(Tensor::scalar(beta)))
      .value()
      .item();
}

double kl_total(const SegNet& net, double jitter) {
  ad::Tape t(false);
  return ad::kl_total(net, ad::bind(t, net.parameters(), false), jitter).value().item();
}

namespace {

void check_batch(std::span<const Tensor> tiles, std::span<const Tensor> labels, std::size_t dataset_size) {
  if (tiles.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
  if (tiles.size() != labels.size()) throw Error(ErrorKind::ShapeMismatch, "tiles and labels differ in count");
  if (dataset_size < 1) throw Error(ErrorKind::InvalidArgument, "dataset_size must be >= 1");
}

}  // namespace

ElboTerms elbo(const SegNet& net, std::span<const Tensor> tiles, std::span<const Tensor> labels,
               std::size_t dataset_size, double jitter) {
  check_batch(tiles, labels, dataset_size);
  ElboTerms terms;
  double ell = 0.0;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    ad::Tape t(false);
    const auto pv = ad::bind(t, net.parameters(), false);
    const auto f = ad::forward(net, pv, tiles[i], jitter);
    ell += ad::expected_log_lik(f.logits, labels[i], softplus(pv.at("likelihood.raw_beta"))).value().item();
  }
  terms.exp_log_lik = static_cast<double>(dataset_size) / static_cast<double>(tiles.size()) * ell;
  terms.kl_total = kl_total(net, jitter);
  terms.elbo = terms.exp_log_lik - terms.kl_total;
  return terms;
}

ElboGradient elbo_gradient(const SegNet& net, std::span<const Tensor> tiles, std::span<const Tensor> labels,
                           std::size_t dataset_size, std::size_t threads, double jitter, double kl_weight) {
  check_batch(tiles, labels, dataset_size);
  const ParameterSet& params = net.parameters();
  std::vector<double> ell(tiles.size());
  std::vector<ParameterSet> grads(tiles.size());
  parallel_for(tiles.size(), threads, [&](std::size_t i) {
    ad::Tape t;
    const auto pv = ad::bind(t, params, true);
    const auto f = ad::forward(net, pv, tiles[i], jitter);
    const ad::Var e = ad::expected_log_lik(f.logits, labels[i], ad::softplus(pv.at("likelihood.raw_beta")));
    t.backward(e);
    ell[i] = e.value().item();
    for (const auto& [name, v] : pv) grads[i].emplace(name, v.grad());
  });

  ElboGradient out;
  ad::Tape t;
  const auto pv = ad::bind(t, params, true);
  const ad::Var kl = ad::kl_total(net, pv, jitter);
  t.backward(kl);

  const double scale = static_cast<double>(dataset_size) / static_cast<double>(tiles.size());
  double ell_sum = 0.0;
  for (double e : ell) ell_sum += e;
  out.terms.exp_log_lik = scale * ell_sum;
  out.terms.kl_total = kl.value().item();
  out.terms.elbo = out.terms.exp_log_lik - out.terms.kl_total;
  for (const auto& [name, v] : pv) {
    Tensor g = v.grad();
    for (double& x : g.data()) x *= -kl_weight;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const Tensor& gi = grads[i].at(name);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * gi[k];
    }
    out.grad.emplace(name, std::move(g));
  }
  return out;
}

}  // namespace distgp
