#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "distgp/data.hpp"
#include "distgp/error.hpp"
#include "distgp/kernels.hpp"
#include "distgp/measures.hpp"
#include "distgp/model.hpp"
#include "distgp/training.hpp"
#include "distgp/verify.hpp"
#include "support.hpp"

using namespace distgp;
using namespace testing;

namespace {

SegNetConfig small_config(std::size_t m = 8) {
  SegNetConfig c;
  c.num_inducing = m;
  return c;
}

std::vector<Tensor> scan_images(std::size_t n) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_scan(100 + i, 48).image);
  return out;
}

}  // namespace

TEST_CASE("default config derives a 16-pixel output tile and the documented stack") {
  const SegNetConfig c;
  CHECK(c.derived_output_tile() == 16);
  const auto layers = c.layer_stack();
  REQUIRE(layers.size() == 7);
  CHECK(layers[0].kind == LayerKind::ConvGP);
  CHECK(layers[6].kind == LayerKind::DistGPActivation);
  CHECK(layers[6].out_channels == 3);
  CHECK(layers[3].dilation == 2);
  for (std::size_t i = 1; i < 7; i += 2) {
    CHECK(layers[i].kind == LayerKind::AffineMeasureConv);
    CHECK(layers[i].out_channels == 12);
  }
}

TEST_CASE("config validation and JSON round trip") {
  SegNetConfig c;
  c.spatial_rank = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SegNetConfig{};
  c.output_tile = 20;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SegNetConfig{};
  c.input_tile = 8;
  c.output_tile = 0;
  CHECK_THROWS_AS(c.validate(), Error);

  const SegNetConfig d = small_config(12);
  CHECK(to_json(segnet_config_from_json(to_json(d))) == to_json(d));
  nlohmann::json j = to_json(d);
  j["surprise"] = 1;
  CHECK_THROWS_AS(segnet_config_from_json(j), Error);
}

TEST_CASE("parameter set is validated by name, shape and finiteness") {
  const SegNet net = SegNet::initialize(small_config(), scan_images(2), 1);
  const auto shapes = parameter_shapes(net.config());
  CHECK(shapes.size() == net.parameters().size());
  for (const auto& [name, t] : net.parameters()) CHECK(shapes.at(name) == t.shape());

  ParameterSet p = net.parameters();
  p.at("layer1.A") = Tensor({5, 5, 2, 11});
  CHECK_THROWS_AS(SegNet(net.config(), p), Error);
  p = net.parameters();
  p.erase("likelihood.raw_beta");
  CHECK_THROWS_AS(SegNet(net.config(), p), Error);
  p = net.parameters();
  p.at("layer0.q_mean")[0] = std::nan("");
  CHECK_THROWS_AS(SegNet(net.config(), p), Error);
  CHECK(net.beta() == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("initialization is a pure function of the seed") {
  const auto imgs = scan_images(3);
  const SegNet a = SegNet::initialize(small_config(), imgs, 5);
  const SegNet b = SegNet::initialize(small_config(), imgs, 5);
  const SegNet c = SegNet::initialize(small_config(), imgs, 6);
  CHECK(a.parameters().at("layer0.Z").values() == b.parameters().at("layer0.Z").values());
  CHECK(a.parameters().at("layer0.Z").values() != c.parameters().at("layer0.Z").values());
}

TEST_CASE("forward shapes, determinism and the variance decomposition") {
  const SegNet net = SegNet::initialize(small_config(), scan_images(2), 2);
  const Tensor tile = gen_scan(7, 48).image;
  Tensor in({32, 32, 1});
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) in(i, j, 0) = tile(i, j, 0);
  const SegForward f = net.forward(in);
  CHECK(f.logits.mean.shape() == Tensor::Shape{16, 16, 3});
  CHECK(f.h_var.shape() == Tensor::Shape{16, 16, 3});
  for (std::size_t i = 0; i < f.h_var.size(); ++i) {
    CHECK(f.logits.var[i] == f.h_var[i] + f.g_var[i]);
    CHECK(f.h_var[i] >= 0.0);
    CHECK(f.g_var[i] >= 0.0);
  }
  const SegForward g = net.forward(in);
  CHECK(f.logits.mean.values() == g.logits.mean.values());
  CHECK(f.logits.var.values() == g.logits.var.values());

  const Tensor seg = net.predict_segmentation(in);
  CHECK(seg.shape() == Tensor::Shape{16, 16});
  for (std::size_t p = 0; p < 256; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (f.logits.mean[p * 3 + k] > f.logits.mean[p * 3 + best]) best = k;
    CHECK(seg[p] == static_cast<double>(best));
  }
  CHECK_THROWS_AS(net.forward(Tensor({30, 30, 1})), Error);
}

TEST_CASE("expected log-likelihood matches a Monte-Carlo oracle and skips unlabelled pixels") {
  std::mt19937_64 rng(3);
  MeasureMap m{random_normal(rng, {1, 3, 3}), random_tensor(rng, {1, 3, 3}, 0.05, 0.5)};
  Tensor labels({1, 3});
  labels[0] = 2;
  labels[1] = kIgnoreLabel;
  labels[2] = 0;
  const double beta = 0.3;
  const double got = expected_log_lik(m, labels, beta);

  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t samples = 400000;
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t p : {0u, 2u}) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double f = m.mean[p * 3 + k] + std::sqrt(m.var[p * 3 + k]) * n01(rng);
        const double y = labels[p] == static_cast<double>(k) ? 1.0 : 0.0;
        acc += -0.5 * std::log(2.0 * M_PI * beta) - (y - f) * (y - f) / (2.0 * beta);
      }
    }
  }
  const double mc = acc / static_cast<double>(samples) / 2.0;
  CHECK(std::abs(got - mc) < 0.01 * std::abs(mc));

  Tensor none({1, 3}, kIgnoreLabel);
  CHECK(expected_log_lik(m, none, beta) == 0.0);
}

TEST_CASE("KL vanishes when every layer's posterior equals its prior") {
  const SegNetConfig c = small_config(6);
  SegNet net = SegNet::initialize(c, scan_images(2), 4);
  ParameterSet p = net.parameters();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const LayerStackEntry& l = net.layers()[i];
    if (l.kind == LayerKind::AffineMeasureConv) continue;
    const InducingSet ind = net.inducing_set(i);
    const KernelParams kp = net.kernel_params(i);
    Tensor k;
    if (ind.location_var) {
      std::vector<DiagGaussianMeasure> z;
      for (std::size_t m = 0; m < ind.locations.dim(0); ++m) {
        std::vector<double> mean, var;
        for (std::size_t d = 0; d < ind.locations.dim(1); ++d) {
          mean.push_back(ind.locations(m, d));
          var.push_back((*ind.location_var)(m, d));
        }
        z.emplace_back(mean, var);
      }
      k = rbf_w2(z, z, kp);
    } else {
      k = rbf_euclid(ind.locations, ind.locations, kp);
    }
    const Tensor lk = cholesky(k, kTrainJitter);
    p.at(l.name + ".q_mean") = Tensor(p.at(l.name + ".q_mean").shape());
    for (std::size_t ch = 0; ch < l.out_channels; ++ch) {
      Tensor raw = lk;
      for (std::size_t d = 0; d < raw.dim(0); ++d) raw(d, d) = softplus_inverse(lk(d, d));
      p.at(l.name + ".q_chol." + std::to_string(ch)) = raw;
    }
  }
  net.set_parameters(p);
  CHECK(std::abs(kl_total(net)) < 1e-8);
}

TEST_CASE("ELBO gradients match central differences on the 5-pixel micro-model") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const GradientReport g = elbo_gradient_check(seed);
    INFO("seed " << seed << " worst " << g.worst_parameter);
    CHECK(g.entries > 100);
    CHECK(g.max_rel_error < kGradientTolerance);
  }
}

TEST_CASE("elbo_gradient does not depend on the thread count") {
  const SegNet net = SegNet::initialize(small_config(), scan_images(2), 9);
  const auto scans = std::vector<SyntheticScan>{gen_scan(1, 48)};
  const TileSet ts = make_tile_set(scans, {32, 16});
  const ElboGradient a = elbo_gradient(net, ts.tiles, ts.labels, 100, 1);
  const ElboGradient b = elbo_gradient(net, ts.tiles, ts.labels, 100, 3);
  CHECK(a.terms.elbo == b.terms.elbo);
  for (const auto& [name, g] : a.grad) CHECK(g.values() == b.grad.at(name).values());
  const ElboTerms plain = elbo(net, ts.tiles, ts.labels, 100);
  CHECK(plain.elbo == doctest::Approx(a.terms.elbo).epsilon(1e-12));
}

TEST_CASE("overfitting a single tile reproduces its labels") {
  const SyntheticScan scan = gen_scan(11, 48);
  const std::vector<SyntheticScan> scans{scan};
  const TileSet all = make_tile_set(scans, {32, 16});
  TileSet one;
  one.tiles = {all.tiles[4]};
  one.labels = {all.labels[4]};
  const SegNet net = SegNet::initialize(small_config(16), one.tiles, 0);
  TrainConfig tc;
  tc.steps = 400;
  tc.learning_rate = 1e-2;
  tc.batch_size = 1;
  tc.kl_weight = 0.0;  // one tile cannot outweigh the KL terms
  const Checkpoint done = train({net, AdamState::zeros_like(net.parameters()), 0, tc}, one, tc);
  const Tensor pred = done.net.predict_segmentation(one.tiles[0]);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == one.labels[0][i];
  CHECK(static_cast<double>(hit) / static_cast<double>(pred.size()) >= 0.95);
}
