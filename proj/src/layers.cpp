#include "distgp/layers.hpp"

#include <cmath>
#include <string>

#include "distgp/error.hpp"
#include "distgp/svgp.hpp"

namespace distgp {

void MeasureMap::validate() const {
  if (mean.rank() != 3 || mean.shape() != var.shape()) {
    throw Error(ErrorKind::ShapeMismatch,
                "measure map mean " + shape_string(mean.shape()) + " var " + shape_string(var.shape()));
  }
  for (double v : var.data()) {
    if (v < 0.0) throw Error(ErrorKind::InvalidArgument, "measure map has negative variance");
  }
}

namespace ad {

namespace {

GpLayerOutput reshape_output(const Moments& m, std::size_t h, std::size_t w) {
  const std::size_t c = m.mean.shape()[1];
  const Tensor::Shape shape{h, w, c};
  return {{reshape(m.mean, shape), reshape(m.var, shape)}, reshape(m.h_var, shape), reshape(m.g_var, shape)};
}

}  // namespace

GpLayerOutput conv_gp_forward(const Tensor& image, std::size_t kernel_size, std::size_t dilation,
                              const GpVars& gp, double jitter) {
  Tape& t = gp.z_mean.tape();
  if (image.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "image must be [H,W,C]");
  const std::size_t ho = conv_output_extent(image.dim(0), kernel_size, dilation);
  const std::size_t wo = conv_output_extent(image.dim(1), kernel_size, dilation);
  const Var patches = t.constant(extract_patches(image, kernel_size, dilation));
  if (patches.shape()[1] != gp.z_mean.shape().at(1)) {
    throw Error(ErrorKind::DimensionMismatch, "inducing patch dimension " +
                                                  std::to_string(gp.z_mean.shape().at(1)) + " vs patch size " +
                                                  std::to_string(patches.shape()[1]));
  }
  const Var knm = rbf_euclid(patches, gp.z_mean, gp.variance, gp.lengthscale);
  const Var lk = cholesky(rbf_euclid(gp.z_mean, gp.z_mean, gp.variance, gp.lengthscale), jitter);
  const Var knn = broadcast_to(gp.variance, {ho * wo, 1});
  return reshape_output(svgp_predict(knm, lk, knn, gp.q_mean, gp.q_chol), ho, wo);
}

Var lipschitz_normalize(const Var& weights) {
  const auto& s = weights.shape();
  if (s.size() != 4) throw Error(ErrorKind::ShapeMismatch, "affine weights must be [k,k,Cin,Cout]");
  const std::size_t fan_in = s[0] * s[1] * s[2];
  const std::size_t cout = s[3];
  const Var flat = reshape(weights, {fan_in, cout});
  const Var norms = sqrt(sum_axis(square(flat), 0));
  for (std::size_t c = 0; c < cout; ++c) {
    if (!(norms.value()[c] > 0.0)) {
      throw Error(ErrorKind::ZeroColumn, "output channel " + std::to_string(c) + " has zero weights");
    }
  }
  const double quarter_root = std::pow(static_cast<double>(fan_in), 0.25);
  return reshape(flat / scale(norms, quarter_root), s);
}

MeasureVars affine_measure_conv(const MeasureVars& in, const Var& weights, std::size_t dilation,
                                bool lipschitz_constrained) {
  if (in.mean.shape().size() != 3 || weights.shape().size() != 4 || in.mean.shape()[2] != weights.shape()[2]) {
    throw Error(ErrorKind::ShapeMismatch, "affine_measure_conv: input " + shape_string(in.mean.shape()) +
                                              " weights " + shape_string(weights.shape()));
  }
  const Var a = lipschitz_constrained ? lipschitz_normalize(weights) : weights;
  return {conv2d(in.mean, a, dilation), conv2d(in.var, square(a), dilation)};
}

GpLayerOutput distgp_activation(const MeasureVars& in, const GpVars& gp, double jitter) {
  if (!gp.z_std) throw Error(ErrorKind::InvalidArgument, "DistGP activation needs measure-valued inducing points");
  const auto& s = in.mean.shape();
  const std::size_t h = s.at(0), w = s.at(1), c = s.at(2);
  if (gp.z_mean.shape().at(1) != c) {
    throw Error(ErrorKind::DimensionMismatch, "inducing measure dimension " +
                                                  std::to_string(gp.z_mean.shape().at(1)) + " vs " +
                                                  std::to_string(c) + " channels");
  }
  const Var mean = reshape(in.mean, {h * w, c});
  const Var sd = sqrt(reshape(in.var, {h * w, c}));
  const Var knm = rbf_w2(mean, sd, gp.z_mean, *gp.z_std, gp.variance, gp.lengthscale);
  const Var lk = cholesky(rbf_w2(gp.z_mean, *gp.z_std, gp.z_mean, *gp.z_std, gp.variance, gp.lengthscale), jitter);
  const Var knn = broadcast_to(gp.variance, {h * w, 1});
  return reshape_output(svgp_predict(knm, lk, knn, gp.q_mean, gp.q_chol), h, w);
}

}  // namespace ad

namespace {

ad::GpVars constant_vars(ad::Tape& t, const InducingSet& inducing, const KernelParams& kernel) {
  ad::GpVars gp;
  gp.z_mean = t.constant(inducing.locations);
  if (inducing.location_var) {
    Tensor sd = *inducing.location_var;
    for (double& v : sd.data()) {
      if (v < 0.0) throw Error(ErrorKind::InvalidArgument, "negative inducing variance");
      v = std::sqrt(v);
    }
    gp.z_std = t.constant(std::move(sd));
  }
  gp.q_mean = t.constant(inducing.q_mean);
  for (const Tensor& l : inducing.q_chol) gp.q_chol.push_back(t.constant(l));
  gp.variance = t.constant(Tensor::scalar(kernel.variance()));
  gp.lengthscale = t.constant(Tensor::scalar(kernel.lengthscale()));
  return gp;
}

GpLayerResult to_result(const ad::GpLayerOutput& o) {
  return {{o.out.mean.value(), o.out.var.value()}, o.h_var.value(), o.g_var.value()};
}

}  // namespace

GpLayerResult conv_gp_forward(const Tensor& image, std::size_t kernel_size, std::size_t dilation,
                              const InducingSet& inducing, const KernelParams& kernel, double jitter) {
  ad::Tape t(false);
  return to_result(ad::conv_gp_forward(image, kernel_size, dilation, constant_vars(t, inducing, kernel), jitter));
}

MeasureMap affine_measure_conv(const MeasureMap& in, const AffineMeasureConvParams& params) {
  in.validate();
  ad::Tape t(false);
  const auto out = ad::affine_measure_conv({t.constant(in.mean), t.constant(in.var)}, t.constant(params.weights),
                                           params.dilation, params.lipschitz_constrained);
  return {out.mean.value(), out.var.value()};
}

Tensor lipschitz_normalize(const Tensor& weights) {
  ad::Tape t(false);
  return ad::lipschitz_normalize(t.constant(weights)).value();
}

std::vector<double> affine_lipschitz_constants(const Tensor& weights) {
  if (weights.rank() != 4) throw Error(ErrorKind::ShapeMismatch, "affine weights must be [k,k,Cin,Cout]");
  const std::size_t cout = weights.dim(3);
  const std::size_t fan_in = weights.size() / cout;
  std::vector<double> out(cout, 0.0);
  for (std::size_t r = 0; r < fan_in; ++r) {
    for (std::size_t c = 0; c < cout; ++c) out[c] += weights[r * cout + c] * weights[r * cout + c];
  }
  for (double& v : out) v *= std::sqrt(static_cast<double>(fan_in));
  return out;
}

GpLayerResult distgp_activation(const MeasureMap& in, const InducingSet& inducing, const KernelParams& kernel,
                                double jitter) {
  in.validate();
  ad::Tape t(false);
  return to_result(ad::distgp_activation({t.constant(in.mean), t.constant(in.var)},
                                         constant_vars(t, inducing, kernel), jitter));
}

}  // namespace distgp
