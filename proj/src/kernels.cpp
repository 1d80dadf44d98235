#include "distgp/kernels.hpp"

#include <cmath>
#include <string>

#include "distgp/error.hpp"

namespace distgp {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw Error(ErrorKind::InvalidArgument, "softplus_inverse needs a positive value");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

KernelParams KernelParams::from_natural(double variance, double lengthscale) {
  return {softplus_inverse(variance), softplus_inverse(lengthscale)};
}

namespace ad {

namespace {
Var rbf_from_sqdist(const Var& sqdist, const Var& variance, const Var& lengthscale) {
  return variance * exp(neg(sqdist / square(lengthscale)));
}
}  // namespace

Var rbf_euclid(const Var& x, const Var& z, const Var& variance, const Var& lengthscale) {
  return rbf_from_sqdist(pairwise_sqdist(x, z), variance, lengthscale);
}

Var rbf_w2(const Var& mean, const Var& stddev, const Var& z_mean, const Var& z_stddev, const Var& variance,
           const Var& lengthscale) {
  const Var d = pairwise_sqdist(mean, z_mean) + pairwise_sqdist(stddev, z_stddev);
  return rbf_from_sqdist(d, variance, lengthscale);
}

}  // namespace ad

Tensor rbf_euclid(const Tensor& x, const Tensor& z, const KernelParams& params) {
  if (x.rank() != 2 || z.rank() != 2 || x.dim(1) != z.dim(1)) {
    throw Error(ErrorKind::DimensionMismatch,
                "rbf_euclid " + shape_string(x.shape()) + " vs " + shape_string(z.shape()));
  }
  ad::Tape tape(false);
  return ad::rbf_euclid(tape.constant(x), tape.constant(z), tape.constant(Tensor::scalar(params.variance())),
                        tape.constant(Tensor::scalar(params.lengthscale())))
      .value();
}

Tensor rbf_w2(std::span<const DiagGaussianMeasure> measures, std::span<const DiagGaussianMeasure> inducing,
              const KernelParams& params) {
  if (measures.empty() || inducing.empty()) throw Error(ErrorKind::EmptyInput, "rbf_w2 needs measures");
  const std::size_t d = measures[0].dim();
  auto pack = [d](std::span<const DiagGaussianMeasure> ms, Tensor& mean, Tensor& sd) {
    mean = Tensor({ms.size(), d});
    sd = Tensor({ms.size(), d});
    for (std::size_t i = 0; i < ms.size(); ++i) {
      if (ms[i].dim() != d) {
        throw Error(ErrorKind::DimensionMismatch, "measure dimension " + std::to_string(ms[i].dim()) +
                                                      " vs " + std::to_string(d));
      }
      for (std::size_t k = 0; k < d; ++k) {
        mean(i, k) = ms[i].mean[k];
        sd(i, k) = std::sqrt(ms[i].var[k]);
      }
    }
  };
  Tensor m, s, zm, zs;
  pack(measures, m, s);
  pack(inducing, zm, zs);
  ad::Tape tape(false);
  return ad::rbf_w2(tape.constant(m), tape.constant(s), tape.constant(zm), tape.constant(zs),
                    tape.constant(Tensor::scalar(params.variance())),
                    tape.constant(Tensor::scalar(params.lengthscale())))
      .value();
}

}  // namespace distgp
