#include "distgp/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>

#include "distgp/error.hpp"
#include "distgp/linalg.hpp"

namespace distgp {

namespace {

void tally(LipschitzCheck& check, double out_sq, double in_sq) {
  if (out_sq > check.constant * in_sq * (1.0 + kLipschitzRelSlack) + kLipschitzAbsSlack) ++check.violations;
  if (in_sq > 0.0) check.worst_ratio = std::max(check.worst_ratio, out_sq / in_sq);
  ++check.trials;
}

double output_w2_squared(const MeasureMap& out, std::size_t a, std::size_t b) {
  const std::size_t c = out.channels();
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double dm = out.mean[a * c + k] - out.mean[b * c + k];
    const double ds = std::sqrt(out.var[a * c + k]) - std::sqrt(out.var[b * c + k]);
    s += dm * dm + ds * ds;
  }
  return s;
}

}  // namespace

double prop1_constant(const InducingSet& inducing, const KernelParams& kernel, double jitter) {
  if (!inducing.location_var) throw Error(ErrorKind::InvalidArgument, "verify_prop1 needs measure-valued inducing points");
  const std::size_t m = inducing.size();
  std::vector<DiagGaussianMeasure> z;
  z.reserve(m);
  const std::size_t d = inducing.locations.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> mean(d), var(d);
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = inducing.locations[i * d + j];
      var[j] = (*inducing.location_var)[i * d + j];
    }
    z.emplace_back(std::move(mean), std::move(var));
  }
  Tensor k = rbf_w2(z, z, kernel);
  for (std::size_t i = 0; i < m; ++i) k(i, i) += jitter;
  const Eigen::LLT<RowMatrix> llt(k.matrix());
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::NotPositiveDefinite, "inducing Gram matrix");
  const RowMatrix kinv = llt.solve(RowMatrix::Identity(m, m));

  double total = 0.0;
  for (std::size_t c = 0; c < inducing.channels(); ++c) {
    Eigen::VectorXd mc(m);
    for (std::size_t i = 0; i < m; ++i) mc[i] = inducing.q_mean(i, c);
    const auto lc = inducing.q_chol.at(c).matrix().triangularView<Eigen::Lower>();
    const RowMatrix s = RowMatrix(lc) * RowMatrix(lc).transpose();
    RowMatrix q = kinv * (k.matrix() - s) * kinv;
    q = 0.5 * (q + q.transpose()).eval();
    total += (kinv * mc).squaredNorm() + symmetric_spectral_norm(from_matrix(q));
  }
  const double factor = 4.0 * kernel.variance() / kernel.lengthscale();
  return factor * factor * total;
}

LipschitzCheck verify_prop1(const InducingSet& inducing, const KernelParams& kernel, std::size_t trials,
                            std::uint64_t seed, double jitter) {
  if (trials == 0) throw Error(ErrorKind::InvalidArgument, "trials must be >= 1");
  LipschitzCheck check;
  check.constant = prop1_constant(inducing, kernel, jitter);

  const std::size_t m = inducing.size();
  const std::size_t d = inducing.locations.dim(1);
  const double l2 = kernel.lengthscale() * kernel.lengthscale();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  std::uniform_real_distribution<double> radius_sq(0.125 * l2, l2);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Rows 2t / 2t+1 hold mu / nu of trial t.
  Tensor mean({1, 2 * trials, d});
  Tensor var({1, 2 * trials, d});
  std::vector<double> in_sq(trials);
  std::vector<double> dir(2 * d);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t z = pick(rng);
    const double r = std::sqrt(radius_sq(rng));
    double norm = 0.0;
    for (double& v : dir) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double mu_mean = inducing.locations[z * d + j];
      const double mu_sd = std::sqrt((*inducing.location_var)[z * d + j]);
      const double nu_mean = mu_mean + r * dir[j] / norm;
      double nu_sd = mu_sd + r * dir[d + j] / norm;
      // Reflecting a step that crosses zero keeps its length and the sign constraint.
      if (nu_sd < 0.0) nu_sd = mu_sd - r * dir[d + j] / norm;
      mean[2 * t * d + j] = mu_mean;
      var[2 * t * d + j] = mu_sd * mu_sd;
      mean[(2 * t + 1) * d + j] = nu_mean;
      var[(2 * t + 1) * d + j] = nu_sd * nu_sd;
      dist += (nu_mean - mu_mean) * (nu_mean - mu_mean) + (nu_sd - mu_sd) * (nu_sd - mu_sd);
    }
    in_sq[t] = dist;
  }
  const GpLayerResult out = distgp_activation({mean, var}, inducing, kernel, jitter);
  for (std::size_t t = 0; t < trials; ++t) tally(check, output_w2_squared(out.out, 2 * t, 2 * t + 1), in_sq[t]);
  return check;
}

LipschitzCheck verify_prop2(const Tensor& column, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw Error(ErrorKind::InvalidArgument, "trials must be >= 1");
  const std::size_t c = column.size();
  if (c == 0 || (column.rank() == 2 && column.dim(1) != 1)) {
    throw Error(ErrorKind::ShapeMismatch, "verify_prop2 expects a C x 1 column, got " + shape_string(column.shape()));
  }
  LipschitzCheck check;
  double sq_norm = 0.0;
  for (double a : column.data()) sq_norm += a * a;
  check.constant = std::sqrt(static_cast<double>(c)) * sq_norm;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> sd(0.0, 2.0);
  std::vector<double> m1(c), m2(c), s1(c), s2(c);
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < c; ++i) {
      m1[i] = normal(rng);
      m2[i] = normal(rng);
      s1[i] = sd(rng);
      s2[i] = sd(rng);
    }
    double in_sq = 0.0, fm1 = 0.0, fm2 = 0.0, fv1 = 0.0, fv2 = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      in_sq += (m1[i] - m2[i]) * (m1[i] - m2[i]) + (s1[i] - s2[i]) * (s1[i] - s2[i]);
      const double a = column[i];
      fm1 += m1[i] * a;
      fm2 += m2[i] * a;
      fv1 += s1[i] * s1[i] * a * a;
      fv2 += s2[i] * s2[i] * a * a;
    }
    const double ds = std::sqrt(fv1) - std::sqrt(fv2);
    tally(check, (fm1 - fm2) * (fm1 - fm2) + ds * ds, in_sq);
  }
  return check;
}

}  // namespace distgp
