#pragma once

#include <cmath>
#include <random>

#include "distgp/kernels.hpp"
#include "distgp/svgp.hpp"
#include "support.hpp"

namespace testing {

using namespace distgp;

struct Instance {
  Tensor knm, kmm, knn;
  Tensor q_mean, q_chol;
};

inline Instance random_instance(std::mt19937_64& rng, std::size_t n, std::size_t m) {
  const KernelParams p = KernelParams::from_natural(0.5 + std::uniform_real_distribution<double>(0, 1)(rng),
                                                    0.8 + std::uniform_real_distribution<double>(0, 1)(rng));
  const Tensor x = random_tensor(rng, {n, 2}, -2.0, 2.0);
  // Well-separated inducing inputs keep Kmm well conditioned.
  Tensor z({m, 2});
  for (std::size_t i = 0; i < m; ++i) {
    z(i, 0) = -2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(m - 1, 1));
    z(i, 1) = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  Instance inst;
  inst.knm = rbf_euclid(x, z, p);
  inst.kmm = rbf_euclid(z, z, p);
  inst.knn = Tensor({n}, p.variance());
  inst.q_mean = random_normal(rng, {m, 1});
  inst.q_chol = random_lower(rng, m);
  for (double& v : inst.q_chol.data()) v *= 0.5;
  return inst;
}

struct Dense {
  Tensor mean, h, g;
};

inline Dense dense_oracle(const Instance& in, double jitter) {
  Tensor k = in.kmm;
  const std::size_t m = k.dim(0), n = in.knm.dim(0);
  for (std::size_t i = 0; i < m; ++i) k(i, i) += jitter;
  const Tensor kinv = gauss_jordan_inverse(k);
  const Tensor s = naive_matmul(in.q_chol, naive_transpose(in.q_chol));
  const Tensor a = naive_matmul(in.knm, kinv);  // Knm Kmm^-1
  const Tensor mean = naive_matmul(a, in.q_mean);
  const Tensor q = naive_matmul(naive_matmul(a, s), naive_transpose(a));
  const Tensor p = naive_matmul(a, naive_transpose(in.knm));
  Dense d{mean, Tensor({n, 1}), Tensor({n, 1})};
  for (std::size_t i = 0; i < n; ++i) {
    d.h[i] = in.knn[i] - p(i, i);
    d.g[i] = q(i, i);
  }
  return d;
}

inline double scaled_error(const Tensor& a, const Tensor& b, double scale) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), scale));
  return e;
}

inline double mc_kl(std::mt19937_64& rng, const Tensor& m, const Tensor& l, const Tensor& k, std::size_t samples) {
  const std::size_t d = m.size();
  const Tensor kinv = gauss_jordan_inverse(k);
  const Tensor s = naive_matmul(l, naive_transpose(l));
  const Tensor sinv = gauss_jordan_inverse(s);
  const double log_norm_q = -0.5 * gauss_logdet(s);
  const double log_norm_p = -0.5 * gauss_logdet(k);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> eps(d), u(d);
  double total = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    for (double& e : eps) e = z(rng);
    for (std::size_t i = 0; i < d; ++i) {
      u[i] = m[i];
      for (std::size_t j = 0; j <= i; ++j) u[i] += l(i, j) * eps[j];
    }
    double qq = 0.0, qp = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        qq += (u[i] - m[i]) * sinv(i, j) * (u[j] - m[j]);
        qp += u[i] * kinv(i, j) * u[j];
      }
    total += (log_norm_q - 0.5 * qq) - (log_norm_p - 0.5 * qp);
  }
  return total / static_cast<double>(samples);
}

/// Closed-form Gaussian KL through explicit inverses and determinants.
inline double dense_kl(const Tensor& m, const Tensor& l, const Tensor& k) {
  const std::size_t d = m.size();
  const Tensor kinv = gauss_jordan_inverse(k);
  const Tensor s = naive_matmul(l, naive_transpose(l));
  double trace = 0.0, maha = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      trace += kinv(i, j) * s(j, i);
      maha += m[i] * kinv(i, j) * m[j];
    }
  return 0.5 * (trace + maha - static_cast<double>(d) + gauss_logdet(k) - gauss_logdet(s));
}

}  // namespace testing
