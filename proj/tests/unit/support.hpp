#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "distgp/autodiff.hpp"
#include "distgp/tensor.hpp"

namespace testing {

using distgp::Tensor;
namespace ad = distgp::ad;

inline Tensor random_tensor(std::mt19937_64& rng, Tensor::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline Tensor random_normal(std::mt19937_64& rng, Tensor::Shape shape, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

/// B B^T + n I for a random square B.
inline Tensor random_spd(std::mt19937_64& rng, std::size_t n, double ridge = 1.0) {
  const Tensor b = random_tensor(rng, {n, n});
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += b(i, k) * b(j, k);
      a(i, j) = s + (i == j ? ridge * static_cast<double>(n) * 0.1 : 0.0);
    }
  }
  return a;
}

inline Tensor random_lower(std::mt19937_64& rng, std::size_t n) {
  Tensor l = random_tensor(rng, {n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) l(i, j) = 0.0;
    l(i, i) = 0.5 + std::abs(l(i, i));
  }
  return l;
}

/// Dense Gauss-Jordan inverse with partial pivoting.
inline Tensor gauss_jordan_inverse(const Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<std::vector<double>> m(n, std::vector<double>(2 * n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i][j] = a(i, j);
    m[i][n + i] = 1.0;
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    }
    std::swap(m[c], m[piv]);
    const double d = m[c][c];
    for (double& v : m[c]) v /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = m[r][c];
      for (std::size_t j = 0; j < 2 * n; ++j) m[r][j] -= f * m[c][j];
    }
  }
  Tensor inv({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) inv(i, j) = m[i][n + j];
  }
  return inv;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

inline Tensor naive_transpose(const Tensor& a) {
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
  }
  return out;
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares tape gradients of a scalar function against central differences.
inline GradCheck finite_difference_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5,
                                         double floor = 1e-8) {
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    const ad::Var out = f(tape, leaves);
    tape.backward(out);
    for (const ad::Var& v : leaves) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    ad::Tape tape(false);
    std::vector<ad::Var> leaves;
    for (const Tensor& t : xs) leaves.push_back(tape.constant(t));
    return f(tape, leaves).value().item();
  };
  GradCheck result;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + step;
      const double up = eval(xs);
      xs[k][i] = orig - step;
      const double down = eval(xs);
      xs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[k][i], numeric, floor));
      ++result.entries;
    }
  }
  return result;
}

}  // namespace testing

namespace testing {

/// log|det A| from Gaussian elimination with partial pivoting.
inline double gauss_logdet(const distgp::Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = a(i, j);
  double logdet = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    std::swap(m[c], m[piv]);
    logdet += std::log(std::abs(m[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = m[r][c] / m[c][c];
      for (std::size_t j = c; j < n; ++j) m[r][j] -= f * m[c][j];
    }
  }
  return logdet;
}

}  // namespace testing
