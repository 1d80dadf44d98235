#include "distgp/svgp.hpp"

#include <string>

#include "distgp/error.hpp"
#include "distgp/measures.hpp"

namespace distgp {

namespace ad {

Var lower_from_raw(const Var& raw) {
  const std::size_t m = raw.shape().at(0);
  Tensor strict_lower({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < i; ++j) strict_lower(i, j) = 1.0;
  }
  Tape& t = raw.tape();
  return raw * t.constant(std::move(strict_lower)) + softplus(raw) * t.constant(Tensor::identity(m));
}

Var log_diag_sum(const Var& lower) {
  const std::size_t m = lower.shape().at(0);
  Tape& t = lower.tape();
  Tensor off({m, m}, 1.0);
  for (std::size_t i = 0; i < m; ++i) off(i, i) = 0.0;
  return sum(log(lower * t.constant(Tensor::identity(m)) + t.constant(std::move(off))));
}

Moments svgp_predict(const Var& knm, const Var& kmm_chol, const Var& knn_diag, const Var& q_mean,
                     std::span<const Var> q_chol) {
  const std::size_t n = knm.shape().at(0);
  const std::size_t m = knm.shape().at(1);
  const std::size_t c = q_mean.shape().at(1);
  if (kmm_chol.shape() != Tensor::Shape{m, m} || q_mean.shape().at(0) != m || q_chol.size() != c ||
      knn_diag.shape() != Tensor::Shape{n, 1}) {
    throw Error(ErrorKind::ShapeMismatch, "svgp_predict: inconsistent shapes");
  }
  const Var a = tri_solve(kmm_chol, transpose(knm));  // L^-1 Kmn, [M,N]
  const Var h = clamp_variance(knn_diag - transpose(sum_axis(square(a), 0)));
  const Var mean = matmul(transpose(a), tri_solve(kmm_chol, q_mean));
  const Var b = tri_solve(kmm_chol, a, true);  // Kmm^-1 Kmn
  std::vector<Var> g_parts;
  g_parts.reserve(c);
  for (const Var& ls : q_chol) {
    g_parts.push_back(transpose(sum_axis(square(matmul(transpose(ls), b)), 0)));
  }
  const Var g = c == 1 ? g_parts.front() : concat(g_parts, 1);
  const Var hb = c == 1 ? h : broadcast_to(h, {n, c});
  return {mean, hb + g, hb, g};
}

Var svgp_kl(const Var& q_mean, std::span<const Var> q_chol, const Var& kmm_chol) {
  const double m = static_cast<double>(kmm_chol.shape().at(0));
  const Var maha = sum(square(tri_solve(kmm_chol, q_mean)));
  const Var logdet_k = 2.0 * log_diag_sum(kmm_chol);
  Var total = scale(maha, 0.5);
  for (const Var& ls : q_chol) {
    const Var trace = sum(square(tri_solve(kmm_chol, ls)));
    total = total + 0.5 * (add_scalar(trace + logdet_k - 2.0 * log_diag_sum(ls), -m));
  }
  return total;
}

}  // namespace ad

namespace {

Tensor as_column(const Tensor& t, const char* what) {
  if (t.rank() == 1) return t.reshaped({t.dim(0), 1});
  if (t.rank() == 2) return t;
  throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be a vector");
}

}  // namespace

PosteriorMoments predict(const Tensor& knm, const Tensor& kmm, const Tensor& knn_diag, const Tensor& q_mean,
                         std::span<const Tensor> q_chol, double jitter) {
  ad::Tape tape(false);
  const ad::Var lk = ad::cholesky(tape.constant(kmm), jitter);
  std::vector<ad::Var> ls;
  for (const Tensor& l : q_chol) ls.push_back(tape.constant(l));
  const auto out = ad::svgp_predict(tape.constant(knm), lk, tape.constant(as_column(knn_diag, "Knn_diag")),
                                    tape.constant(as_column(q_mean, "q_mean")), ls);
  return {out.mean.value(), out.var.value(), out.h_var.value(), out.g_var.value()};
}

PosteriorMoments predict(const Tensor& knm, const Tensor& kmm, const Tensor& knn_diag, const Tensor& q_mean,
                         const Tensor& q_chol, double jitter) {
  return predict(knm, kmm, knn_diag, q_mean, std::span<const Tensor>(&q_chol, 1), jitter);
}

double kl_term(const Tensor& q_mean, std::span<const Tensor> q_chol, const Tensor& kmm, double jitter) {
  ad::Tape tape(false);
  const ad::Var lk = ad::cholesky(tape.constant(kmm), jitter);
  std::vector<ad::Var> ls;
  for (const Tensor& l : q_chol) ls.push_back(tape.constant(l));
  return ad::svgp_kl(tape.constant(as_column(q_mean, "q_mean")), ls, lk).value().item();
}

double kl_term(const Tensor& q_mean, const Tensor& q_chol, const Tensor& kmm, double jitter) {
  return kl_term(q_mean, std::span<const Tensor>(&q_chol, 1), kmm, jitter);
}

VarianceDecomposition decompose(const PosteriorMoments& moments) {
  return {{moments.mean, moments.g_var}, {Tensor(moments.mean.shape(), 0.0), moments.h_var}};
}

}  // namespace distgp
