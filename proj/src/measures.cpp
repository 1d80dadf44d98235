#include "distgp/measures.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "distgp/error.hpp"

namespace distgp {

namespace {
std::atomic<std::size_t> g_clamp_events{0};

void check_pair(const DiagGaussianMeasure& mu, const DiagGaussianMeasure& nu) {
  if (mu.dim() != nu.dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                "measures of dimension " + std::to_string(mu.dim()) + " and " + std::to_string(nu.dim()));
  }
}
}  // namespace

DiagGaussianMeasure::DiagGaussianMeasure(std::vector<double> m, std::vector<double> v)
    : mean(std::move(m)), var(std::move(v)) {
  if (mean.size() != var.size()) throw Error(ErrorKind::DimensionMismatch, "mean/var length mismatch");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(var[i])) throw Error(ErrorKind::NonFinite, "measure entry");
    if (var[i] < 0.0) throw Error(ErrorKind::InvalidArgument, "negative variance");
  }
}

double w2_squared(const DiagGaussianMeasure& mu, const DiagGaussianMeasure& nu) {
  check_pair(mu, nu);
  double mean_term = 0.0;
  double std_term = 0.0;
  for (std::size_t i = 0; i < mu.dim(); ++i) {
    const double dm = mu.mean[i] - nu.mean[i];
    const double ds = std::sqrt(mu.var[i]) - std::sqrt(nu.var[i]);
    mean_term += dm * dm;
    std_term += ds * ds;
  }
  return mean_term + std_term;
}

double w2(const DiagGaussianMeasure& mu, const DiagGaussianMeasure& nu) { return std::sqrt(w2_squared(mu, nu)); }

ad::Var clamp_variance(const ad::Var& var) {
  std::size_t n = 0;
  for (double v : var.value().data()) n += v < 0.0;
  if (n == 0) return var;
  g_clamp_events += n;
  return ad::clamp_min(var, 0.0);
}

void clamp_variance_inplace(std::span<double> var) {
  for (double& v : var) {
    if (v < 0.0) {
      v = 0.0;
      ++g_clamp_events;
    }
  }
}

std::size_t variance_clamp_events() { return g_clamp_events.load(); }
void reset_variance_clamp_events() { g_clamp_events = 0; }

}  // namespace distgp
