#pragma once
// Dynamic spike-and-slab prior: Laplace spike, Gaussian AR slab, dynamic
// mixing weights and the E-step indicator expectations. All mixture
// posteriors are computed from log-densities.

#include "dssfm/types.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace dssfm {

struct DssParams {
  double theta = 0.9;    // global balancing weight
  double lambda0 = 0.9;  // spike rate
  double lambda1 = 10.0 * (1.0 - 0.98 * 0.98);  // slab innovation variance
  double phi0 = 0.0;     // slab long-run mean
  double phi1 = 0.98;    // slab AR coefficient

  double stationary_variance() const { return lambda1 / (1.0 - phi1 * phi1); }
  // mu(beta_prev) = phi0 + phi1 (beta_prev - phi0)
  double slab_mean(double beta_prev) const { return phi0 + phi1 * (beta_prev - phi0); }

  static DssParams from(const ModelConfig& cfg) {
    return {cfg.theta, cfg.lambda0, cfg.lambda1, cfg.phi0, cfg.phi1};
  }
};

inline double log_spike_density(double beta, double lambda0) {
  return std::log(0.5 * lambda0) - lambda0 * std::abs(beta);
}

inline double log_gaussian_density(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * r * r / variance;
}

inline double spike_density(double beta, double lambda0) {
  return std::exp(log_spike_density(beta, lambda0));
}

inline double slab_density(double beta, double mean, double lambda1) {
  return std::exp(log_gaussian_density(beta, mean, lambda1));
}

inline double stationary_slab_density(double beta, const DssParams& p) {
  return std::exp(log_gaussian_density(beta, p.phi0, p.stationary_variance()));
}

namespace detail {

// w*exp(a) / (w*exp(a) + (1-w)*exp(b)) evaluated stably.
inline double mixture_posterior(double w, double log_slab, double log_spike) {
  if (w <= 0.0) return 0.0;
  if (w >= 1.0) return 1.0;
  const double a = std::log(w) + log_slab;
  const double b = std::log1p(-w) + log_spike;
  const double ninf = -std::numeric_limits<double>::infinity();
  if (a == ninf && b == ninf) return w;
  if (a == ninf) return 0.0;
  if (b == ninf) return 1.0;
  // 1 / (1 + exp(b - a))
  const double d = b - a;
  if (d > 0.0) {
    const double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

}  // namespace detail

// theta^t as a function of the lagged coefficient: the marginal inclusion
// probability under the stationary slab versus the spike.
inline double mixing_weight(double beta_prev, const DssParams& p) {
  return detail::mixture_posterior(
      p.theta, log_gaussian_density(beta_prev, p.phi0, p.stationary_variance()),
      log_spike_density(beta_prev, p.lambda0));
}

// Posterior slab membership of beta_t given theta^t (precomputed).
inline double indicator_expectation_given(double beta_t, double beta_prev, double theta_t,
                                          const DssParams& p) {
  return detail::mixture_posterior(
      theta_t, log_gaussian_density(beta_t, p.slab_mean(beta_prev), p.lambda1),
      log_spike_density(beta_t, p.lambda0));
}

inline double indicator_expectation(double beta_t, double beta_prev, const DssParams& p) {
  return indicator_expectation_given(beta_t, beta_prev, mixing_weight(beta_prev, p), p);
}

inline double initial_indicator_expectation(double beta0, const DssParams& p) {
  return detail::mixture_posterior(
      p.theta, log_gaussian_density(beta0, p.phi0, p.stationary_variance()),
      log_spike_density(beta0, p.lambda0));
}

}  // namespace dssfm
