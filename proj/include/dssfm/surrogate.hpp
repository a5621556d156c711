#pragma once
// Loadings-relevant part of the EM surrogate: expected complete-data fit plus
// the one-step-late DSS penalties. Larger is better. This is the function
// each coordinate update of the sweep maximises exactly.

#include "dssfm/loadings.hpp"
#include "dssfm/types.hpp"

#include <cmath>

namespace dssfm {

struct SurrogateParts {
  double fit = 0.0;      // sum (1/2 sigma^2) [(y - b'w)^2 + b'Vb]
  double penalty = 0.0;  // prior terms, including the mixing-weight coupling
  double value() const { return -(fit + penalty); }
};

// `moments` must have one component per loading column (use
// with_constant_factor when an intercept is present). Indicator expectations
// and mixing weights are read from `lp`.
inline SurrogateParts surrogate_parts(const LoadingsPath& lp, const SmoothedMoments& moments,
                                      const Matrix& y, const Matrix& sigma2,
                                      const std::vector<ColumnPrior>& priors) {
  const std::size_t t_len = lp.n_times();
  const auto p = static_cast<Eigen::Index>(lp.n_series());
  const auto k = static_cast<Eigen::Index>(lp.n_columns());
  if (moments.n_times() != t_len || moments.dim() != static_cast<std::size_t>(k) ||
      y.rows() != p || y.cols() != static_cast<Eigen::Index>(t_len) ||
      priors.size() != static_cast<std::size_t>(k)) {
    throw DimensionError("eval_surrogate: inconsistent dimensions");
  }
  SurrogateParts out;
  for (std::size_t t = 1; t <= t_len; ++t) {
    const auto col = static_cast<Eigen::Index>(t - 1);
    const Matrix& b = lp.betas[t];
    const Vector resid = y.col(col) - b * moments.means[t];
    const Vector quad = (b * moments.covs[t]).cwiseProduct(b).rowwise().sum();
    for (Eigen::Index j = 0; j < p; ++j) {
      out.fit += (resid(j) * resid(j) + quad(j)) / (2.0 * sigma2(j, col));
    }
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    const ColumnPrior& pr = priors[static_cast<std::size_t>(c)];
    const DssParams& d = pr.dss;
    const double v_st = d.stationary_variance();
    for (Eigen::Index j = 0; j < p; ++j) {
      const double b0 = lp.betas[0](j, c);
      const double g0 = lp.gammas[0](j, c);
      out.penalty += g0 * (b0 - d.phi0) * (b0 - d.phi0) / (2.0 * pr.initial_var) +
                     (1.0 - g0) * d.lambda0 * std::abs(b0);
      for (std::size_t t = 1; t <= t_len; ++t) {
        const double b = lp.betas[t](j, c);
        const double g = lp.gammas[t](j, c);
        const double r = b - d.slab_mean(lp.betas[t - 1](j, c));
        out.penalty += g * r * r / (2.0 * d.lambda1) + (1.0 - g) * d.lambda0 * std::abs(b);
        if (t < t_len) {
          const double m = lp.gammas[t + 1](j, c) - lp.thetas[t + 1](j, c);
          const double cb = b - d.phi0;
          out.penalty += m * (cb * cb / (2.0 * v_st) - d.lambda0 * std::abs(b));
        }
      }
    }
  }
  return out;
}

// log pi(B_{0:T}) under the DSS prior with the indicators integrated out:
// log[Theta psi1_ST(b0) + (1-Theta) psi0(b0)] at t = 0 and
// log[theta_t psi1(b_t | mu(b_{t-1})) + (1-theta_t) psi0(b_t)] afterwards,
// theta_t taken from b_{t-1}. Slab-only columns use their Gaussian random walk.
inline double log_prior(const LoadingsPath& lp, const std::vector<ColumnPrior>& priors) {
  const std::size_t t_len = lp.n_times();
  const auto p = static_cast<Eigen::Index>(lp.n_series());
  const auto k = static_cast<Eigen::Index>(lp.n_columns());
  if (priors.size() != static_cast<std::size_t>(k)) throw DimensionError("log_prior: one prior per column required");
  auto mix = [](double w, double log_slab, double log_spike) {
    if (w >= 1.0) return log_slab;
    if (w <= 0.0) return log_spike;
    const double a = std::log(w) + log_slab;
    const double c = std::log1p(-w) + log_spike;
    const double m = std::max(a, c);
    return m + std::log(std::exp(a - m) + std::exp(c - m));
  };
  double out = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    const ColumnPrior& pr = priors[static_cast<std::size_t>(c)];
    const DssParams& d = pr.dss;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double b0 = lp.betas[0](j, c);
      if (pr.slab_only) {
        out += log_gaussian_density(b0, d.phi0, pr.initial_var);
        for (std::size_t t = 1; t <= t_len; ++t) {
          out += log_gaussian_density(lp.betas[t](j, c), d.slab_mean(lp.betas[t - 1](j, c)), d.lambda1);
        }
        continue;
      }
      out += mix(d.theta, log_gaussian_density(b0, d.phi0, pr.initial_var), log_spike_density(b0, d.lambda0));
      for (std::size_t t = 1; t <= t_len; ++t) {
        const double prev = lp.betas[t - 1](j, c);
        const double b = lp.betas[t](j, c);
        out += mix(mixing_weight(prev, d), log_gaussian_density(b, d.slab_mean(prev), d.lambda1),
                   log_spike_density(b, d.lambda0));
      }
    }
  }
  return out;
}

inline double eval_surrogate(const LoadingsPath& lp, const SmoothedMoments& moments, const Matrix& y,
                             const Matrix& sigma2, const std::vector<ColumnPrior>& priors) {
  return surrogate_parts(lp, moments, y, sigma2, priors).value();
}

}  // namespace dssfm
