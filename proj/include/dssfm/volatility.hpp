#pragma once
// Discount stochastic volatility for the idiosyncratic variances: forward
// filtering, backward smoothing, and posterior modes.

#include "dssfm/kalman.hpp"
#include "dssfm/types.hpp"

#include <cmath>
#include <string>

namespace dssfm {

struct FfbsParams {
  double delta = 0.95;
  double eta0 = 20.0;
  double d0 = 0.002;
  bool previous_sigma = false;
  bool warm_start = false;

  // eta0 sits at the fixed point 1/(1-delta) unless disabled or delta = 1.
  static FfbsParams from(const ModelConfig& cfg) {
    const double eta0 = (cfg.eta0_at_limit && cfg.delta < 1.0) ? 1.0 / (1.0 - cfg.delta) : cfg.n0;
    return {cfg.delta, eta0, cfg.d0, cfg.sv_previous_sigma, cfg.sv_warm_start};
  }
};

struct FfbsState {
  double delta = 0.95;
  double eta0 = 20.0;
  Vector d0;         // P
  Vector eta;        // eta_1..eta_T (shared across series)
  Matrix d;          // P x T, column t-1 holds time t
  Matrix s;          // P x T
  Vector eta_smooth; // eta_T(-k), by time
  Matrix s_smooth;   // S_T(-k), by time

  Eigen::Index n_times() const { return eta.size(); }
};

// Per-series scalar recursion d_jt = delta d_{j,t-1} + s_{j,t-1} e_jt^2 / q_jt
// with s_jt = d_jt / eta_t. The forecast variance is
// q_jt = factor_var_jt + sigma2_prev(j, t-1) when `sigma2_prev` is given and
// q_jt = factor_var_jt + s_{j,t-1} otherwise. `s0`, when given, replaces the
// initial point estimate d0/eta0 per series (d_j0 = eta0 s0_j).
inline FfbsState ffbs_forward(const Matrix& errors, const Matrix& factor_var, const FfbsParams& prm,
                              const Matrix* sigma2_prev = nullptr, const Vector* s0 = nullptr) {
  const Eigen::Index p = errors.rows();
  const Eigen::Index t_len = errors.cols();
  if (factor_var.rows() != p || factor_var.cols() != t_len) {
    throw DimensionError("ffbs_forward: forecast variance has wrong shape");
  }
  if (sigma2_prev && (sigma2_prev->rows() != p || sigma2_prev->cols() != t_len)) {
    throw DimensionError("ffbs_forward: previous variances have wrong shape");
  }
  FfbsState fs;
  fs.delta = prm.delta;
  fs.eta0 = prm.eta0;
  if (s0 && s0->size() != p) throw DimensionError("ffbs_forward: initial scale has wrong length");
  fs.d0 = s0 ? Vector(prm.eta0 * *s0) : Vector::Constant(p, prm.d0);
  fs.eta.resize(t_len);
  fs.d.resize(p, t_len);
  fs.s.resize(p, t_len);
  double eta_prev = prm.eta0;
  Vector d_prev = fs.d0;
  Vector s_prev = fs.d0 / prm.eta0;
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const double eta_t = prm.delta * eta_prev + 1.0;
    fs.eta(t) = eta_t;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double qj = factor_var(j, t) + (sigma2_prev ? (*sigma2_prev)(j, t) : s_prev(j));
      if (!(qj > 0.0) || !std::isfinite(qj)) {
        throw NumericalError("ffbs_forward: non-positive forecast variance at series " +
                             std::to_string(j) + ", t=" + std::to_string(t + 1));
      }
      const double e = errors(j, t);
      fs.d(j, t) = prm.delta * d_prev(j) + s_prev(j) * e * e / qj;
    }
    fs.s.col(t) = fs.d.col(t) / eta_t;
    eta_prev = eta_t;
    d_prev = fs.d.col(t);
    s_prev = fs.s.col(t);
  }
  return fs;
}

// Forecast errors e_t = Y_t - B_t omega_{t|t-1} and the factor part
// diag(B_t V_{t|t-1} B_t') of the forecast variance from the filter's
// one-step predictions. An intercept column is treated as a known offset.
inline FfbsState ffbs_forward(const Matrix& y, const LoadingsPath& loadings, const FilterState& filter,
                              const Matrix& sigma2_prev, const FfbsParams& prm) {
  const Eigen::Index p = y.rows();
  const Eigen::Index t_len = y.cols();
  const auto k = static_cast<Eigen::Index>(loadings.n_factors());
  if (filter.n_times() != static_cast<std::size_t>(t_len) || loadings.n_times() != static_cast<std::size_t>(t_len) ||
      sigma2_prev.rows() != p || sigma2_prev.cols() != t_len) {
    throw DimensionError("ffbs_forward: inconsistent dimensions");
  }
  Matrix errors(p, t_len);
  Matrix fvar(p, t_len);
  for (Eigen::Index t = 1; t <= t_len; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix& b_full = loadings.betas[ti];
    const auto b = b_full.leftCols(k);
    errors.col(t - 1) = y.col(t - 1) - b * filter.pred_means[ti];
    if (loadings.intercept) errors.col(t - 1) -= b_full.col(b_full.cols() - 1);
    const Matrix bv = b * filter.pred_covs[ti];
    fvar.col(t - 1) = (bv.cwiseProduct(b)).rowwise().sum();
  }
  const Vector s0 = sigma2_prev.col(0);
  return ffbs_forward(errors, fvar, prm, prm.previous_sigma ? &sigma2_prev : nullptr,
                      prm.warm_start ? &s0 : nullptr);
}

inline FfbsState ffbs_forward(const Panel& panel, const LoadingsPath& loadings, const FilterState& filter,
                              const VolatilityPath& vol_prev, const ModelConfig& cfg) {
  return ffbs_forward(panel.values, loadings, filter, vol_prev.sigma2, FfbsParams::from(cfg));
}

// eta_T(-k) = (1-delta) eta_{T-k} + delta eta_{T-k+1}
// S_T(-k)^{-1} = (1-delta) S_{T-k}^{-1} + delta S_T(-k+1)^{-1}
// initialised at eta_T(0) = eta_T, S_T(0) = S_T.
inline FfbsState ffbs_backward(FfbsState fs) {
  const Eigen::Index t_len = fs.n_times();
  const Eigen::Index p = fs.s.rows();
  fs.eta_smooth.resize(t_len);
  fs.s_smooth.resize(p, t_len);
  if (t_len == 0) return fs;
  const double delta = fs.delta;
  fs.eta_smooth(t_len - 1) = fs.eta(t_len - 1);
  fs.s_smooth.col(t_len - 1) = fs.s.col(t_len - 1);
  for (Eigen::Index col = t_len - 2; col >= 0; --col) {
    fs.eta_smooth(col) = (1.0 - delta) * fs.eta(col) + delta * fs.eta(col + 1);
    for (Eigen::Index j = 0; j < p; ++j) {
      const double inv = (1.0 - delta) / fs.s(j, col) + delta / fs.s_smooth(j, col + 1);
      fs.s_smooth(j, col) = 1.0 / inv;
    }
  }
  return fs;
}

inline FfbsState ffbs_backward(const FfbsState& fs, const ModelConfig&) { return ffbs_backward(fs); }

// sigma^2_{j,T-k} = d_T(-k) / (eta_T(-k) - 1) with d_T(-k) = eta_T(-k) S_T(-k).
inline VolatilityPath extract_modes(const FfbsState& fs) {
  const Eigen::Index t_len = fs.n_times();
  const Eigen::Index p = fs.s.rows();
  if (fs.eta_smooth.size() != t_len || fs.s_smooth.cols() != t_len) {
    throw DimensionError("extract_modes: backward pass not run");
  }
  VolatilityPath v;
  v.sigma2.resize(p, t_len);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const double eta = fs.eta_smooth(t);
    if (!(eta > 1.0)) {
      throw NumericalError("extract_modes: smoothed degrees of freedom <= 1 at t=" + std::to_string(t + 1));
    }
    v.sigma2.col(t) = eta * fs.s_smooth.col(t) / (eta - 1.0);
  }
  v.eta_filter = fs.eta;
  v.d_filter = fs.d;
  v.s_filter = fs.s;
  return v;
}

}  // namespace dssfm
