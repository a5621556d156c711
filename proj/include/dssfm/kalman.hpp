#pragma once
// Kalman filter, fixed-interval smoother and lag-one covariance smoother for
// the AR(1) latent factors omega_t = phi omega_{t-1} + e_t, e_t ~ N(0, s2 I).

#include "dssfm/types.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <string>

namespace dssfm {

// Scalar description of the factor dynamics.
struct FactorDynamics {
  double transition = 0.95;      // phi used in the recursions
  double innovation_var = 0.0975;
  double initial_var = 1.0;      // V_{0|0} = initial_var * I

  static FactorDynamics from(const ModelConfig& cfg) {
    const double stationary = cfg.sigma2_omega / (1.0 - cfg.phi_tilde * cfg.phi_tilde);
    return {cfg.random_walk_filter ? 1.0 : cfg.phi_tilde, cfg.sigma2_omega, stationary};
  }
};

struct FilterState {
  // Index t = 0..T. pred_* at t = 0 repeat the initial condition.
  VectorPath pred_means;
  MatrixPath pred_covs;
  VectorPath filt_means;
  MatrixPath filt_covs;
  MatrixPath gains;    // K_t (K x P); gains[0] is empty
  Matrix last_gain_loadings;  // K_T B_T
  double transition = 1.0;
  double loglik = 0.0;  // sum_t log N(y_t; B_t omega_{t|t-1}, B_t V_{t|t-1} B_t' + Sigma_t)

  std::size_t n_times() const { return filt_means.empty() ? 0 : filt_means.size() - 1; }
};

namespace detail {

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline Matrix spd_inverse(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + " is not positive definite");
  }
  Matrix inv = llt.solve(Matrix::Identity(m.rows(), m.cols()));
  symmetrize(inv);
  return inv;
}

}  // namespace detail

// Runs the filter on the factor block of `loadings` (the intercept column, if
// any, is subtracted from the data as a known offset).
inline FilterState kalman_filter(const Matrix& y, const LoadingsPath& loadings,
                                 const Matrix& sigma2, const FactorDynamics& dyn) {
  const Eigen::Index p = y.rows();
  const Eigen::Index t_len = y.cols();
  const auto k = static_cast<Eigen::Index>(loadings.n_factors());
  if (loadings.n_times() != static_cast<std::size_t>(t_len) ||
      loadings.n_series() != static_cast<std::size_t>(p)) {
    throw DimensionError("kalman_filter: loadings do not match panel dimensions");
  }
  if (sigma2.rows() != p || sigma2.cols() != t_len) {
    throw DimensionError("kalman_filter: volatility does not match panel dimensions");
  }

  FilterState fs;
  fs.transition = dyn.transition;
  const auto n = static_cast<std::size_t>(t_len) + 1;
  fs.pred_means.resize(n);
  fs.pred_covs.resize(n);
  fs.filt_means.resize(n);
  fs.filt_covs.resize(n);
  fs.gains.resize(n);

  const Matrix eye = Matrix::Identity(k, k);
  fs.filt_means[0] = Vector::Zero(k);
  fs.filt_covs[0] = dyn.initial_var * eye;
  fs.pred_means[0] = fs.filt_means[0];
  fs.pred_covs[0] = fs.filt_covs[0];

  const double phi = dyn.transition;
  constexpr double kLog2Pi = 1.8378770664093454836;
  Vector resid(p);
  Vector w(p);
  for (Eigen::Index t = 1; t <= t_len; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix& b_full = loadings.betas[ti];
    const auto b = b_full.leftCols(k);

    fs.pred_means[ti] = phi * fs.filt_means[ti - 1];
    fs.pred_covs[ti] = phi * phi * fs.filt_covs[ti - 1] + dyn.innovation_var * eye;
    detail::symmetrize(fs.pred_covs[ti]);

    for (Eigen::Index j = 0; j < p; ++j) {
      const double s2 = sigma2(j, t - 1);
      if (!(s2 > 0.0) || !std::isfinite(s2)) {
        throw NumericalError("kalman_filter: innovation covariance not positive definite (sigma2 <= 0 at series " +
                             std::to_string(j) + ", t=" + std::to_string(t) + ")");
      }
      w(j) = 1.0 / s2;
    }
    resid = y.col(t - 1) - b * fs.pred_means[ti];
    if (loadings.intercept) resid -= b_full.col(b_full.cols() - 1);

    // Information form of the correction; Sigma_t is diagonal.
    Eigen::LLT<Matrix> pred_llt(fs.pred_covs[ti]);
    if (pred_llt.info() != Eigen::Success) {
      throw NumericalError("kalman_filter: predicted covariance is not positive definite");
    }
    Matrix precision = pred_llt.solve(eye);
    detail::symmetrize(precision);
    precision.noalias() += b.transpose() * w.asDiagonal() * b;
    Eigen::LLT<Matrix> post_llt(precision);
    if (post_llt.info() != Eigen::Success) {
      throw NumericalError("kalman_filter: innovation covariance is not positive definite");
    }
    fs.filt_covs[ti] = post_llt.solve(eye);
    detail::symmetrize(fs.filt_covs[ti]);
    fs.gains[ti] = fs.filt_covs[ti] * b.transpose() * w.asDiagonal();
    fs.filt_means[ti] = fs.pred_means[ti] + fs.gains[ti] * resid;

    // log|S| = log|Sigma| + log|V_pred| + log|V_pred^{-1} + B'WB| and
    // r'S^{-1}r = r'Wr - u'(V_pred^{-1} + B'WB)^{-1}u with u = B'Wr.
    double logdet = -w.array().log().sum();
    for (Eigen::Index i = 0; i < k; ++i) {
      logdet += 2.0 * std::log(pred_llt.matrixL()(i, i)) + 2.0 * std::log(post_llt.matrixL()(i, i));
    }
    const Vector wr = w.cwiseProduct(resid);
    const Vector u = b.transpose() * wr;
    const double quad = resid.dot(wr) - u.dot(fs.filt_covs[ti] * u);
    fs.loglik += -0.5 * (static_cast<double>(p) * kLog2Pi + logdet + quad);
  }
  if (t_len > 0) {
    const auto tl = static_cast<std::size_t>(t_len);
    fs.last_gain_loadings = fs.gains[tl] * loadings.betas[tl].leftCols(k);
  } else {
    fs.last_gain_loadings = Matrix::Zero(k, k);
  }
  return fs;
}

inline FilterState kalman_filter(const Panel& panel, const LoadingsPath& loadings,
                                 const VolatilityPath& vol, const ModelConfig& cfg) {
  return kalman_filter(panel.values, loadings, vol.sigma2, FactorDynamics::from(cfg));
}

inline SmoothedMoments kalman_smoother(const FilterState& fs) {
  const std::size_t t_len = fs.n_times();
  SmoothedMoments sm;
  sm.means.resize(t_len + 1);
  sm.covs.resize(t_len + 1);
  sm.lag_covs.resize(t_len);
  if (fs.filt_means.empty()) return sm;
  sm.means[t_len] = fs.filt_means[t_len];
  sm.covs[t_len] = fs.filt_covs[t_len];
  if (t_len == 0) return sm;

  const double phi = fs.transition;
  const auto k = fs.filt_means[0].size();
  const Matrix eye = Matrix::Identity(k, k);

  // Z[t-1] = phi V_{t-1|t-1} V_{t|t-1}^{-1}
  MatrixPath z(t_len);
  for (std::size_t t = t_len; t >= 1; --t) {
    const Matrix pred_inv = detail::spd_inverse(fs.pred_covs[t], "kalman_smoother: predicted covariance");
    z[t - 1] = phi * fs.filt_covs[t - 1] * pred_inv;
    sm.means[t - 1] = fs.filt_means[t - 1] + z[t - 1] * (sm.means[t] - fs.pred_means[t]);
    sm.covs[t - 1] = fs.filt_covs[t - 1] + z[t - 1] * (sm.covs[t] - fs.pred_covs[t]) * z[t - 1].transpose();
    detail::symmetrize(sm.covs[t - 1]);
  }

  sm.lag_covs[t_len - 1] = (eye - fs.last_gain_loadings) * phi * fs.filt_covs[t_len - 1];
  for (std::size_t t = t_len; t >= 2; --t) {
    // V_{t-1,t-2|T} from V_{t,t-1|T}
    sm.lag_covs[t - 2] = fs.filt_covs[t - 1] * z[t - 2].transpose() +
                         z[t - 1] * (sm.lag_covs[t - 1] - phi * fs.filt_covs[t - 1]) * z[t - 2].transpose();
  }
  return sm;
}

inline SmoothedMoments kalman_smoother(const FilterState& fs, const ModelConfig&) {
  return kalman_smoother(fs);
}

// Appends a deterministic unit component (mean 1, zero variance) so that an
// intercept column can be treated as a loading on a constant factor.
inline SmoothedMoments with_constant_factor(const SmoothedMoments& sm) {
  SmoothedMoments out;
  const auto k = static_cast<Eigen::Index>(sm.dim());
  out.means.reserve(sm.means.size());
  for (const auto& m : sm.means) {
    Vector v(k + 1);
    v << m, 1.0;
    out.means.push_back(std::move(v));
  }
  auto pad = [k](const Matrix& m) {
    Matrix r = Matrix::Zero(k + 1, k + 1);
    r.topLeftCorner(k, k) = m;
    return r;
  };
  for (const auto& c : sm.covs) out.covs.push_back(pad(c));
  for (const auto& c : sm.lag_covs) out.lag_covs.push_back(pad(c));
  return out;
}

}  // namespace dssfm
