#pragma once
// Parameter-expanded EM for the dynamic sparse factor model:
// E1 smoother -> E2 indicators -> M1 loadings -> M2 rotations -> M3 volatility
// -> R rotate, repeated until the surrogate stabilises.

#include "dssfm/config.hpp"
#include "dssfm/io.hpp"
#include "dssfm/kalman.hpp"
#include "dssfm/loadings.hpp"
#include "dssfm/rotation.hpp"
#include "dssfm/surrogate.hpp"
#include "dssfm/types.hpp"
#include "dssfm/volatility.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace dssfm {

struct InitStrategy {
  enum class Kind { svd_threshold, warm_start_path, zeros };
  Kind kind = Kind::svd_threshold;
  int window = 100;          // clipped to T
  double threshold = 0.1;
  bool varimax = false;      // rotate each window's SVD loadings by varimax
  std::string path;          // warm_start_path source
};

inline InitStrategy::Kind parse_init_kind(const std::string& s) {
  if (s == "svd_threshold" || s == "svd") return InitStrategy::Kind::svd_threshold;
  if (s == "warm_start_path" || s == "warm_start") return InitStrategy::Kind::warm_start_path;
  if (s == "zeros") return InitStrategy::Kind::zeros;
  throw ConfigError("unknown init strategy '" + s + "'");
}

namespace detail {

// Kaiser varimax rotation of the columns of `l` (P x K).
inline Matrix varimax(const Matrix& l, int max_iter = 500, double tol = 1e-8) {
  const Eigen::Index p = l.rows();
  const Eigen::Index k = l.cols();
  if (k < 2 || p == 0) return l;
  Matrix r = Matrix::Identity(k, k);
  double d_old = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Matrix lam = l * r;
    const Matrix cube = lam.array().cube().matrix();
    const Vector colsq = lam.array().square().colwise().sum().transpose();
    const Matrix target = cube - lam * colsq.asDiagonal() / static_cast<double>(p);
    Eigen::JacobiSVD<Matrix> svd(l.transpose() * target, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r = svd.matrixU() * svd.matrixV().transpose();
    const double d = svd.singularValues().sum();
    if (d_old != 0.0 && d < d_old * (1.0 + tol)) break;
    d_old = d;
  }
  return l * r;
}

// Reorders / flips the columns of `cur` to best match `ref` (greedy on the
// absolute cross-product).
inline Matrix align_columns(const Matrix& ref, const Matrix& cur) {
  const Eigen::Index k = cur.cols();
  Matrix c = ref.transpose() * cur;
  std::vector<bool> used_ref(static_cast<std::size_t>(k), false);
  std::vector<bool> used_cur(static_cast<std::size_t>(k), false);
  Matrix out = Matrix::Zero(cur.rows(), k);
  for (Eigen::Index step = 0; step < k; ++step) {
    double best = -1.0;
    Eigen::Index bi = 0, bj = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (used_ref[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < k; ++j) {
        if (used_cur[static_cast<std::size_t>(j)]) continue;
        if (std::abs(c(i, j)) > best) {
          best = std::abs(c(i, j));
          bi = i;
          bj = j;
        }
      }
    }
    used_ref[static_cast<std::size_t>(bi)] = true;
    used_cur[static_cast<std::size_t>(bj)] = true;
    out.col(bi) = (c(bi, bj) < 0.0 ? -1.0 : 1.0) * cur.col(bj);
  }
  return out;
}

// Flip columns so that their largest-magnitude entry is positive.
inline void canonical_signs(Matrix& l) {
  for (Eigen::Index c = 0; c < l.cols(); ++c) {
    Eigen::Index r = 0;
    l.col(c).cwiseAbs().maxCoeff(&r);
    if (l(r, c) < 0.0) l.col(c) *= -1.0;
  }
}

}  // namespace detail

// Initial B_0..B_T for the factor columns (no intercept column).
inline LoadingsPath init_loadings(const Panel& panel, const ModelConfig& cfg, const InitStrategy& init) {
  const auto t_len = panel.n_times();
  const auto p = panel.n_series();
  const auto k = static_cast<std::size_t>(cfg.k_max);
  if (init.kind == InitStrategy::Kind::zeros) return LoadingsPath::zeros(t_len, p, k);
  if (init.kind == InitStrategy::Kind::warm_start_path) {
    LoadingsPath lp = load_loadings(init.path);
    if (lp.n_times() != t_len || lp.n_series() != p) {
      throw DimensionError("init_loadings: warm start does not match panel dimensions");
    }
    return lp;
  }
  if (init.window <= 0) throw ConfigError("init: window must be positive");
  if (!(init.threshold >= 0.0)) throw ConfigError("init: threshold must be non-negative");
  LoadingsPath lp = LoadingsPath::zeros(t_len, p, k);
  if (t_len == 0) return lp;
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(init.window), t_len);
  const auto kk = static_cast<Eigen::Index>(k);
  Matrix prev;
  for (std::size_t start = 0; start < t_len;) {
    std::size_t len = std::min(w, t_len - start);
    // a short trailing remainder joins the previous window
    if (start + w < t_len && t_len - (start + w) < w / 2) len = t_len - start;
    const Matrix block = panel.values.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
    Eigen::BDCSVD<Matrix> svd(block, Eigen::ComputeThinU);
    Matrix l = Matrix::Zero(static_cast<Eigen::Index>(p), kk);
    const Eigen::Index rank = std::min<Eigen::Index>(kk, svd.singularValues().size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(len));
    for (Eigen::Index c = 0; c < rank; ++c) {
      l.col(c) = svd.matrixU().col(c) * svd.singularValues()(c) * scale;
    }
    if (init.varimax) l = detail::varimax(l);
    if (prev.size() == 0) detail::canonical_signs(l);
    else l = detail::align_columns(prev, l);
    prev = l;
    Matrix thr = (l.array().abs() > init.threshold).select(l, 0.0);
    for (std::size_t t = start; t < start + len; ++t) lp.betas[t + 1] = thr;
    if (start == 0) lp.betas[0] = thr;
    start += len;
  }
  return lp;
}

// Appends the intercept column (starting at each series' sample mean) when
// cfg.intercept is set.
inline LoadingsPath attach_intercept(const LoadingsPath& factors, const Panel& panel, const ModelConfig& cfg) {
  if (!cfg.intercept) return factors;
  if (factors.intercept) return factors;
  LoadingsPath out = factors;
  out.intercept = true;
  const auto k = static_cast<Eigen::Index>(factors.n_columns());
  const Vector mean = panel.values.cols() > 0 ? Vector(panel.values.rowwise().mean())
                                              : Vector::Zero(panel.values.rows());
  for (std::size_t t = 0; t < out.betas.size(); ++t) {
    Matrix b(factors.betas[t].rows(), k + 1);
    b << factors.betas[t], mean;
    out.betas[t] = std::move(b);
    out.gammas[t] = Matrix::Ones(factors.betas[t].rows(), k + 1);
    out.thetas[t] = Matrix::Ones(factors.betas[t].rows(), k + 1);
  }
  return out;
}

// Observer invoked after every iteration (1-based) with the current iterate.
using IterationHook = std::function<void(int, const LoadingsPath&, double)>;

struct FitOptions {
  IterationHook on_iteration;
  bool quiet = true;
};

// Runs the EM loop from explicit starting loadings (factor columns plus the
// intercept column when cfg.intercept is set).
inline FitResult fit_from(const Panel& panel, const ModelConfig& cfg_in, LoadingsPath start,
                          const FitOptions& opts = {}) {
  const ModelConfig cfg = validate_config(cfg_in);
  const Matrix& y = panel.values;
  const auto p = y.rows();
  const auto t_len = static_cast<std::size_t>(y.cols());
  if (t_len == 0 || p == 0) throw DimensionError("fit: empty panel");
  if (start.n_times() != t_len || start.n_series() != static_cast<std::size_t>(p)) {
    throw DimensionError("fit: starting loadings do not match the panel");
  }
  if (start.intercept != cfg.intercept) throw ConfigError("fit: intercept flag differs from starting loadings");
  if (!y.allFinite()) throw NumericalError("fit: panel contains non-finite values");

  const std::size_t k = start.n_factors();
  const auto priors = column_priors(cfg, start.n_columns(), cfg.intercept);
  const FactorDynamics dyn = FactorDynamics::from(cfg);
  const FfbsParams ffbs = FfbsParams::from(cfg);

  // Initial idiosyncratic variances: per-series sample variance (floored).
  VolatilityPath vol = VolatilityPath::constant(static_cast<std::size_t>(p), t_len, 1.0);
  Vector floor(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double m = y.row(j).mean();
    const double var = t_len > 1 ? (y.row(j).array() - m).square().sum() / static_cast<double>(t_len - 1) : 1.0;
    vol.sigma2.row(j).setConstant(std::max(var, 1e-8));
    floor(j) = cfg.sigma2_floor * std::max(var, 1e-8);
  }

  FitResult res;
  LoadingsPath b = std::move(start);
  b.gammas.resize(t_len + 1);
  b.thetas.resize(t_len + 1);
  SmoothedMoments last_moments;

  FilterState fs = kalman_filter(y, b, vol.sigma2, dyn);
  double cur_obj = fs.loglik + log_prior(b, priors);

  for (int it = 1; it <= cfg.max_iter; ++it) {
    // E1: factor moments under the reduced model.
    const SmoothedMoments sm = kalman_smoother(fs);
    const SmoothedMoments sm_aug = cfg.intercept ? with_constant_factor(sm) : sm;
    last_moments = sm;

    // E2: indicator expectations and mixing weights from the current loadings.
    update_indicators(b, priors);

    // M1: one coordinate sweep over every loading.
    SweepStats stats;
    LoadingsPath b_star = sweep_loadings(b, sm_aug, y, vol.sigma2, priors, &stats);
    res.fallback_updates += stats.fallback_updates;
    res.surrogate_trace.push_back(eval_surrogate(b_star, sm_aug, y, vol.sigma2, priors));

    // M3: discount volatility from the forecast errors under B*.
    const FfbsState fwd = ffbs_forward(y, b_star, fs, vol.sigma2, ffbs);
    VolatilityPath vol_new = extract_modes(ffbs_backward(fwd));
    // Without a floor, series absorbed by a single factor drift to zero
    // variance and the filter loses positive definiteness.
    for (Eigen::Index j = 0; j < p; ++j) {
      vol_new.sigma2.row(j) = vol_new.sigma2.row(j).cwiseMax(floor(j));
    }

    // M2 + R
    LoadingsPath b_new;
    if (cfg.px_rotation) {
      RotationSet rot = update_rotation(sm, k, cfg.rotation_phi_aware, cfg.phi_tilde);
      if (cfg.rotation_scale == "omega") rot = rescale_rotation(rot, cfg.sigma2_omega);
      else if (cfg.rotation_scale == "unit") rot = unit_diagonal_rotation(rot);
      b_new = rotate_loadings(b_star, rot);
    } else {
      b_new = std::move(b_star);
    }

    // Accept the full step if it raises the log posterior, else the loadings
    // step alone; when neither does, the iteration is a fixed point.
    FilterState fs_new = kalman_filter(y, b_new, vol_new.sigma2, dyn);
    const double prior_new = log_prior(b_new, priors);
    double new_obj = fs_new.loglik + prior_new;
    bool accepted = new_obj >= cur_obj;
    if (!accepted) {
      FilterState fs_keep = kalman_filter(y, b_new, vol.sigma2, dyn);
      const double keep_obj = fs_keep.loglik + prior_new;
      if (keep_obj >= cur_obj) {
        ++res.volatility_rejections;
        vol_new = vol;
        fs_new = std::move(fs_keep);
        new_obj = keep_obj;
        accepted = true;
      }
    }
    res.iterations_run = it;
    if (!accepted) {
      res.objective_trace.push_back(cur_obj);
      if (opts.on_iteration) opts.on_iteration(it, b, cur_obj);
      res.converged = true;
      break;
    }
    // unchanged loadings: only the variances are still moving
    const bool fixed_loadings = b_new.betas == b.betas;
    b = std::move(b_new);
    vol = std::move(vol_new);
    fs = std::move(fs_new);
    const double rel = std::abs(new_obj - cur_obj) / std::max(1.0, std::abs(cur_obj));
    cur_obj = new_obj;
    res.objective_trace.push_back(cur_obj);
    if (opts.on_iteration) opts.on_iteration(it, b, cur_obj);
    if (rel < cfg.tol || fixed_loadings) {
      res.converged = true;
      break;
    }
  }
  update_indicators(b, priors);
  res.loadings = std::move(b);
  res.volatility = std::move(vol);
  res.moments = std::move(last_moments);
  return res;
}

inline FitResult fit(const Panel& panel, const ModelConfig& cfg, const InitStrategy& init,
                     const FitOptions& opts = {}) {
  validate_config(cfg);
  LoadingsPath start = init_loadings(panel, cfg, init);
  if (cfg.intercept && !start.intercept) start = attach_intercept(start, panel, cfg);
  if (start.n_factors() != static_cast<std::size_t>(cfg.k_max)) {
    throw DimensionError("fit: starting loadings have " + std::to_string(start.n_factors()) +
                         " factor columns, config asks for " + std::to_string(cfg.k_max));
  }
  return fit_from(panel, cfg, std::move(start), opts);
}

}  // namespace dssfm
