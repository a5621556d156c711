#pragma once
// Loadings M-step: zero-augmented per-series regressions and closed-form
// one-site updates of every beta_jk^t (t = 0..T), one-step-late in the
// indicator expectations.

#include "dssfm/dss_prior.hpp"
#include "dssfm/types.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace dssfm {

// Prior attached to one loading column. DSS columns use the stationary slab
// variance for beta^0; the dynamic intercept is a slab-only random walk with
// a unit-variance initial condition.
struct ColumnPrior {
  DssParams dss;
  double initial_var = 10.0;
  bool slab_only = false;

  static ColumnPrior factor(const DssParams& p) { return {p, p.stationary_variance(), false}; }
  static ColumnPrior intercept(const ModelConfig& cfg) {
    DssParams p = DssParams::from(cfg);
    p.phi0 = 0.0;
    p.phi1 = 1.0 - 1e-9;
    p.theta = 1.0;
    return {p, 1.0, true};
  }
};

inline std::vector<ColumnPrior> column_priors(const ModelConfig& cfg, std::size_t n_columns,
                                              bool intercept) {
  std::vector<ColumnPrior> priors(n_columns, ColumnPrior::factor(DssParams::from(cfg)));
  if (intercept && n_columns > 0) priors.back() = ColumnPrior::intercept(cfg);
  return priors;
}

// ---------------------------------------------------------------------------
// Zero-augmented regression

struct AugmentedRegression {
  VectorPath responses;  // index t = 1..T; responses[0] is empty
  MatrixPath design;     // (1+K) x K, same indexing
};

// Design matrices Omega^t = [omega_{t|T}, sqrt(s_1) U_1, ..., sqrt(s_K) U_K]'
// from the eigendecomposition of V_{t|T}. Shared by every series.
inline MatrixPath augmented_designs(const SmoothedMoments& moments) {
  const std::size_t t_len = moments.n_times();
  const auto k = static_cast<Eigen::Index>(moments.dim());
  MatrixPath design(t_len + 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig;
  for (std::size_t t = 1; t <= t_len; ++t) {
    Matrix& d = design[t];
    d.resize(k + 1, k);
    d.row(0) = moments.means[t].transpose();
    eig.compute(moments.covs[t]);
    if (eig.info() != Eigen::Success) {
      throw NumericalError("augmented_designs: eigendecomposition failed at t=" + std::to_string(t));
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      const double s = std::max(eig.eigenvalues()(i), 0.0);
      d.row(i + 1) = std::sqrt(s) * eig.eigenvectors().col(i).transpose();
    }
  }
  return design;
}

inline AugmentedRegression build_augmented(const SmoothedMoments& moments, const Panel& panel,
                                           std::size_t j) {
  if (moments.n_times() != panel.n_times()) {
    throw DimensionError("build_augmented: moments and panel lengths differ");
  }
  if (j >= panel.n_series()) throw DimensionError("build_augmented: series index out of range");
  AugmentedRegression aug;
  aug.design = augmented_designs(moments);
  aug.responses.resize(aug.design.size());
  const auto k = static_cast<Eigen::Index>(moments.dim());
  for (std::size_t t = 1; t < aug.design.size(); ++t) {
    aug.responses[t] = Vector::Zero(k + 1);
    aug.responses[t](0) = panel.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t - 1));
  }
  return aug;
}

// ---------------------------------------------------------------------------
// Univariate surrogate for a single coordinate

// Raw ingredients of the coordinate objective for beta = beta_jk^t. For t >= 1:
//   1/2 w beta^2 - z beta                                  (data fit)
//   + g_t (beta - mu(beta_{t-1}))^2 / (2 lambda1) + (1-g_t) lambda0 |beta|
//   + g_{t+1} (beta_{t+1} - mu(beta))^2 / (2 lambda1)      (if t < T)
//   + M [(beta - phi0)^2 / (2 v_st) - lambda0 |beta|]       (if t < T)
// with M = g_{t+1} - theta_{t+1} held at its E-step value. For t = 0 the
// data fit and M terms are absent and the first line is replaced by
//   g_0 (beta - phi0)^2 / (2 v_0) + (1-g_0) lambda0 |beta|.
struct CoordinateTerms {
  ColumnPrior prior;
  bool initial = false;
  double w_fit = 0.0;
  double z_fit = 0.0;
  double gamma = 0.0;
  double prev_mean = 0.0;
  bool has_next = false;
  double gamma_next = 0.0;
  double theta_next = 0.0;
  double beta_next = 0.0;
  double current = 0.0;  // value before the update (used by the majorized step)

  double coupling() const { return (has_next && !initial) ? gamma_next - theta_next : 0.0; }

  double objective(double beta) const {
    const DssParams& p = prior.dss;
    const double v_st = p.stationary_variance();
    double u = 0.0;
    if (initial) {
      const double r = beta - p.phi0;
      u += gamma * r * r / (2.0 * prior.initial_var) + (1.0 - gamma) * p.lambda0 * std::abs(beta);
    } else {
      const double r = beta - prev_mean;
      u += 0.5 * w_fit * beta * beta - z_fit * beta;
      u += gamma * r * r / (2.0 * p.lambda1) + (1.0 - gamma) * p.lambda0 * std::abs(beta);
    }
    if (has_next) {
      const double r = beta_next - p.slab_mean(beta);
      u += gamma_next * r * r / (2.0 * p.lambda1);
      if (!initial) {
        const double c = beta - p.phi0;
        u += coupling() * (c * c / (2.0 * v_st) - p.lambda0 * std::abs(beta));
      }
    }
    return u;
  }

  // objective(beta) = 1/2 quad beta^2 - lin beta + thresh |beta| + const
  struct Reduced {
    double quad;
    double lin;
    double thresh;
  };

  Reduced reduce() const {
    const DssParams& p = prior.dss;
    const double v_st = p.stationary_variance();
    Reduced r{0.0, 0.0, 0.0};
    if (initial) {
      r.quad = gamma / prior.initial_var;
      r.lin = gamma * p.phi0 / prior.initial_var;
      r.thresh = p.lambda0 * (1.0 - gamma);
    } else {
      r.quad = w_fit + gamma / p.lambda1;
      r.lin = z_fit + gamma * prev_mean / p.lambda1;
      r.thresh = p.lambda0 * (1.0 - gamma);
    }
    if (has_next) {
      r.quad += gamma_next * p.phi1 * p.phi1 / p.lambda1;
      r.lin += gamma_next * p.phi1 * (beta_next - p.phi0 * (1.0 - p.phi1)) / p.lambda1;
      if (!initial) {
        const double m = coupling();
        r.quad += m / v_st;
        r.lin += m * p.phi0 / v_st;
        r.thresh -= p.lambda0 * m;
      }
    }
    return r;
  }
};

struct CoordinateUpdate {
  double value = 0.0;
  bool fallback = false;        // numerical minimizer replaced the closed form
  bool zero_denominator = false;  // t = 0 with both indicator expectations zero
  bool majorized = false;       // objective unbounded below; tangent-majorizer step taken
};

namespace detail {

// Golden-section minimisation of a unimodal function on [lo, hi].
template <class F>
double golden_section(F&& f, double lo, double hi, double tol = 1e-13) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 300 && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

inline double soft_threshold(double z, double lambda) {
  const double mag = std::abs(z) - lambda;
  if (mag <= 0.0) return 0.0;
  return z > 0.0 ? mag : -mag;
}

}  // namespace detail

// Minimises the coordinate objective numerically: golden-section on each
// half-line (the objective is convex on both), keeping the better side.
inline double numerical_coordinate_minimizer(const CoordinateTerms& terms, double radius) {
  auto f = [&terms](double b) { return terms.objective(b); };
  const double pos = detail::golden_section(f, 0.0, radius);
  const double neg = detail::golden_section(f, -radius, 0.0);
  return f(pos) <= f(neg) ? pos : neg;
}

// Closed-form update [|Z| - Lambda]_+ sign(Z) / D with the threshold clamped
// at zero. A negative threshold is checked against the numerical minimizer,
// which is used whenever it attains a lower objective.
inline CoordinateUpdate solve_coordinate(const CoordinateTerms& terms) {
  auto r = terms.reduce();
  CoordinateUpdate out;
  if (!(r.quad > 0.0) && terms.initial) {
    out.zero_denominator = true;
    return out;
  }
  if (!(r.quad > 0.0)) {
    // A negative coupling weight makes the objective concave in beta and
    // unbounded below. Replace the concave quadratic by its tangent at the
    // current value: the resulting majorizer touches the objective there, so
    // its minimizer cannot increase it.
    const double m = terms.coupling();
    const double v_st = terms.prior.dss.stationary_variance();
    r.quad -= m / v_st;
    r.lin -= m * terms.current / v_st;
    if (!(r.quad > 0.0)) {
      throw NumericalError("update_coefficient: non-positive effective denominator (" +
                           std::to_string(r.quad) + ")");
    }
    out.majorized = true;
    out.value = detail::soft_threshold(r.lin, std::max(r.thresh, 0.0)) / r.quad;
    if (terms.objective(out.value) > terms.objective(terms.current)) out.value = terms.current;
    return out;
  }
  if (r.thresh >= 0.0) {
    out.value = detail::soft_threshold(r.lin, r.thresh) / r.quad;
    return out;
  }
  const double clamped = r.lin / r.quad;
  const double radius = std::max(10.0, 4.0 * (std::abs(r.lin) + std::abs(r.thresh)) / r.quad + 1.0);
  const double numeric = numerical_coordinate_minimizer(terms, radius);
  out.value = clamped;
  if (terms.objective(numeric) < terms.objective(clamped)) {
    out.value = numeric;
    out.fallback = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// E2: indicator expectations and mixing weights from the current loadings.

inline void update_indicators(LoadingsPath& lp, const std::vector<ColumnPrior>& priors) {
  const std::size_t t_len = lp.n_times();
  const auto p = static_cast<Eigen::Index>(lp.n_series());
  const auto k = static_cast<Eigen::Index>(lp.n_columns());
  if (priors.size() != static_cast<std::size_t>(k)) {
    throw DimensionError("update_indicators: one prior per column required");
  }
  lp.gammas.resize(t_len + 1);
  lp.thetas.resize(t_len + 1);
  for (std::size_t t = 0; t <= t_len; ++t) {
    lp.gammas[t].resize(p, k);
    lp.thetas[t].resize(p, k);
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    const ColumnPrior& pr = priors[static_cast<std::size_t>(c)];
    for (Eigen::Index j = 0; j < p; ++j) {
      if (pr.slab_only) {
        for (std::size_t t = 0; t <= t_len; ++t) {
          lp.gammas[t](j, c) = 1.0;
          lp.thetas[t](j, c) = 1.0;
        }
        continue;
      }
      lp.thetas[0](j, c) = pr.dss.theta;
      lp.gammas[0](j, c) = initial_indicator_expectation(lp.betas[0](j, c), pr.dss);
      for (std::size_t t = 1; t <= t_len; ++t) {
        const double prev = lp.betas[t - 1](j, c);
        const double th = mixing_weight(prev, pr.dss);
        lp.thetas[t](j, c) = th;
        lp.gammas[t](j, c) = indicator_expectation_given(lp.betas[t](j, c), prev, th, pr.dss);
      }
    }
  }
}

inline void update_indicators(LoadingsPath& lp, const DssParams& p) {
  update_indicators(lp, std::vector<ColumnPrior>(lp.n_columns(), ColumnPrior::factor(p)));
}

// ---------------------------------------------------------------------------
// Coordinate updates against a LoadingsPath

inline CoordinateTerms coordinate_terms(std::size_t j, std::size_t k, std::size_t t,
                                        const LoadingsPath& state, const ColumnPrior& prior,
                                        double w_fit, double z_fit) {
  const auto jj = static_cast<Eigen::Index>(j);
  const auto kk = static_cast<Eigen::Index>(k);
  const std::size_t t_len = state.n_times();
  CoordinateTerms terms;
  terms.prior = prior;
  terms.initial = (t == 0);
  terms.w_fit = w_fit;
  terms.z_fit = z_fit;
  terms.gamma = state.gammas[t](jj, kk);
  terms.current = state.betas[t](jj, kk);
  if (t > 0) terms.prev_mean = prior.dss.slab_mean(state.betas[t - 1](jj, kk));
  terms.has_next = t < t_len;
  if (terms.has_next) {
    terms.gamma_next = state.gammas[t + 1](jj, kk);
    terms.theta_next = state.thetas[t + 1](jj, kk);
    terms.beta_next = state.betas[t + 1](jj, kk);
  }
  return terms;
}

// One-site update of beta_jk^t for t >= 1. z and W are formed from scratch
// out of the augmented regression and the current coefficients.
inline CoordinateUpdate update_coefficient_detail(std::size_t j, std::size_t k, std::size_t t,
                                                  const LoadingsPath& state,
                                                  const AugmentedRegression& aug,
                                                  const VolatilityPath& vol,
                                                  const ColumnPrior& prior) {
  if (t == 0 || t > state.n_times()) {
    throw DimensionError("update_coefficient: t must lie in 1..T");
  }
  const auto jj = static_cast<Eigen::Index>(j);
  const auto kk = static_cast<Eigen::Index>(k);
  const Matrix& design = aug.design[t];
  const double s2 = vol.sigma2(jj, static_cast<Eigen::Index>(t - 1));
  const Vector beta = state.betas[t].row(jj).transpose();
  const Vector resid_minus_k = aug.responses[t] - design * beta + design.col(kk) * beta(kk);
  const double w_fit = design.col(kk).squaredNorm() / s2;
  const double z_fit = design.col(kk).dot(resid_minus_k) / s2;
  return solve_coordinate(coordinate_terms(j, k, t, state, prior, w_fit, z_fit));
}

inline double update_coefficient(std::size_t j, std::size_t k, std::size_t t,
                                 const LoadingsPath& state, const AugmentedRegression& aug,
                                 const VolatilityPath& vol, const DssParams& p) {
  return update_coefficient_detail(j, k, t, state, aug, vol, ColumnPrior::factor(p)).value;
}

inline CoordinateUpdate update_initial_detail(std::size_t j, std::size_t k,
                                              const LoadingsPath& state,
                                              const ColumnPrior& prior) {
  return solve_coordinate(coordinate_terms(j, k, 0, state, prior, 0.0, 0.0));
}

inline double update_initial(std::size_t j, std::size_t k, const LoadingsPath& state,
                             const DssParams& p) {
  return update_initial_detail(j, k, state, ColumnPrior::factor(p)).value;
}

// ---------------------------------------------------------------------------
// Full sweep

struct SweepStats {
  std::size_t fallback_updates = 0;
  std::size_t zero_denominators = 0;
  std::size_t majorized_updates = 0;
  // Largest gap between incrementally maintained and recomputed residuals
  // (filled only when requested).
  double residual_drift = 0.0;
};

// One pass over (j, k, t) with t ascending within k within j. Residuals are
// refreshed after every single-coordinate change. Indicator expectations and
// mixing weights in `state` are held fixed.
inline LoadingsPath sweep_loadings(const LoadingsPath& state, const SmoothedMoments& moments,
                                   const Matrix& y, const Matrix& sigma2,
                                   const std::vector<ColumnPrior>& priors,
                                   SweepStats* stats = nullptr, bool check_residuals = false) {
  const std::size_t t_len = state.n_times();
  const auto p = static_cast<Eigen::Index>(state.n_series());
  const auto k = static_cast<Eigen::Index>(state.n_columns());
  if (moments.n_times() != t_len || moments.dim() != static_cast<std::size_t>(k) ||
      y.cols() != static_cast<Eigen::Index>(t_len) || y.rows() != p ||
      sigma2.rows() != p || sigma2.cols() != y.cols() ||
      priors.size() != static_cast<std::size_t>(k)) {
    throw DimensionError("sweep_loadings: inconsistent dimensions");
  }
  LoadingsPath out = state;
  const MatrixPath design = augmented_designs(moments);
  std::vector<Vector> col_norm2(t_len + 1);
  for (std::size_t t = 1; t <= t_len; ++t) col_norm2[t] = design[t].colwise().squaredNorm().transpose();

  SweepStats local;
  std::vector<Vector> resid(t_len + 1);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (std::size_t t = 1; t <= t_len; ++t) {
      resid[t] = -design[t] * out.betas[t].row(j).transpose();
      resid[t](0) += y(j, static_cast<Eigen::Index>(t - 1));
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      const ColumnPrior& prior = priors[static_cast<std::size_t>(c)];
      const auto jj = static_cast<std::size_t>(j);
      const auto cc = static_cast<std::size_t>(c);
      {
        const auto upd = solve_coordinate(coordinate_terms(jj, cc, 0, out, prior, 0.0, 0.0));
        if (upd.fallback) ++local.fallback_updates;
        if (upd.zero_denominator) ++local.zero_denominators;
        out.betas[0](j, c) = upd.value;
      }
      for (std::size_t t = 1; t <= t_len; ++t) {
        const double s2 = sigma2(j, static_cast<Eigen::Index>(t - 1));
        const double old = out.betas[t](j, c);
        const double n2 = col_norm2[t](c);
        const double w_fit = n2 / s2;
        const double z_fit = (design[t].col(c).dot(resid[t]) + n2 * old) / s2;
        const auto upd = solve_coordinate(coordinate_terms(jj, cc, t, out, prior, w_fit, z_fit));
        if (upd.fallback) ++local.fallback_updates;
        if (upd.majorized) ++local.majorized_updates;
        const double delta = upd.value - old;
        if (delta != 0.0) {
          out.betas[t](j, c) = upd.value;
          resid[t].noalias() -= delta * design[t].col(c);
        }
      }
    }
    if (check_residuals) {
      for (std::size_t t = 1; t <= t_len; ++t) {
        Vector fresh = -design[t] * out.betas[t].row(j).transpose();
        fresh(0) += y(j, static_cast<Eigen::Index>(t - 1));
        local.residual_drift = std::max(local.residual_drift, (fresh - resid[t]).cwiseAbs().maxCoeff());
      }
    }
  }
  if (stats) *stats = local;
  return out;
}

inline LoadingsPath sweep_loadings(const LoadingsPath& state, const SmoothedMoments& moments,
                                   const Panel& panel, const VolatilityPath& vol,
                                   const DssParams& p) {
  return sweep_loadings(state, moments, panel.values, vol.sigma2,
                        std::vector<ColumnPrior>(state.n_columns(), ColumnPrior::factor(p)));
}

}  // namespace dssfm
