#pragma once
// Shared domain types for the dynamic sparse factor model.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dssfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Sequence of matrices indexed by time. Index 0 is the initial condition
// wherever a quantity has one.
using MatrixPath = std::vector<Matrix>;
using VectorPath = std::vector<Vector>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// Hyperparameters and run controls. Defaults reproduce the simulation setup:
// phi0=0, phi1=0.98, lambda0=0.9, lambda1=10(1-phi1^2), Theta=0.9,
// phi_tilde=0.95, sigma2_omega=1-phi_tilde^2, delta=0.95, n0=20, d0=0.002.
struct ModelConfig {
  double theta = 0.9;
  double lambda0 = 0.9;
  double lambda1 = 10.0 * (1.0 - 0.98 * 0.98);
  double phi0 = 0.0;
  double phi1 = 0.98;
  double phi_tilde = 0.95;
  double sigma2_omega = 1.0 - 0.95 * 0.95;
  double delta = 0.95;
  int k_max = 10;
  double n0 = 20.0;
  double d0 = 0.002;
  int max_iter = 500;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool intercept = false;

  // Use a unit transition inside the Kalman recursions (the random-walk
  // reading of the filter table). The stationary initial variance still uses
  // phi_tilde.
  bool random_walk_filter = false;
  // Rotation matrices from the phi_tilde-aware increment moments instead of
  // the unit-transition form.
  bool rotation_phi_aware = false;
  // Rotate B* back to the reduced parameterisation after each sweep. Off by
  // default: on block-sparse panels with iid factors the lower-triangular
  // rotation folds every column into the first one.
  bool px_rotation = false;
  // Start the SV degrees of freedom at the fixed point 1/(1-delta) (delta<1).
  bool eta0_at_limit = true;
  // Forecast variances in the volatility filter use the previous iteration's
  // Sigma instead of the filter's running scale estimate.
  bool sv_previous_sigma = false;
  // Start each volatility filter pass at the previous iteration's variances
  // (d_j0 = eta_0 sigma^2_j1) rather than at d0.
  bool sv_warm_start = true;
  // Scaling of the expansion matrices before factoring: "none", "omega"
  // (divide by sigma2_omega) or "unit" (rescale to unit diagonal).
  std::string rotation_scale = "none";
  // Lower bound on each idiosyncratic variance as a fraction of that series'
  // sample variance. Zero disables the floor.
  double sigma2_floor = 0.01;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Balanced P x T panel. Column t-1 holds the observation at time t.
struct Panel {
  Matrix values;
  std::vector<std::string> series_names;
  std::vector<std::string> group_labels;  // empty when no sidecar was given
  std::vector<std::string> time_index;
  // Per-series (mean, scale) applied by standardize(); empty if raw.
  std::vector<std::pair<double, double>> standardization;

  std::size_t n_series() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_times() const { return static_cast<std::size_t>(values.cols()); }
  bool standardized() const { return !standardization.empty(); }
};

// B_0..B_T (P x K each) together with the E-step quantities attached to them:
// gammas[t] = <gamma^t>, thetas[t] = theta^t (mixing weight from B_{t-1};
// thetas[0] holds the global Theta). When `intercept` is set the last column
// carries the dynamic intercept c_jt.
struct LoadingsPath {
  MatrixPath betas;
  MatrixPath gammas;
  MatrixPath thetas;
  bool intercept = false;

  std::size_t n_times() const { return betas.empty() ? 0 : betas.size() - 1; }
  std::size_t n_series() const {
    return betas.empty() ? 0 : static_cast<std::size_t>(betas.front().rows());
  }
  std::size_t n_columns() const {
    return betas.empty() ? 0 : static_cast<std::size_t>(betas.front().cols());
  }
  // Number of latent factor columns (excludes the intercept column).
  std::size_t n_factors() const { return n_columns() - (intercept ? 1 : 0); }

  static LoadingsPath zeros(std::size_t t_len, std::size_t p, std::size_t k,
                            bool intercept = false) {
    LoadingsPath lp;
    const auto rows = static_cast<Eigen::Index>(p);
    const auto cols = static_cast<Eigen::Index>(k);
    lp.betas.assign(t_len + 1, Matrix::Zero(rows, cols));
    lp.gammas.assign(t_len + 1, Matrix::Zero(rows, cols));
    lp.thetas.assign(t_len + 1, Matrix::Zero(rows, cols));
    lp.intercept = intercept;
    return lp;
  }
};

// omega_{t|T}, V_{t|T} for t = 0..T and V_{t,t-1|T} for t = 1..T
// (lag_covs[t-1] holds the pair (t, t-1)).
struct SmoothedMoments {
  VectorPath means;
  MatrixPath covs;
  MatrixPath lag_covs;

  std::size_t n_times() const { return means.empty() ? 0 : means.size() - 1; }
  std::size_t dim() const {
    return means.empty() ? 0 : static_cast<std::size_t>(means.front().size());
  }
};

// Idiosyncratic variances sigma2(j, t-1) = sigma^2_{jt} plus the filter state
// of the discount-volatility recursion that produced them.
struct VolatilityPath {
  Matrix sigma2;
  Vector eta_filter;  // eta_1..eta_T, shared across series
  Matrix d_filter;    // P x T
  Matrix s_filter;    // P x T

  static VolatilityPath constant(std::size_t p, std::size_t t_len, double value) {
    VolatilityPath v;
    const auto rows = static_cast<Eigen::Index>(p);
    const auto cols = static_cast<Eigen::Index>(t_len);
    v.sigma2 = Matrix::Constant(rows, cols, value);
    v.eta_filter = Vector::Zero(cols);
    v.d_filter = Matrix::Zero(rows, cols);
    v.s_filter = Matrix::Zero(rows, cols);
    return v;
  }
};

struct FitResult {
  LoadingsPath loadings;
  VolatilityPath volatility;
  SmoothedMoments moments;
  // Observed-data log posterior log p(Y | B, Sigma) + log pi(B) after each
  // accepted iteration.
  std::vector<double> objective_trace;
  // Loadings surrogate (negated Q1) after each sweep, under that
  // iteration's E-step.
  std::vector<double> surrogate_trace;
  int iterations_run = 0;
  bool converged = false;
  // Iterations whose volatility update was discarded because it lowered the
  // log posterior.
  int volatility_rejections = 0;
  // Coordinates where the clamped-threshold update was replaced by the
  // numerical minimizer, summed over iterations.
  std::size_t fallback_updates = 0;
};

}  // namespace dssfm
