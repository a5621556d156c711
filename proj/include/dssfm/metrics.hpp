#pragma once
// Loading-matrix comparisons: left-ordering, sign-aligned RMSE and
// active-factor counts.

#include "dssfm/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace dssfm {

inline constexpr double kDefaultSupportThreshold = 0.1;

// Column permutation that left-orders `b`: columns sorted by the binary number
// read top-to-bottom from the thresholded support (row 0 most significant),
// larger first; ties by larger norm, then original position.
inline std::vector<Eigen::Index> left_order_permutation(const Matrix& b, double threshold) {
  const Eigen::Index k = b.cols();
  const Eigen::Index p = b.rows();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  // Compare support patterns lexicographically from the top row, which is
  // the binary-number order without overflow for large P.
  auto cmp = [&](Eigen::Index x, Eigen::Index y) {
    for (Eigen::Index r = 0; r < p; ++r) {
      const bool ax = std::abs(b(r, x)) > threshold;
      const bool ay = std::abs(b(r, y)) > threshold;
      if (ax != ay) return ax;
    }
    const double nx = b.col(x).squaredNorm();
    const double ny = b.col(y).squaredNorm();
    if (nx != ny) return nx > ny;
    return x < y;
  };
  std::sort(idx.begin(), idx.end(), cmp);
  return idx;
}

inline Matrix left_order(const Matrix& b, double threshold = kDefaultSupportThreshold) {
  const auto perm = left_order_permutation(b, threshold);
  Matrix out(b.rows(), b.cols());
  for (std::size_t c = 0; c < perm.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = b.col(perm[c]);
  return out;
}

// sqrt(trace((B0 - B)'(B0 - B)) / (P K)) after left-ordering both matrices and
// flipping each estimated column's sign when that brings it closer to its
// partner.
inline double rmse(const Matrix& truth, const Matrix& est, double threshold = kDefaultSupportThreshold) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols()) {
    throw DimensionError("rmse: matrices differ in shape");
  }
  if (truth.size() == 0) return 0.0;
  const Matrix a = left_order(truth, threshold);
  Matrix b = left_order(est, threshold);
  double ss = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double plus = (a.col(c) - b.col(c)).squaredNorm();
    const double minus = (a.col(c) + b.col(c)).squaredNorm();
    ss += std::min(plus, minus);
  }
  return std::sqrt(ss / static_cast<double>(a.size()));
}

// Columns with at least two entries whose magnitude exceeds `threshold`.
inline int count_active_factors(const Matrix& b, double threshold = kDefaultSupportThreshold) {
  int n = 0;
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    if ((b.col(c).array().abs() > threshold).count() >= 2) ++n;
  }
  return n;
}

inline double avg_active_per_series(const Matrix& b, double threshold = kDefaultSupportThreshold) {
  if (b.rows() == 0) return 0.0;
  return static_cast<double>((b.array().abs() > threshold).count()) / static_cast<double>(b.rows());
}

// Factor columns of B_t for a path (drops the intercept column).
inline Matrix factor_block(const LoadingsPath& lp, std::size_t t) {
  return lp.betas.at(t).leftCols(static_cast<Eigen::Index>(lp.n_factors()));
}

// Per-time comparison of a fitted path against the truth, t = 1..T. Factor
// blocks with different widths are zero-padded to the wider one.
struct PathEval {
  std::vector<double> rmse;
  std::vector<int> k_true;
  std::vector<int> k_fit;
  std::vector<double> avg_fit;
};

inline PathEval evaluate_path(const LoadingsPath& truth, const LoadingsPath& fit,
                              double threshold = kDefaultSupportThreshold) {
  if (truth.n_series() != fit.n_series()) throw DimensionError("evaluate: truth and fit differ in series count");
  if (truth.n_times() != fit.n_times()) throw DimensionError("evaluate: truth and fit differ in length");
  const auto k = static_cast<Eigen::Index>(std::max(truth.n_factors(), fit.n_factors()));
  const auto p = static_cast<Eigen::Index>(truth.n_series());
  PathEval ev;
  for (std::size_t t = 1; t <= truth.n_times(); ++t) {
    Matrix a = Matrix::Zero(p, k), b = Matrix::Zero(p, k);
    const Matrix bt = factor_block(truth, t), bf = factor_block(fit, t);
    a.leftCols(bt.cols()) = bt;
    b.leftCols(bf.cols()) = bf;
    ev.rmse.push_back(rmse(a, b, threshold));
    ev.k_true.push_back(count_active_factors(bt, threshold));
    ev.k_fit.push_back(count_active_factors(bf, threshold));
    ev.avg_fit.push_back(avg_active_per_series(bf, threshold));
  }
  return ev;
}

// Mean of values[t-1] over t in [first, last], 1-based and inclusive.
template <class T>
double segment_mean(const std::vector<T>& values, std::size_t first, std::size_t last) {
  if (first < 1 || last < first || last > values.size()) throw DimensionError("segment outside the series");
  double s = 0.0;
  for (std::size_t t = first; t <= last; ++t) s += static_cast<double>(values[t - 1]);
  return s / static_cast<double>(last - first + 1);
}

// |B_t| restricted to the factor columns and capped for display.
inline Matrix heatmap_slice(const LoadingsPath& lp, std::size_t t, double cap = 0.5) {
  if (t < 1 || t > lp.n_times()) {
    throw DimensionError("heatmap: time " + std::to_string(t) + " outside 1.." + std::to_string(lp.n_times()));
  }
  if (!(cap > 0.0)) throw ConfigError("heatmap: cap must be positive");
  return factor_block(lp, t).cwiseAbs().cwiseMin(cap);
}

}  // namespace dssfm
