#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

using namespace dssfm;

namespace {

// y = B w_t + noise with B fixed over time.
Panel factor_panel(const Matrix& b, Eigen::Index t_len, std::mt19937_64& rng, double noise = 1.0) {
  Panel panel;
  const Matrix w = oracle::random_matrix(b.cols(), t_len, rng);
  panel.values = b * w + oracle::random_matrix(b.rows(), t_len, rng, noise);
  for (Eigen::Index j = 0; j < b.rows(); ++j) panel.series_names.push_back("s" + std::to_string(j));
  for (Eigen::Index t = 0; t < t_len; ++t) panel.time_index.push_back(std::to_string(t + 1));
  return panel;
}

bool bit_identical(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(InitLoadings, ZerosStrategy) {
  Panel panel;
  panel.values = Matrix::Ones(3, 5);
  ModelConfig cfg;
  cfg.k_max = 2;
  InitStrategy init;
  init.kind = InitStrategy::Kind::zeros;
  const auto lp = init_loadings(panel, cfg, init);
  ASSERT_EQ(lp.n_times(), 5u);
  for (const auto& b : lp.betas) EXPECT_EQ(b, Matrix::Zero(3, 2));
}

TEST(InitLoadings, SingleWindowGivesOneMatrix) {
  std::mt19937_64 rng(1);
  Matrix b(4, 2);
  b << 1, 0, 1, 0, 0, 1, 0, 1;
  const Panel panel = factor_panel(b, 20, rng);
  ModelConfig cfg;
  cfg.k_max = 2;
  InitStrategy init;
  init.window = 20;
  const auto lp = init_loadings(panel, cfg, init);
  for (std::size_t t = 1; t <= 20; ++t) EXPECT_EQ(lp.betas[t], lp.betas[0]);
}

TEST(InitLoadings, RankOneDataRecoversDirection) {
  Vector u(4), v(12);
  u << 1.0, 2.0, -1.0, 0.5;
  for (Eigen::Index t = 0; t < 12; ++t) v(t) = std::sin(0.7 * static_cast<double>(t) + 0.3);
  Panel panel;
  panel.values = u * v.transpose();
  ModelConfig cfg;
  cfg.k_max = 3;
  InitStrategy init;
  init.window = 12;
  const auto lp = init_loadings(panel, cfg, init);
  const Vector c0 = lp.betas[1].col(0);
  const double cosine = std::abs(c0.dot(u)) / (c0.norm() * u.norm());
  EXPECT_NEAR(cosine, 1.0, 1e-12);
  EXPECT_EQ(lp.betas[1].rightCols(2), Matrix::Zero(4, 2));
}

TEST(InitLoadings, RejectsBadWarmStartAndWindow) {
  Panel panel;
  panel.values = Matrix::Ones(2, 4);
  ModelConfig cfg;
  InitStrategy init;
  init.window = 0;
  EXPECT_THROW(init_loadings(panel, cfg, init), ConfigError);
  init.kind = InitStrategy::Kind::warm_start_path;
  init.path = "/nonexistent/loadings.csv";
  EXPECT_THROW(init_loadings(panel, cfg, init), IoError);
  EXPECT_THROW(parse_init_kind("pca"), ConfigError);
}

TEST(Fit, ZeroDataStaysAtZero) {
  Panel panel;
  panel.values = Matrix::Zero(3, 10);
  ModelConfig cfg;
  cfg.k_max = 2;
  InitStrategy init;
  init.kind = InitStrategy::Kind::zeros;
  std::vector<double> seen;
  FitOptions opts;
  opts.on_iteration = [&](int, const LoadingsPath& b, double) {
    for (const auto& m : b.betas) seen.push_back(m.cwiseAbs().maxCoeff());
  };
  const auto res = fit(panel, cfg, init, opts);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.iterations_run, 2);
  for (double x : seen) EXPECT_EQ(x, 0.0);
  for (const auto& m : res.loadings.betas) EXPECT_EQ(m, Matrix::Zero(3, 2));
}

TEST(Fit, RecoversSingleActiveFactor) {
  std::mt19937_64 rng(2);
  Matrix b = Matrix::Zero(4, 2);
  b.col(0) << 1.5, 1.2, -1.0, 0.0;
  const Panel panel = factor_panel(b, 30, rng, 0.5);
  ModelConfig cfg;
  cfg.k_max = 2;
  cfg.max_iter = 200;
  InitStrategy init;
  init.window = 30;
  const auto res = fit(panel, cfg, init);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.iterations_run, 200);
  for (std::size_t t = 0; t <= 30; ++t) EXPECT_GE(count_active_factors(res.loadings.betas[t]), 1) << "t=" << t;
}

TEST(Fit, DeterministicAcrossRuns) {
  std::mt19937_64 rng(3);
  const Panel panel = factor_panel(oracle::random_matrix(5, 2, rng), 25, rng);
  ModelConfig cfg;
  cfg.k_max = 2;
  cfg.max_iter = 15;
  InitStrategy init;
  init.window = 10;
  const auto a = fit(panel, cfg, init);
  const auto b = fit(panel, cfg, init);
  ASSERT_EQ(a.iterations_run, b.iterations_run);
  for (std::size_t t = 0; t <= 25; ++t) EXPECT_TRUE(bit_identical(a.loadings.betas[t], b.loadings.betas[t]));
  EXPECT_TRUE(bit_identical(a.volatility.sigma2, b.volatility.sigma2));
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(Fit, TraceIsNonDecreasingOnRandomInstances) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index p = 2 + rep % 9, k = 1 + rep % 3, t_len = 10 + (7 * rep) % 41;
    Matrix b = oracle::random_matrix(p, k, rng);
    for (Eigen::Index i = 0; i < b.size(); ++i)
      if ((i + rep) % 3 == 0) b(i) = 0.0;
    const Panel panel = factor_panel(b, t_len, rng);
    ModelConfig cfg;
    cfg.k_max = static_cast<int>(k);
    cfg.max_iter = 40;
    InitStrategy init;
    init.window = static_cast<int>(t_len);
    const auto res = fit(panel, cfg, init);
    ASSERT_EQ(res.objective_trace.size(), static_cast<std::size_t>(res.iterations_run));
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i) {
      EXPECT_GE(res.objective_trace[i], res.objective_trace[i - 1] - 1e-8) << "rep " << rep << " it " << i;
    }
  }
}

TEST(Fit, LeavesPanelUntouched) {
  std::mt19937_64 rng(5);
  const Panel panel = factor_panel(oracle::random_matrix(4, 1, rng), 15, rng);
  const Panel copy = panel;
  ModelConfig cfg;
  cfg.k_max = 1;
  cfg.max_iter = 5;
  InitStrategy init;
  init.window = 15;
  fit(panel, cfg, init);
  EXPECT_TRUE(bit_identical(panel.values, copy.values));
}

TEST(Fit, IdentityScaleRotationMatchesPlainIteration) {
  // With K = 1 and unit-diagonal scaling every A_t is 1, so the expanded
  // iteration reduces to the plain one up to the ridge.
  std::mt19937_64 rng(6);
  const Panel panel = factor_panel(oracle::random_matrix(4, 1, rng), 20, rng);
  ModelConfig cfg;
  cfg.k_max = 1;
  cfg.max_iter = 3;
  InitStrategy init;
  init.window = 20;
  const auto plain = fit(panel, cfg, init);
  cfg.px_rotation = true;
  cfg.rotation_scale = "unit";
  const auto expanded = fit(panel, cfg, init);
  for (std::size_t t = 0; t <= 20; ++t) {
    EXPECT_LT((plain.loadings.betas[t] - expanded.loadings.betas[t]).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Fit, InterceptTracksLocationShift) {
  std::mt19937_64 rng(7);
  Matrix b(4, 1);
  b << 1.0, 0.8, -0.9, 0.0;
  Panel panel = factor_panel(b, 100, rng, 0.7);
  panel.values.row(3).array() += 5.0;
  ModelConfig cfg;
  cfg.k_max = 1;
  cfg.intercept = true;
  cfg.max_iter = 100;
  InitStrategy init;
  init.window = 100;
  const auto res = fit(panel, cfg, init);
  ASSERT_TRUE(res.loadings.intercept);
  EXPECT_EQ(res.loadings.n_factors(), 1u);
  double avg = 0.0;
  for (std::size_t t = 1; t <= 100; ++t) avg += res.loadings.betas[t](3, 1);
  EXPECT_NEAR(avg / 100.0, 5.0, 0.5);
  // the intercept column never counts as a factor
  EXPECT_LE(count_active_factors(factor_block(res.loadings, 50)), 1);
}

TEST(Fit, InterceptOffKeepsDimensions) {
  std::mt19937_64 rng(8);
  const Panel panel = factor_panel(oracle::random_matrix(3, 2, rng), 12, rng);
  ModelConfig cfg;
  cfg.k_max = 2;
  cfg.max_iter = 3;
  InitStrategy init;
  init.window = 12;
  const auto res = fit(panel, cfg, init);
  EXPECT_FALSE(res.loadings.intercept);
  EXPECT_EQ(res.loadings.n_columns(), 2u);
}

TEST(Fit, WarmStartFromSavedPath) {
  std::mt19937_64 rng(9);
  const Panel panel = factor_panel(oracle::random_matrix(3, 2, rng), 12, rng);
  ModelConfig cfg;
  cfg.k_max = 2;
  cfg.max_iter = 4;
  InitStrategy init;
  init.window = 12;
  const auto first = fit(panel, cfg, init);
  const auto path = (std::filesystem::temp_directory_path() / "dssfm_warm_start.csv").string();
  save_loadings(path, first.loadings);
  InitStrategy warm;
  warm.kind = InitStrategy::Kind::warm_start_path;
  warm.path = path;
  const auto lp = init_loadings(panel, cfg, warm);
  for (std::size_t t = 0; t <= 12; ++t) EXPECT_EQ(lp.betas[t], first.loadings.betas[t]);
  EXPECT_NO_THROW(fit(panel, cfg, warm));
  std::filesystem::remove(path);
}

TEST(Fit, RejectsInconsistentStart) {
  Panel panel;
  panel.values = Matrix::Ones(3, 5);
  ModelConfig cfg;
  cfg.k_max = 2;
  EXPECT_THROW(fit_from(panel, cfg, LoadingsPath::zeros(4, 3, 2)), DimensionError);
  cfg.intercept = true;
  EXPECT_THROW(fit_from(panel, cfg, LoadingsPath::zeros(5, 3, 2)), ConfigError);
}
