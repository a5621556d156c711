#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace dssfm;

namespace {

struct Scenario {
  LoadingsPath lp;
  SmoothedMoments m;
  Panel panel;
  VolatilityPath vol;
};

SmoothedMoments random_moments(std::size_t t_len, Eigen::Index k, std::mt19937_64& rng) {
  SmoothedMoments m;
  for (std::size_t t = 0; t <= t_len; ++t) {
    m.means.push_back(oracle::random_matrix(k, 1, rng));
    m.covs.push_back(oracle::random_spd(k, rng, 0.05) * 0.3);
    if (t >= 1) m.lag_covs.push_back(Matrix::Zero(k, k));
  }
  return m;
}

// Random state with indicator expectations and mixing weights drawn
// independently of the loadings.
Scenario random_scenario(std::mt19937_64& rng, std::size_t t_len, std::size_t p, std::size_t k) {
  Scenario s;
  s.lp = oracle::random_path(t_len, p, k, rng);
  for (std::size_t t = 0; t <= t_len; ++t) {
    for (Eigen::Index i = 0; i < s.lp.gammas[t].size(); ++i) {
      s.lp.gammas[t](i) = oracle::uniform(rng, 0, 1);
      s.lp.thetas[t](i) = oracle::uniform(rng, 0, 1);
    }
  }
  s.m = random_moments(t_len, static_cast<Eigen::Index>(k), rng);
  s.panel.values = oracle::random_matrix(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(t_len), rng, 1.5);
  s.vol = VolatilityPath::constant(p, t_len, 1.0);
  for (Eigen::Index i = 0; i < s.vol.sigma2.size(); ++i) s.vol.sigma2(i) = oracle::uniform(rng, 0.2, 2.0);
  return s;
}

const DssParams kPaper = DssParams::from(ModelConfig{});

}  // namespace

TEST(BuildAugmented, IdentityCovarianceGivesUnitRows) {
  SmoothedMoments m;
  m.means = {Vector::Zero(2), Vector::Constant(2, 0.5)};
  m.covs = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  m.lag_covs = {Matrix::Zero(2, 2)};
  Panel panel;
  panel.values = Matrix::Constant(1, 1, 2.0);
  const auto aug = build_augmented(m, panel, 0);
  EXPECT_EQ(aug.design[1].row(0), m.means[1].transpose());
  EXPECT_LT((aug.design[1].bottomRows(2).cwiseAbs() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(aug.responses[1](0), 2.0);
  EXPECT_EQ(aug.responses[1].tail(2), Vector::Zero(2));
}

TEST(BuildAugmented, ZeroCovarianceReducesToPlainRegression) {
  SmoothedMoments m;
  m.means = {Vector::Zero(2), Vector::Constant(2, 0.5)};
  m.covs = {Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  m.lag_covs = {Matrix::Zero(2, 2)};
  const auto d = augmented_designs(m);
  EXPECT_EQ(d[1].bottomRows(2), Matrix::Zero(2, 2));
}

TEST(BuildAugmented, QuadraticFormIdentity) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    SmoothedMoments m;
    m.means = {Vector::Zero(3), oracle::random_matrix(3, 1, rng)};
    m.covs = {Matrix::Zero(3, 3), oracle::random_spd(3, rng, 0.0)};
    m.lag_covs = {Matrix::Zero(3, 3)};
    Panel panel;
    panel.values = oracle::random_matrix(1, 1, rng);
    const auto aug = build_augmented(m, panel, 0);
    const Vector beta = oracle::random_matrix(3, 1, rng);
    const double lhs = (aug.responses[1] - aug.design[1] * beta).squaredNorm();
    const double e = panel.values(0, 0) - m.means[1].dot(beta);
    const double rhs = e * e + beta.dot(m.covs[1] * beta);
    EXPECT_NEAR(lhs, rhs, 1e-10 * (1 + rhs));
  }
}

TEST(UpdateCoefficient, ZeroSignalStaysAtZero) {
  auto lp = LoadingsPath::zeros(3, 1, 1);
  for (auto& g : lp.gammas) g.setConstant(0.4);
  for (auto& th : lp.thetas) th.setConstant(0.7);
  SmoothedMoments m;
  for (int t = 0; t <= 3; ++t) {
    m.means.push_back(Vector::Constant(1, 0.8));
    m.covs.push_back(Matrix::Constant(1, 1, 0.2));
    if (t) m.lag_covs.push_back(Matrix::Zero(1, 1));
  }
  Panel panel;
  panel.values = Matrix::Zero(1, 3);
  const auto aug = build_augmented(m, panel, 0);
  const auto vol = VolatilityPath::constant(1, 3, 1.0);
  for (std::size_t t = 1; t <= 3; ++t) EXPECT_EQ(update_coefficient(0, 0, t, lp, aug, vol, kPaper), 0.0);
}

TEST(UpdateCoefficient, MatchesGoldenSectionOracle) {
  std::mt19937_64 rng(2);
  int fallbacks = 0;
  for (int rep = 0; rep < 60; ++rep) {
    auto s = random_scenario(rng, 3, 1, 1);
    const auto aug = build_augmented(s.m, s.panel, 0);
    for (std::size_t t = 1; t <= 3; ++t) {
      const auto upd = update_coefficient_detail(0, 0, t, s.lp, aug, s.vol, ColumnPrior::factor(kPaper));
      ASSERT_FALSE(upd.majorized);
      const double ref = oracle::coordinate_minimizer(s.lp, s.m, s.panel.values, s.vol.sigma2, kPaper, 0, 0, t);
      if (upd.fallback) {
        ++fallbacks;
        auto f = [&](double b) {
          LoadingsPath q = s.lp;
          q.betas[t](0, 0) = b;
          return -oracle::naive_surrogate(q, s.m, s.panel.values, s.vol.sigma2, kPaper);
        };
        EXPECT_LE(f(upd.value), f(ref) + 1e-9);
      } else {
        EXPECT_NEAR(upd.value, ref, 1e-6) << "rep " << rep << " t " << t;
      }
    }
  }
  RecordProperty("fallbacks", fallbacks);
}

TEST(UpdateCoefficient, PureSlabLimitIsRidge) {
  std::mt19937_64 rng(3);
  auto s = random_scenario(rng, 3, 1, 1);
  for (std::size_t t = 0; t <= 3; ++t) {
    s.lp.gammas[t].setOnes();
    s.lp.thetas[t].setOnes();
  }
  const auto aug = build_augmented(s.m, s.panel, 0);
  const std::size_t t = 2;
  const double s2 = s.vol.sigma2(0, 1);
  const double w = (s.m.means[t](0) * s.m.means[t](0) + s.m.covs[t](0, 0)) / s2;
  const double z = s.panel.values(0, 1) * s.m.means[t](0) / s2;
  const double l1 = kPaper.lambda1, ph = kPaper.phi1;
  const double expected = (z + ph * s.lp.betas[1](0, 0) / l1 + ph * s.lp.betas[3](0, 0) / l1) / (w + 1 / l1 + ph * ph / l1);
  EXPECT_NEAR(update_coefficient(0, 0, t, s.lp, aug, s.vol, kPaper), expected, 1e-12);
}

TEST(UpdateCoefficient, LastPeriodDropsProspectiveTerms) {
  std::mt19937_64 rng(4);
  auto s = random_scenario(rng, 3, 1, 1);
  const auto aug = build_augmented(s.m, s.panel, 0);
  const auto terms = coordinate_terms(0, 0, 3, s.lp, ColumnPrior::factor(kPaper), 1.0, 0.5);
  EXPECT_FALSE(terms.has_next);
  EXPECT_EQ(terms.coupling(), 0.0);
  const double ref = oracle::coordinate_minimizer(s.lp, s.m, s.panel.values, s.vol.sigma2, kPaper, 0, 0, 3);
  EXPECT_NEAR(update_coefficient(0, 0, 3, s.lp, aug, s.vol, kPaper), ref, 1e-6);
}

TEST(UpdateCoefficient, RejectsInitialIndex) {
  std::mt19937_64 rng(5);
  auto s = random_scenario(rng, 2, 1, 1);
  const auto aug = build_augmented(s.m, s.panel, 0);
  EXPECT_THROW(update_coefficient(0, 0, 0, s.lp, aug, s.vol, kPaper), DimensionError);
}

TEST(UpdateCoefficient, MajorizedStepNeverIncreasesObjective) {
  // Strong negative coupling with a tiny fit weight makes the coordinate
  // objective concave.
  CoordinateTerms terms;
  terms.prior = ColumnPrior::factor(kPaper);
  terms.w_fit = 0.001;
  terms.z_fit = 0.02;
  terms.gamma = 0.0;
  terms.prev_mean = 0.3;
  terms.has_next = true;
  terms.gamma_next = 0.0;
  terms.theta_next = 1.0;
  terms.beta_next = 0.2;
  for (double cur : {-2.0, -0.1, 0.0, 0.4, 3.0}) {
    terms.current = cur;
    ASSERT_LE(terms.reduce().quad, 0.0);
    const auto upd = solve_coordinate(terms);
    EXPECT_TRUE(upd.majorized);
    EXPECT_LE(terms.objective(upd.value), terms.objective(cur) + 1e-12);
  }
}

TEST(UpdateInitial, Examples) {
  auto lp = LoadingsPath::zeros(1, 1, 1);
  lp.betas[1](0, 0) = 0.5;
  lp.gammas[0](0, 0) = 1.0;
  lp.gammas[1](0, 0) = 1.0;
  EXPECT_NEAR(update_initial(0, 0, lp, kPaper), 0.49, 1e-12);

  lp.gammas[0](0, 0) = 0.0;
  lp.gammas[1](0, 0) = 0.3;
  EXPECT_EQ(update_initial(0, 0, lp, kPaper), 0.0);

  lp.gammas[1](0, 0) = 0.0;
  const auto upd = update_initial_detail(0, 0, lp, ColumnPrior::factor(kPaper));
  EXPECT_TRUE(upd.zero_denominator);
  EXPECT_EQ(upd.value, 0.0);
}

TEST(UpdateInitial, MatchesGoldenSectionOracle) {
  auto lp = LoadingsPath::zeros(1, 1, 1);
  lp.betas[1](0, 0) = 2.0;
  lp.gammas[0](0, 0) = 0.5;
  lp.gammas[1](0, 0) = 0.5;
  SmoothedMoments m;
  m.means = {Vector::Zero(1), Vector::Zero(1)};
  m.covs = {Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  m.lag_covs = {Matrix::Zero(1, 1)};
  const double ref = oracle::coordinate_minimizer(lp, m, Matrix::Zero(1, 1), Matrix::Ones(1, 1), kPaper, 0, 0, 0);
  EXPECT_NEAR(update_initial(0, 0, lp, kPaper), ref, 1e-6);
  EXPECT_GT(ref, 0.0);
}

TEST(SweepLoadings, ZeroDataZeroStartIsFixedPoint) {
  std::mt19937_64 rng(6);
  auto lp = LoadingsPath::zeros(5, 3, 2);
  update_indicators(lp, kPaper);
  const auto m = random_moments(5, 2, rng);
  Panel panel;
  panel.values = Matrix::Zero(3, 5);
  const auto out = sweep_loadings(lp, m, panel, VolatilityPath::constant(3, 5, 1.0), kPaper);
  for (const auto& b : out.betas) EXPECT_EQ(b, Matrix::Zero(3, 2));
}

TEST(SweepLoadings, SurrogateDoesNotDecrease) {
  std::mt19937_64 rng(7);
  const ModelConfig cfg;
  for (int rep = 0; rep < 20; ++rep) {
    auto s = random_scenario(rng, 5, 3, 2);
    update_indicators(s.lp, kPaper);
    const auto priors = column_priors(cfg, 2, false);
    const double before = eval_surrogate(s.lp, s.m, s.panel.values, s.vol.sigma2, priors);
    SweepStats stats;
    const auto out = sweep_loadings(s.lp, s.m, s.panel.values, s.vol.sigma2, priors, &stats, true);
    const double after = eval_surrogate(out, s.m, s.panel.values, s.vol.sigma2, priors);
    EXPECT_GE(after, before - 1e-8) << "rep " << rep;
    EXPECT_LE(stats.residual_drift, 1e-9);
  }
}

TEST(SweepLoadings, Deterministic) {
  std::mt19937_64 rng(8);
  auto s = random_scenario(rng, 4, 3, 2);
  update_indicators(s.lp, kPaper);
  const auto a = sweep_loadings(s.lp, s.m, s.panel, s.vol, kPaper);
  const auto b = sweep_loadings(s.lp, s.m, s.panel, s.vol, kPaper);
  for (std::size_t t = 0; t <= 4; ++t) EXPECT_EQ(a.betas[t], b.betas[t]);
}

TEST(SweepLoadings, SingleCoordinateOptimality) {
  std::mt19937_64 rng(9);
  const ModelConfig cfg;
  const auto priors = column_priors(cfg, 2, false);
  int checked = 0;
  for (int rep = 0; rep < 50; ++rep) {
    auto s = random_scenario(rng, 4, 2, 2);
    update_indicators(s.lp, kPaper);
    const std::size_t j = rep % 2, c = (rep / 2) % 2, t = 1 + rep % 4;
    const auto aug = build_augmented(s.m, s.panel, j);
    const auto upd = update_coefficient_detail(j, c, t, s.lp, aug, s.vol, priors[c]);
    LoadingsPath q = s.lp;
    auto f = [&](double b) {
      q.betas[t](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = b;
      return eval_surrogate(q, s.m, s.panel.values, s.vol.sigma2, priors);
    };
    const double at = f(upd.value);
    EXPECT_LE(f(upd.value + 1e-4), at + 1e-8);
    EXPECT_LE(f(upd.value - 1e-4), at + 1e-8);
    ++checked;
  }
  EXPECT_EQ(checked, 50);
}

TEST(UpdateIndicators, UsesLaggedCoefficientForWeights) {
  auto lp = LoadingsPath::zeros(2, 1, 1);
  lp.betas[0](0, 0) = 1.5;
  lp.betas[1](0, 0) = 0.2;
  lp.betas[2](0, 0) = -0.4;
  update_indicators(lp, kPaper);
  EXPECT_EQ(lp.thetas[1](0, 0), mixing_weight(1.5, kPaper));
  EXPECT_EQ(lp.thetas[2](0, 0), mixing_weight(0.2, kPaper));
  EXPECT_EQ(lp.gammas[2](0, 0), indicator_expectation(-0.4, 0.2, kPaper));
  EXPECT_EQ(lp.gammas[0](0, 0), initial_indicator_expectation(1.5, kPaper));
}
