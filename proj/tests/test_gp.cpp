#include <cmath>

#include <gtest/gtest.h>

#include "biasprobe/learners.hpp"
#include "biasprobe/synth2d.hpp"

using namespace biasprobe;

namespace {

std::unique_ptr<GpModel> fixed_gp(const QuadrantTable& t, double lengthscale) {
  GpVariant v;
  v.lengthscale = lengthscale;
  return train_gp(t, v, 0);
}

QuadrantTable two_point() {
  QuadrantTable t(2);
  t.add({-1, 0}, false, false);
  t.add({1, 0}, true, false);
  return t;
}

}  // namespace

TEST(GpTrain, SymmetricTwoPointMidpoint) {
  const auto m = fixed_gp(two_point(), 1.0);
  const std::vector<FeatureRow> mid{{0, 0}};
  EXPECT_NEAR(m->predict_proba(mid)[0], 0.5, 1e-6);
  EXPECT_EQ(m->predict(mid)[0], 1);
  EXPECT_EQ(m->predict(std::vector<FeatureRow>{{-0.5, 0}})[0], 0);
  EXPECT_TRUE(m->predict(std::vector<FeatureRow>{}).empty());
}

TEST(GpTrain, SmallLengthscaleReproducesTrainingLabels) {
  Stream rng(5);
  QuadrantTable t(2);
  for (int i = 0; i < 30; ++i) {
    const bool label = i % 2 == 0 ? true : rng.uniform() < 0.5;
    t.add({static_cast<double>(i % 6), static_cast<double>(i / 6)}, label, false);
  }
  const auto m = fixed_gp(t, 0.05);
  const auto pred = m->predict(t.features());
  const auto latent = m->latent(t.features());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(pred[i], t[i].y ? 1 : 0);
    EXPECT_EQ(latent.mean[static_cast<Eigen::Index>(i)] > 0, t[i].y);
  }
}

TEST(GpLaplace, NewtonResidualAtConvergence) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto t = synth_condition({0.5, 0.0, 200, 40 + s});
    const auto d = gp::table_data(t);
    for (double l : {0.5, 2.0, 8.0}) {
      const auto fit = gp::laplace_mode(gp::rbf_gram(d.x, d.x, {l, 1.0}), d.t);
      EXPECT_TRUE(fit.converged);
      EXPECT_LE(fit.residual, 1e-8);
    }
  }
}

TEST(GpKernel, GramMatricesFactoriseWithJitter) {
  Stream rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(40));
    Eigen::MatrixXd x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i > 0 && rng.uniform() < 0.2) {
        x.row(i) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i))));  // duplicate
      } else {
        x(i, 0) = rng.uniform(-5, 5);
        x(i, 1) = rng.uniform(-5, 5);
      }
    }
    const double l = std::exp(rng.uniform(std::log(0.1), std::log(20.0)));
    const auto K = gp::rbf_gram(x, x, {l, 1.0});
    EXPECT_NO_THROW(gp::cholesky_with_jitter(K)) << trial;
    EXPECT_LE((K - K.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_NEAR(K.diagonal().minCoeff(), 1.0, 1e-12);
  }
}

TEST(GpTrain, SizeCap) {
  const auto t = synth_condition({0.5, 0.0, 2002, 1});
  EXPECT_THROW(train(parse_learner("GP:1.0"), t, 0), SizeCapExceeded);
  GpVariant v;
  v.lengthscale = 1.0;
  v.size_cap = 10;
  EXPECT_THROW(train_gp(synth_condition({0.5, 0.0, 12, 1}), v, 0), SizeCapExceeded);
}

TEST(GpTrain, LabelFlipEquivariance) {
  const auto probe = grid_points(-7, 7, 31);
  for (double l : {0.5, 8.0}) {
    const auto t = synth_condition({0.5, 0.0, 300, 8});
    QuadrantTable flipped(2);
    for (const auto& r : t.rows()) flipped.add(r.x, !r.z_disc, r.z_dist);
    const auto a = fixed_gp(t, l);
    const auto b = fixed_gp(flipped, l);
    const auto pa = a->predict(probe);
    const auto pb = b->predict(probe);
    const auto la = a->latent(probe);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (std::abs(la.mean[static_cast<Eigen::Index>(i)]) < 1e-9) continue;  // tie region
      EXPECT_EQ(pa[i], 1 - pb[i]) << l;
    }
  }
}

TEST(GpTrain, FittedLengthscaleInSearchRange) {
  const auto m = train(parse_learner("GP:fit"), synth_condition({1.0, 0.0, 200, 3}), 0);
  const auto d = m->diagnostics();
  ASSERT_TRUE(d.fitted_lengthscale.has_value());
  EXPECT_GE(*d.fitted_lengthscale, 0.1);
  EXPECT_LE(*d.fitted_lengthscale, 20.0);
  EXPECT_EQ(m->name(), "GP:fit");
}

TEST(GpTrain, DimensionChecked) {
  const auto m = fixed_gp(two_point(), 1.0);
  EXPECT_THROW(m->predict(std::vector<FeatureRow>{{1.0}}), DimensionMismatch);
}
