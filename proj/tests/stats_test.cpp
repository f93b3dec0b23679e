// Copyright 2026 The oodens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "oodens/stats.hpp"

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oodens/errors.hpp"
#include "oodens/fixture.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace oodens {
namespace {

ModelHead Head(Eigen::MatrixXd w, Eigen::VectorXd b) {
  ModelHead h;
  h.weight = std::move(w);
  h.bias = std::move(b);
  h.penultimate_layer = "penultimate";
  return h;
}

TEST(FitClassGaussians, ZeroScatterGivesScaledIdentityPrecision) {
  Eigen::MatrixXd x{{0, 0}, {2, 0}};
  const std::vector<int> y = {0, 1};
  const auto s = FitClassGaussians(x, y, 2, 1e-6);
  EXPECT_EQ(s.class_means.row(0), Eigen::RowVector2d(0, 0));
  EXPECT_EQ(s.class_means.row(1), Eigen::RowVector2d(2, 0));
  // trace(Sigma) = 0, so lambda = lambda_scale.
  EXPECT_DOUBLE_EQ(s.regularization, 1e-6);
  EXPECT_TRUE(s.shared_precision.isApprox(Eigen::Matrix2d::Identity() / 1e-6, 1e-12));
}

TEST(FitClassGaussians, OneDimensionalAnalytic) {
  Eigen::MatrixXd x(2, 1);
  x << -1, 1;
  const std::vector<int> y = {0, 0};
  const auto s = FitClassGaussians(x, y, 1, 1e-6);
  EXPECT_DOUBLE_EQ(s.class_means(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.regularization, 1e-6);  // trace 1, D 1
  EXPECT_NEAR(s.shared_precision(0, 0), 1.0 / (1.0 + 1e-6), 1e-15);
}

TEST(FitClassGaussians, MatchesGaussEliminationInverse) {
  std::mt19937_64 rng(11);
  const int n = 500, d = 6, c = 4;
  Eigen::MatrixXd x = oracle::RandomMatrix(rng, n, d);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % c;
    x.row(i).array() += 0.7 * y[i];
  }
  const auto s = FitClassGaussians(x, y, c, 1e-6, "L");
  EXPECT_EQ(s.layer_name, "L");

  // Oracle: explicit class means, scatter, lambda, and Gauss-Jordan inverse.
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(c, d);
  std::vector<int> cnt(c, 0);
  for (int i = 0; i < n; ++i) {
    means.row(y[i]) += x.row(i);
    ++cnt[y[i]];
  }
  for (int k = 0; k < c; ++k) means.row(k) /= cnt[k];
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd r = (x.row(i) - means.row(y[i])).transpose();
    cov += r * r.transpose();
  }
  cov /= n;
  const double lambda = 1e-6 * cov.trace() / d;
  cov.diagonal().array() += lambda;
  const Eigen::MatrixXd inv = oracle::GaussInverse(cov);

  EXPECT_LT((s.class_means - means).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(s.regularization, lambda, 1e-18);
  EXPECT_LT((s.shared_precision - inv).cwiseAbs().maxCoeff(), 1e-8);
  // Symmetric and positive definite.
  EXPECT_LE((s.shared_precision - s.shared_precision.transpose()).cwiseAbs().maxCoeff(),
            1e-9 * s.shared_precision.cwiseAbs().maxCoeff());
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(s.shared_precision).info(), Eigen::Success);
}

TEST(FitClassGaussians, PermutationInvariant) {
  std::mt19937_64 rng(3);
  const int n = 120, d = 4;
  Eigen::MatrixXd x = oracle::RandomMatrix(rng, n, d);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % 3;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd xp(n, d);
  std::vector<int> yp(n);
  for (int i = 0; i < n; ++i) {
    xp.row(i) = x.row(perm[i]);
    yp[i] = y[perm[i]];
  }
  const auto a = FitClassGaussians(x, y, 3, 1e-6);
  const auto b = FitClassGaussians(xp, yp, 3, 1e-6);
  EXPECT_LT((a.class_means - b.class_means).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.shared_precision - b.shared_precision).cwiseAbs().maxCoeff(),
            1e-10 * a.shared_precision.cwiseAbs().maxCoeff());
}

TEST(FitClassGaussians, EmptyClassIsFitErrorNamingClass) {
  Eigen::MatrixXd x{{0.0}, {1.0}};
  const std::vector<int> y = {0, 2};
  try {
    FitClassGaussians(x, y, 3, 1e-6);
    FAIL() << "expected FitError";
  } catch (const FitError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(FitClassGaussians, HandlesFewerSamplesThanDimensions) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd x = oracle::RandomMatrix(rng, 3, 10);
  const std::vector<int> y = {0, 1, 0};
  const auto s = FitClassGaussians(x, y, 2, 1e-6);
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(s.shared_precision).info(), Eigen::Success);
}

TEST(FitVimSubspace, ZeroBiasGivesZeroOffset) {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd x = oracle::RandomMatrix(rng, 200, 6).array() + 2.0;
  const ModelHead h = Head(Eigen::MatrixXd::Constant(3, 6, 0.5) + oracle::RandomMatrix(rng, 3, 6, 0.1),
                           Eigen::VectorXd::Zero(3));
  const VimStats v = FitVimSubspace(x, h, 2);
  EXPECT_LT(v.offset.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_GT(v.alpha, 0.0);
}

TEST(FitVimSubspace, OffsetIsMinimumNormSolution) {
  std::mt19937_64 rng(2);
  const ModelHead h = Head(oracle::RandomMatrix(rng, 3, 6).cwiseAbs(), oracle::RandomVector(rng, 3));
  const Eigen::MatrixXd x = oracle::RandomMatrix(rng, 100, 6).array() + 3.0;
  const VimStats v = FitVimSubspace(x, h, 2);
  // W u = -b exactly (W has full row rank), and u lies in the row space of W.
  EXPECT_LT((h.weight * v.offset + h.bias).norm(), 1e-12);
  const Eigen::MatrixXd proj = h.weight.transpose() * oracle::GaussInverse(h.weight * h.weight.transpose()) * h.weight;
  EXPECT_LT((proj * v.offset - v.offset).norm(), 1e-12);
}

TEST(FitVimSubspace, FeaturesInPlaneAreRejected) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd coeff = oracle::RandomMatrix(rng, 300, 2);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(2, 5);
  basis(0, 0) = 1;
  basis(1, 1) = 1;
  const Eigen::MatrixXd x = coeff * basis;
  const ModelHead h = Head(oracle::RandomMatrix(rng, 3, 5), Eigen::VectorXd::Zero(3));
  EXPECT_THROW(FitVimSubspace(x, h, 2), FitError);
}

TEST(FitVimSubspace, RankBelowPrincipalDimIsFitError) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd coeff = oracle::RandomMatrix(rng, 300, 2);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(2, 6);
  basis(0, 0) = 1;
  basis(1, 1) = 1;
  const ModelHead h = Head(oracle::RandomMatrix(rng, 3, 6), Eigen::VectorXd::Zero(3));
  try {
    FitVimSubspace(coeff * basis, h, 3);
    FAIL() << "expected FitError";
  } catch (const FitError& e) {
    EXPECT_NE(std::string(e.what()).find("rank 2"), std::string::npos) << e.what();
  }
}

TEST(FitVimSubspace, MatchesJacobiEigenOracle) {
  std::mt19937_64 rng(8);
  const int n = 1000, d = 8, dp = 3;
  // Anisotropic features so the top subspace is well separated.
  Eigen::MatrixXd x = oracle::RandomMatrix(rng, n, d);
  for (int j = 0; j < d; ++j) x.col(j) *= 1.0 + 0.6 * (d - j);
  x = x * oracle::RandomMatrix(rng, d, d, 0.4) + Eigen::MatrixXd::Constant(n, d, 1.0);
  x.array() += 0.5;
  const ModelHead h = Head(oracle::RandomMatrix(rng, 4, d, 0.3).array() + 0.2, oracle::RandomVector(rng, 4, 0.1));
  const VimStats v = FitVimSubspace(x, h, dp);

  const Eigen::MatrixXd shifted = x.rowwise() - v.offset.transpose();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < n; ++i) m += shifted.row(i).transpose() * shifted.row(i);
  m /= n;
  const auto [vals, vecs] = oracle::JacobiEigen(m);
  const Eigen::MatrixXd ref = vecs.leftCols(dp);
  EXPECT_LT(oracle::MaxPrincipalAngle(ref, v.principal_basis), 1e-6);
  EXPECT_LT((v.principal_basis.transpose() * v.principal_basis - Eigen::MatrixXd::Identity(dp, dp)).cwiseAbs().maxCoeff(),
            1e-8);

  // alpha = mean max-logit / mean residual norm.
  double ml = 0, rn = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd f = x.row(i).transpose();
    ml += (h.weight * f + h.bias).maxCoeff();
    const Eigen::VectorXd z = f - v.offset;
    rn += (z - ref * (ref.transpose() * z)).norm();
  }
  EXPECT_NEAR(v.alpha, (ml / n) / (rn / n), 1e-9 * v.alpha);
}

TEST(FitDiceMasks, FullKeepIsAllTrue) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd x = oracle::RandomMatrix(rng, 50, 7);
  const DiceMask m = FitDiceMasks(x, Head(oracle::RandomMatrix(rng, 3, 7), Eigen::VectorXd::Zero(3)), 1.0);
  EXPECT_EQ(m.mask.cast<int>().sum(), 21);
}

TEST(FitDiceMasks, AnalyticHalfKeep) {
  // mean feature = 1 everywhere, so contributions equal the weights.
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 4);
  const Eigen::MatrixXd w{{3, 1, 2, 0}};
  const DiceMask m = FitDiceMasks(x, Head(w, Eigen::VectorXd::Zero(1)), 0.5);
  EXPECT_EQ(m.mask(0, 0), 1);
  EXPECT_EQ(m.mask(0, 1), 0);
  EXPECT_EQ(m.mask(0, 2), 1);
  EXPECT_EQ(m.mask(0, 3), 0);
}

TEST(FitDiceMasks, TiesGoToLowerIndex) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 4);
  const Eigen::MatrixXd w{{1, 1, 1, 1}};
  const DiceMask m = FitDiceMasks(x, Head(w, Eigen::VectorXd::Zero(1)), 0.5);
  EXPECT_EQ(m.mask(0, 0), 1);
  EXPECT_EQ(m.mask(0, 1), 1);
  EXPECT_EQ(m.mask(0, 2), 0);
}

TEST(FitDiceMasks, MatchesFullSortOracle) {
  std::mt19937_64 rng(21);
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const int d = 10;
    const Eigen::MatrixXd x = oracle::RandomMatrix(rng, 80, d).array() + 0.5;
    const ModelHead h = Head(oracle::RandomMatrix(rng, 5, d), Eigen::VectorXd::Zero(5));
    const DiceMask m = FitDiceMasks(x, h, p);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::MatrixXd contrib(5, d);
    for (int c = 0; c < 5; ++c)
      for (int j = 0; j < d; ++j) contrib(c, j) = h.weight(c, j) * mean[j];
    const int keep = static_cast<int>(std::llround(std::ceil(p * d - 1e-9)));
    const auto ref = oracle::DiceMask(contrib, keep);
    for (int c = 0; c < 5; ++c) {
      EXPECT_EQ(m.mask.row(c).cast<int>().sum(), keep) << "p=" << p;
      for (int j = 0; j < d; ++j) EXPECT_EQ(m.mask(c, j) == 1, ref[c][j]) << "p=" << p;
    }
  }
}

TEST(DiceKeepCount, CeilWithRepresentationSlack) {
  EXPECT_EQ(DiceKeepCount(0.7, 10), 7);
  EXPECT_EQ(DiceKeepCount(0.71, 10), 8);
  EXPECT_EQ(DiceKeepCount(0.5, 4), 2);
  EXPECT_EQ(DiceKeepCount(1.0, 9), 9);
  EXPECT_EQ(DiceKeepCount(1e-9, 9), 1);
}

TEST(FitReactThreshold, AnalyticPercentiles) {
  Eigen::MatrixXd x{{0, 1}, {2, 3}};
  EXPECT_DOUBLE_EQ(FitReactThreshold(x, 50).clip_value, 1.5);
  EXPECT_DOUBLE_EQ(FitReactThreshold(x, 100).clip_value, 3.0);
  EXPECT_THROW(FitReactThreshold(Eigen::MatrixXd(0, 3), 90), FitError);
  EXPECT_THROW(FitReactThreshold(x, 0), FitError);
}

TEST(FitReactThreshold, MatchesSortOracle) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd x = oracle::RandomMatrix(rng, 1000, 10);
  const std::vector<double> flat(x.data(), x.data() + x.size());
  for (double q : {90.0, 12.5, 99.9, 100.0}) {
    EXPECT_DOUBLE_EQ(FitReactThreshold(x, q).clip_value, oracle::Percentile(flat, q)) << q;
  }
}

TEST(FitStats, FixtureSaveLoadIsBitExact) {
  const auto root = testutil::ScratchDir();
  FixtureOptions fo;
  fo.train = 400;
  fo.validation = 50;
  fo.test = 50;
  fo.ood = 20;
  WriteSyntheticFixture(root / "data", fo);
  const DatasetBundle train = LoadDataset(root / "data", "id_train");
  const ModelHead head = LoadModelHead(root / "data");
  StatsOptions opt;
  opt.seed = 42;
  const FittedStats s = FitStats(train, head, opt, 2);
  ASSERT_EQ(s.layers.size(), 2u);
  EXPECT_EQ(s.layers[0].layer_name, "block1");
  EXPECT_EQ(s.layers[1].layer_name, "penultimate");
  EXPECT_EQ(s.options.vim_dim, 4);  // min(512, 8 / 2)
  EXPECT_EQ(s.sample_count, 400u);
  for (Eigen::Index c = 0; c < s.dice.mask.rows(); ++c) EXPECT_EQ(s.dice.mask.row(c).cast<int>().sum(), 6);  // ceil(0.7*8)

  SaveStats(root / "stats", s);
  const FittedStats back = LoadStats(root / "stats");
  ASSERT_EQ(back.layers.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(back.layers[l].layer_name, s.layers[l].layer_name);
    EXPECT_EQ(back.layers[l].class_means, s.layers[l].class_means);
    EXPECT_EQ(back.layers[l].shared_precision, s.layers[l].shared_precision);
    EXPECT_EQ(back.layers[l].regularization, s.layers[l].regularization);
  }
  EXPECT_EQ(back.vim.offset, s.vim.offset);
  EXPECT_EQ(back.vim.principal_basis, s.vim.principal_basis);
  EXPECT_EQ(back.vim.alpha, s.vim.alpha);
  EXPECT_EQ(back.dice.mask, s.dice.mask);
  EXPECT_EQ(back.dice.keep_fraction, s.dice.keep_fraction);
  EXPECT_EQ(back.react.clip_value, s.react.clip_value);
  EXPECT_EQ(back.head.weight, s.head.weight);
  EXPECT_EQ(back.head.bias, s.head.bias);
  EXPECT_EQ(back.options.seed, 42u);
  EXPECT_EQ(back.sample_count, 400u);

  // Saving the reloaded stats reproduces every file byte for byte.
  SaveStats(root / "stats2", back);
  for (const auto& e : std::filesystem::directory_iterator(root / "stats")) {
    EXPECT_EQ(testutil::Slurp(e.path()), testutil::Slurp(root / "stats2" / e.path().filename()))
        << e.path().filename();
  }
}

TEST(FitStats, UnlabelledTrainingRecordIsDataError) {
  DatasetBundle b = testutil::Bundle("t", ShiftType::kInDistribution,
                                     {testutil::Record(0, -1, Eigen::Vector2d(1, 0))}, 2);
  EXPECT_THROW(FitStats(b, Head(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)), {}), DataError);
}

TEST(FittedStats, UnknownLayerIsCapabilityError) {
  FittedStats s;
  EXPECT_THROW(s.layer("nope"), CapabilityError);
}

}  // namespace
}  // namespace oodens
