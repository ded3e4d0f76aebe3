#include <gtest/gtest.h>

#include "jjtls/correlate.hpp"
#include "morphology_fixture.hpp"

namespace jjtls {
namespace {

Eigen::MatrixXd reference_matrix() {
  Eigen::MatrixXd X(12, 6);
  X << 0.0012, 0.2999, -0.2741, -0.8906, -0.9, -0.9916, 0.0601, 1.4003, -0.4922, -0.6205, 0.17955,
      0.3569, 0.1054, -0.8251, -0.0293, 0.6953, -0.99655, -0.4576, -1.9012, -3.1907, -1.8417,
      -0.2351, -1.38495, 0.2713, 0.1568, -0.0301, -2.5168, -0.5387, -0.31785, 0.1133, -1.5301,
      -2.0079, -0.9785, -0.8088, 0.6565, -0.8075, -0.0325, 0.8519, -0.5836, -0.1117, 0.05465,
      0.0638, -1.2251, -1.149, 1.3588, -1.5471, 0.08585, 0.1194, -0.6415, 1.3589, 0.7623, -1.1993,
      -0.52515, 0.5767, -0.1888, 0.4941, -0.0665, 0.6672, 1.7721, -0.6757, 0.2031, -0.2602, 0.1273,
      -1.1872, -1.1729, -0.1962, 0.8988, 2.044, -1.3235, -0.7946, 0.2496, -1.9924;
  return X;
}

TEST(WardLinkage, MatchesReferenceDendrogram) {
  // reference: scipy.cluster.hierarchy.linkage(method="ward") on 1 - |spearman|
  const auto X = reference_matrix();
  const Eigen::MatrixXd d = 1.0 - spearman_matrix(X).array().abs();
  const auto m = ward_linkage(d);
  const double ref[5][4] = {{0, 1, 0.4895104895104895, 2}, {2, 3, 0.5594405594405594, 2},
                            {4, 5, 0.6993006993006993, 2}, {6, 8, 0.9781964559937109, 4},
                            {7, 9, 1.2086713502496882, 6}};
  ASSERT_EQ(m.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(m[i].a, ref[i][0]);
    EXPECT_EQ(m[i].b, ref[i][1]);
    EXPECT_NEAR(m[i].height, ref[i][2], 1e-12);
    EXPECT_EQ(m[i].size, ref[i][3]);
  }
}

TEST(CutTree, ThresholdSemantics) {
  const auto X = reference_matrix();
  const Eigen::MatrixXd d = 1.0 - spearman_matrix(X).array().abs();
  const auto m = ward_linkage(d);
  const auto none = cut_tree(m, 6, 0.0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(none[i], i);
  const auto all = cut_tree(m, 6, 10.0);
  for (auto l : all) EXPECT_EQ(l, 0u);
  // merges at exactly the threshold are not joined
  const auto at = cut_tree(m, 6, m[0].height);
  EXPECT_NE(at[0], at[1]);
  const auto above = cut_tree(m, 6, m[0].height + 1e-9);
  EXPECT_EQ(above[0], above[1]);
}

TEST(ClusterFeatures, DuplicateColumnsShareACluster) {
  auto f = testing::make_morphology(1);
  Eigen::MatrixXd X(f.features.rows(), 3);
  X.col(0) = f.features.col(0);
  X.col(1) = f.features.col(0);
  X.col(2) = f.features.col(5);
  const Eigen::MatrixXd d = 1.0 - spearman_matrix(X).array().abs();
  const auto m = ward_linkage(d);
  for (double t : {1e-12, 0.1, 0.5, 2.0}) {
    const auto l = cut_tree(m, 3, t);
    EXPECT_EQ(l[0], l[1]) << t;
  }
}

TEST(ClusterFeatures, RecoversTwoLatentFactors) {
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> u(0, 1);
    const int n = 20;
    Eigen::MatrixXd X(n, 10);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      const double a = u(rng), b = u(rng);
      for (int c = 0; c < 5; ++c) X(i, c) = a + 0.1 * u(rng);
      for (int c = 5; c < 10; ++c) X(i, c) = b + 0.1 * u(rng);
      y(i) = a + 0.5 * b + 0.3 * u(rng);
    }
    const auto sel = cluster_features(X, y);
    bool ok = sel.clusters.size() == 2;
    if (ok)
      for (const auto& c : sel.clusters) {
        const bool first = c.members.front() < 5;
        for (auto mbr : c.members) ok = ok && ((mbr < 5) == first);
      }
    exact += ok;
  }
  EXPECT_GE(exact, 90);
}

TEST(ClusterFeatures, ColumnOrderDoesNotMatter) {
  const auto f = testing::make_morphology(3);
  const std::vector<std::size_t> perm{5, 2, 7, 0, 3, 1, 6, 4};
  const auto Xp = select_columns(f.features, perm);
  const auto a = cluster_features(f.features, f.density);
  const auto b = cluster_features(Xp, f.density);
  EXPECT_NEAR(a.loocv_r2, b.loocv_r2, 1e-12);
  EXPECT_NEAR(a.threshold, b.threshold, 1e-12);
  auto groups = [](const ClusterSelection& s, const std::vector<std::size_t>& map) {
    std::vector<std::vector<std::size_t>> g;
    for (const auto& c : s.clusters) {
      std::vector<std::size_t> m;
      for (auto i : c.members) m.push_back(map[i]);
      std::sort(m.begin(), m.end());
      g.push_back(m);
    }
    std::sort(g.begin(), g.end());
    return g;
  };
  std::vector<std::size_t> id{0, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(groups(a, id), groups(b, perm));
}

TEST(ClusterFeatures, Errors) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 4);
  Eigen::VectorXd y = Eigen::VectorXd::Random(3);
  EXPECT_THROW(cluster_features(X, y), ValidationError);
  Eigen::MatrixXd one = Eigen::MatrixXd::Random(6, 1);
  EXPECT_THROW(cluster_features(one, Eigen::VectorXd::Random(6)), ValidationError);
}

TEST(Ridge, ClosedFormAgainstNormalEquations) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(10, 3);
  Eigen::VectorXd y = Eigen::VectorXd::Random(10);
  const auto m = ridge_fit(X, y, 0.7);
  // brute-force: minimise |yc - Z b|^2 + a |b|^2 by gradient condition
  const Eigen::MatrixXd Z =
      (X.rowwise() - m.center.transpose()).array().rowwise() / m.scale.transpose().array();
  const Eigen::VectorXd grad = Z.transpose() * (Z * m.coef - (y.array() - y.mean()).matrix()) + 0.7 * m.coef;
  EXPECT_LT(grad.norm(), 1e-12);
  EXPECT_THROW(ridge_fit(X, y, 0.0), ValidationError);
}

TEST(Ridge, LoocvMatchesHatMatrixShortcutForFixedScaling) {
  // with the fold standardisation removed (features already standard on the
  // full set) the fold solutions differ; check the PRESS residual directly
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(8, 2);
  Eigen::VectorXd y = X.col(0) * 2.0 + 0.1 * Eigen::VectorXd::Random(8);
  const double r2 = loocv_r2(X, y, 1e-3);
  double press = 0;
  for (int i = 0; i < 8; ++i) {
    Eigen::MatrixXd Xt(7, 2);
    Eigen::VectorXd yt(7);
    for (int r = 0, k = 0; r < 8; ++r)
      if (r != i) {
        Xt.row(k) = X.row(r);
        yt(k++) = y(r);
      }
    // unpenalised least squares on the training fold
    Eigen::MatrixXd A(7, 3);
    A << Eigen::VectorXd::Ones(7), Xt;
    const Eigen::VectorXd beta = A.colPivHouseholderQr().solve(yt);
    const double pred = beta(0) + X.row(i).dot(beta.tail(2));
    press += (y(i) - pred) * (y(i) - pred);
  }
  const double ref = 1 - press / (y.array() - y.mean()).square().sum();
  EXPECT_NEAR(r2, ref, 1e-3);
}

TEST(PermutationImportance, TargetFeatureDominates) {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> u(0, 1);
    Eigen::MatrixXd X(15, 4);
    for (int i = 0; i < 15; ++i)
      for (int j = 0; j < 4; ++j) X(i, j) = u(rng);
    const Eigen::VectorXd y = X.col(1);
    const auto imp = ridge_permutation_importance(X, y, 1e-6, 20, seed);
    bool best = true;
    for (int j = 0; j < 4; ++j)
      if (j != 1) best = best && imp[1].mean > imp[j].mean;
    wins += best;
  }
  EXPECT_GT(wins, 50);
}

TEST(PermutationImportance, NullFeatureNearZero) {
  const auto f = testing::make_morphology(11, 24);
  const auto imp = ridge_permutation_importance(f.features, f.density, 1.0, 100, 5);
  // junction thickness mean carries no signal
  EXPECT_LT(std::abs(imp[5].mean), 2 * imp[5].std + 1e-12);
}

TEST(PermutationImportance, ShrinkageLimit) {
  const auto f = testing::make_morphology(12);
  const auto imp = ridge_permutation_importance(f.features, f.density, 1e12, 10, 1);
  for (const auto& i : imp) EXPECT_NEAR(i.mean, 0.0, 1e-6);
  const auto m = ridge_fit(f.features, f.density, 1e12);
  EXPECT_LT(m.coef.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PermutationImportance, DeterministicForFixedSeed) {
  const auto f = testing::make_morphology(13);
  const auto a = ridge_permutation_importance(f.features, f.density, 0.5, 30, 9);
  const auto b = ridge_permutation_importance(f.features, f.density, 0.5, 30, 9);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].mean, b[j].mean);
    EXPECT_EQ(a[j].std, b[j].std);
  }
}

TEST(AnalyzeFeatures, GrainWidthClusterRankedFirst) {
  const auto f = testing::make_morphology(21);
  const auto rep = analyze_features(f.features, f.density, 100, 21);
  EXPECT_TRUE(testing::grain_size_ranked_first(rep));
  EXPECT_EQ(rep.importances.size(), rep.selection.clusters.size());
  for (const auto& imp : rep.importances) {
    bool is_rep = false;
    for (const auto& c : rep.selection.clusters) is_rep = is_rep || c.representative == imp.feature;
    EXPECT_TRUE(is_rep);
  }
}

}  // namespace
}  // namespace jjtls
