#pragma once
// Morphology-to-density correlation: feature clustering on rank correlation,
// ridge regression scored by leave-one-out R^2, permutation importance.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "jjtls/stats.hpp"

namespace jjtls {

/// Agglomeration record; ids below the leaf count are features, id p+i is the
/// cluster created by merge i.
struct Merge {
  std::size_t a = 0, b = 0;
  double height = 0.0;
  std::size_t size = 0;
};

/// Ward linkage on a precomputed symmetric distance matrix, with the
/// Lance-Williams update. Ties merge the lowest-indexed pair first.
inline std::vector<Merge> ward_linkage(const Eigen::MatrixXd& dist) {
  const auto p = static_cast<std::size_t>(dist.rows());
  require(p >= 1 && dist.cols() == dist.rows(), "ward_linkage: distance matrix must be square");
  Eigen::MatrixXd d = dist;
  std::vector<std::size_t> id(p), size(p, 1);
  std::vector<bool> alive(p, true);
  for (std::size_t i = 0; i < p; ++i) id[i] = i;
  std::vector<Merge> merges;
  for (std::size_t step = 0; step + 1 < p; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < p; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < p; ++j)
        if (alive[j] && d(i, j) < best) {
          best = d(i, j);
          bi = i;
          bj = j;
        }
    }
    const double ni = static_cast<double>(size[bi]), nj = static_cast<double>(size[bj]);
    for (std::size_t k = 0; k < p; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double nk = static_cast<double>(size[k]);
      const double v = ((nk + ni) * d(k, bi) * d(k, bi) + (nk + nj) * d(k, bj) * d(k, bj) -
                        nk * best * best) / (ni + nj + nk);
      d(k, bi) = d(bi, k) = std::sqrt(std::max(0.0, v));
    }
    merges.push_back({std::min(id[bi], id[bj]), std::max(id[bi], id[bj]), best, size[bi] + size[bj]});
    alive[bj] = false;
    size[bi] += size[bj];
    id[bi] = p + step;
  }
  return merges;
}

/// Flat clusters joining every merge strictly below `threshold`. Labels are
/// numbered in order of each cluster's lowest feature index.
inline std::vector<std::size_t> cut_tree(const std::vector<Merge>& merges, std::size_t leaves,
                                         double threshold) {
  std::vector<std::size_t> parent(leaves + merges.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t m = 0; m < merges.size(); ++m) {
    const std::size_t node = leaves + m;
    if (merges[m].height < threshold) {
      parent[find(merges[m].a)] = node;
      parent[find(merges[m].b)] = node;
    }
  }
  std::vector<std::size_t> label(leaves), root_label(parent.size(), SIZE_MAX);
  std::size_t next = 0;
  for (std::size_t i = 0; i < leaves; ++i) {
    const auto r = find(i);
    if (root_label[r] == SIZE_MAX) root_label[r] = next++;
    label[i] = root_label[r];
  }
  return label;
}

inline Eigen::MatrixXd spearman_matrix(const Eigen::MatrixXd& X) {
  const auto p = X.cols();
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(p, p);
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) cols[j].assign(X.col(j).data(), X.col(j).data() + X.rows());
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j) r(i, j) = r(j, i) = spearman(cols[i], cols[j]).statistic;
  return r;
}

/// Ridge regression on internally standardised features; the intercept is not
/// penalised.
struct RidgeModel {
  Eigen::VectorXd center, scale, coef;
  double intercept = 0.0;

  double predict(const Eigen::RowVectorXd& x) const {
    return intercept + ((x.transpose() - center).cwiseQuotient(scale)).dot(coef);
  }
};

inline RidgeModel ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha) {
  require(alpha > 0 && std::isfinite(alpha), "ridge: alpha must be > 0");
  require(X.rows() == y.size() && X.rows() >= 2, "ridge: need matching rows, at least 2");
  RidgeModel m;
  const double n = static_cast<double>(X.rows());
  m.center = X.colwise().mean().transpose();
  m.scale.resize(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double s = std::sqrt((X.col(j).array() - m.center(j)).square().sum() / n);
    m.scale(j) = s > 0 ? s : 1.0;  // a constant column standardises to zeros
  }
  const Eigen::MatrixXd Z = (X.rowwise() - m.center.transpose()).array().rowwise() /
                            m.scale.transpose().array();
  m.intercept = y.mean();
  const Eigen::VectorXd yc = y.array() - m.intercept;
  const Eigen::MatrixXd lhs =
      Z.transpose() * Z + alpha * Eigen::MatrixXd::Identity(X.cols(), X.cols());
  m.coef = lhs.ldlt().solve(Z.transpose() * yc);
  return m;
}

/// Leave-one-out R^2: 1 - PRESS / total sum of squares. Each fold standardises
/// on its own training rows.
inline double loocv_r2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha) {
  const Eigen::Index n = X.rows();
  require(n >= 3, "loocv: need at least 3 observations");
  double press = 0.0;
  Eigen::MatrixXd Xt(n - 1, X.cols());
  Eigen::VectorXd yt(n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index r = 0, k = 0; r < n; ++r) {
      if (r == i) continue;
      Xt.row(k) = X.row(r);
      yt(k++) = y(r);
    }
    const double e = y(i) - ridge_fit(Xt, yt, alpha).predict(X.row(i));
    press += e * e;
  }
  const double ss = (y.array() - y.mean()).square().sum();
  if (!(ss > 0)) throw NumericalError("loocv: target has zero variance");
  return 1.0 - press / ss;
}

inline std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int e = -6; e <= 6; ++e) g.push_back(std::pow(10.0, 0.5 * e));
  return g;
}

struct AlphaChoice {
  double alpha = 1.0;
  double r2 = -std::numeric_limits<double>::infinity();
};

/// Best alpha on the grid by LOOCV R^2; ties keep the smaller alpha.
inline AlphaChoice select_alpha(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const std::vector<double>& grid = default_alpha_grid()) {
  require(!grid.empty(), "select_alpha: empty grid");
  AlphaChoice best;
  for (double a : grid) {
    const double r2 = loocv_r2(X, y, a);
    if (r2 > best.r2 + 1e-12) best = {a, r2};
  }
  return best;
}

struct FeatureCluster {
  std::vector<std::size_t> members;
  std::size_t representative = 0;
  double target_correlation = 0.0;  // Spearman rho of the representative with the target
};

struct ClusterSelection {
  std::vector<FeatureCluster> clusters;
  std::vector<Merge> linkage;
  double threshold = 0.0;
  double alpha = 1.0;
  double loocv_r2 = 0.0;

  std::vector<std::size_t> representatives() const {
    std::vector<std::size_t> r;
    for (const auto& c : clusters) r.push_back(c.representative);
    return r;
  }
};

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = X.col(cols[j]);
  return out;
}

inline std::vector<FeatureCluster> clusters_from_labels(const std::vector<std::size_t>& labels,
                                                        const std::vector<double>& target_rho) {
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<FeatureCluster> out(k);
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].members.push_back(i);
  for (auto& c : out) {
    c.representative = c.members.front();
    for (auto m : c.members)
      if (std::abs(target_rho[m]) > std::abs(target_rho[c.representative])) c.representative = m;
    c.target_correlation = target_rho[c.representative];
  }
  return out;
}

/// Clusters features by 1 - |Spearman rho| with Ward linkage and picks the cut
/// whose representatives give the best leave-one-out R^2. Each cluster is
/// represented by its member most correlated with the target. Without a fixed
/// alpha, every cut is scored at its own LOOCV-best alpha. Ties keep the
/// lower threshold.
inline ClusterSelection cluster_features(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         std::optional<double> alpha = std::nullopt) {
  const auto p = static_cast<std::size_t>(X.cols());
  require(p >= 2, "cluster_features: need at least 2 features");
  require(X.rows() >= 4, "cluster_features: need at least 4 observations");
  require(X.rows() == y.size(), "cluster_features: feature and target rows differ");
  require(X.allFinite() && y.allFinite(), "cluster_features: non-finite input");

  const Eigen::MatrixXd rho = spearman_matrix(X);
  const Eigen::MatrixXd dist = (1.0 - rho.array().abs()).matrix().cwiseMax(0.0);
  std::vector<double> target_rho(p);
  const std::vector<double> yv(y.data(), y.data() + y.size());
  for (std::size_t j = 0; j < p; ++j) {
    const std::vector<double> xj(X.col(j).data(), X.col(j).data() + X.rows());
    target_rho[j] = spearman(xj, yv).statistic;
  }

  ClusterSelection best;
  best.linkage = ward_linkage(dist);
  best.loocv_r2 = -std::numeric_limits<double>::infinity();
  std::vector<double> h;
  for (const auto& m : best.linkage) h.push_back(m.height);
  std::sort(h.begin(), h.end());
  // one threshold per distinct cut: 0, midpoints between heights, above the top
  std::vector<double> candidates{0.0};
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double upper = i + 1 < h.size() ? h[i + 1] : h[i] + std::max(1e-6, 0.5 * h[i]);
    if (upper > h[i]) candidates.push_back(0.5 * (h[i] + upper));
  }
  std::vector<std::size_t> last_labels;
  for (double t : candidates) {
    const auto labels = cut_tree(best.linkage, p, t);
    if (labels == last_labels) continue;
    last_labels = labels;
    auto clusters = clusters_from_labels(labels, target_rho);
    std::vector<std::size_t> reps;
    for (const auto& c : clusters) reps.push_back(c.representative);
    const Eigen::MatrixXd Xr = select_columns(X, reps);
    const AlphaChoice choice =
        alpha ? AlphaChoice{*alpha, loocv_r2(Xr, y, *alpha)} : select_alpha(Xr, y);
    if (choice.r2 > best.loocv_r2 + 1e-12) {
      best.clusters = std::move(clusters);
      best.threshold = t;
      best.alpha = choice.alpha;
      best.loocv_r2 = choice.r2;
    }
  }
  return best;
}

struct FeatureImportance {
  std::size_t feature = 0;  // column index in the full feature matrix
  double mean = 0.0;        // mean drop in LOOCV R^2
  double std = 0.0;
};

/// Drop in leave-one-out R^2 when one column is shuffled, over `repeats`
/// seeded shuffles per column. Returned in column order.
inline std::vector<FeatureImportance> ridge_permutation_importance(const Eigen::MatrixXd& X,
                                                                   const Eigen::VectorXd& y,
                                                                   double alpha, int repeats,
                                                                   std::uint64_t seed) {
  require(repeats >= 1, "permutation importance: repeats must be >= 1");
  const double base = loocv_r2(X, y, alpha);
  std::vector<FeatureImportance> out(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    std::vector<double> drops(static_cast<std::size_t>(repeats));
    parallel_for(drops.size(), [&](std::size_t r) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(j), r));
      Eigen::MatrixXd Xp = X;
      std::vector<double> col(X.col(j).data(), X.col(j).data() + X.rows());
      std::shuffle(col.begin(), col.end(), rng);
      for (Eigen::Index i = 0; i < X.rows(); ++i) Xp(i, j) = col[static_cast<std::size_t>(i)];
      drops[r] = base - loocv_r2(Xp, y, alpha);
    });
    const double m = mean(std::span<const double>(drops));
    double v = 0;
    for (double d : drops) v += (d - m) * (d - m);
    out[j] = {static_cast<std::size_t>(j), m, std::sqrt(v / static_cast<double>(drops.size()))};
  }
  return out;
}

struct RegressionReport {
  ClusterSelection selection;
  double ridge_alpha = 0.0;
  double loocv_r2 = 0.0;
  std::vector<FeatureImportance> importances;  // representatives, most important first
};

/// Clustering, then permutation importance of the chosen representatives.
inline RegressionReport analyze_features(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         int repeats, std::uint64_t seed,
                                         std::optional<double> alpha = std::nullopt) {
  RegressionReport rep;
  rep.selection = cluster_features(X, y, alpha);
  rep.ridge_alpha = rep.selection.alpha;
  rep.loocv_r2 = rep.selection.loocv_r2;
  const auto reps = rep.selection.representatives();
  auto imp = ridge_permutation_importance(select_columns(X, reps), y, rep.ridge_alpha, repeats, seed);
  for (auto& i : imp) i.feature = reps[i.feature];
  std::stable_sort(imp.begin(), imp.end(),
                   [](const auto& a, const auto& b) { return a.mean > b.mean; });
  rep.importances = std::move(imp);
  return rep;
}

}  // namespace jjtls
