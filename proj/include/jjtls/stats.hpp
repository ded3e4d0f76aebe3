#pragma once
// Treatment-comparison statistics: normality, rank tests, gamma fits, correlation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "jjtls/core.hpp"

namespace jjtls {

inline constexpr double kDefaultSignificance = 0.05;

struct TestResult {
  double statistic = 0.0;
  double p = 1.0;
};

/// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

namespace detail {

inline double poly(std::span<const double> c, double x) {
  double r = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
  return r;
}

inline double norm_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double norm_upper(double x, double mean, double sd) {
  return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(mean, sd), x));
}

}  // namespace detail

/// Shapiro-Wilk W test with Royston's approximations (algorithm AS R94).
inline TestResult shapiro_wilk(std::span<const double> samples) {
  const std::size_t n = samples.size();
  require(n >= 3 && n <= 5000, "shapiro_wilk: need 3 <= n <= 5000");
  require(all_finite(samples), "shapiro_wilk: non-finite sample");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  if (!(range > 1e-19 * std::max(1.0, std::abs(x.front()))))
    throw NumericalError("shapiro_wilk: constant sample");

  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.544, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  const double an = static_cast<double>(n);
  const std::size_t half = n / 2;
  std::vector<double> a(half + 1, 0.0);  // 1-based, positive weights
  if (n == 3) {
    a[1] = std::sqrt(0.5);
  } else {
    std::vector<double> m(half + 1);
    double summ2 = 0.0;
    for (std::size_t i = 1; i <= half; ++i) {
      m[i] = detail::norm_quantile((static_cast<double>(i) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = detail::poly(c1, rsn) - m[1] / ssumm2;
    std::size_t i1;
    double fac;
    if (n > 5) {
      i1 = 3;
      const double a2 = -m[2] / ssumm2 + detail::poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[2] = a2;
    } else {
      i1 = 2;
      fac = std::sqrt((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1));
    }
    a[1] = a1;
    for (std::size_t i = i1; i <= half; ++i) a[i] = -m[i] / fac;
  }

  // W from the centred, antisymmetric coefficient vector; computed as 1 - W
  // to keep precision near W = 1.
  std::vector<double> full(n, 0.0);
  for (std::size_t i = 1; i <= half; ++i) {
    full[i - 1] = -a[i];
    full[n - i] = a[i];
  }
  const double xm = mean(std::span<const double>(x)) / range;
  double ssa = 0, ssx = 0, sax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i] / range - xm;
    ssa += full[i] * full[i];
    ssx += xi * xi;
    sax += full[i] * xi;
  }
  const double ssassx = std::sqrt(ssa * ssx);
  const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
  const double w = 1.0 - w1;

  TestResult out;
  out.statistic = w;
  if (n == 3) {
    const double pi6 = 6.0 / constants::pi, stqr = constants::pi / 3.0;
    out.p = std::max(0.0, pi6 * (std::asin(std::sqrt(w)) - stqr));
    return out;
  }
  double y = std::log(w1);
  const double lxx = std::log(an);
  double mu, sd;
  if (n <= 11) {
    const double gam = detail::poly(g, an);
    if (y >= gam) {
      out.p = 1e-99;
      return out;
    }
    y = -std::log(gam - y);
    mu = detail::poly(c3, an);
    sd = std::exp(detail::poly(c4, an));
  } else {
    mu = detail::poly(c5, lxx);
    sd = std::exp(detail::poly(c6, lxx));
  }
  out.p = detail::norm_upper(y, mu, sd);
  return out;
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k-1 dof.
inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  require(groups.size() >= 2, "kruskal_wallis: need at least 2 groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    require(g.size() >= 2, "kruskal_wallis: each group needs at least 2 samples");
    require(all_finite(g), "kruskal_wallis: non-finite sample");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const auto r = average_ranks(pooled);
  const double N = static_cast<double>(pooled.size());
  double h = 0.0;
  std::size_t off = 0;
  for (const auto& g : groups) {
    double rs = 0;
    for (std::size_t i = 0; i < g.size(); ++i) rs += r[off + i];
    h += rs * rs / static_cast<double>(g.size());
    off += g.size();
  }
  h = 12.0 / (N * (N + 1.0)) * h - 3.0 * (N + 1.0);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  const double corr = 1.0 - ties / (N * N * N - N);
  if (corr <= 0) return {0.0, 1.0};  // every value identical
  h = std::max(0.0, h / corr);
  const double dof = static_cast<double>(groups.size() - 1);
  return {h, boost::math::gamma_q(0.5 * dof, 0.5 * h)};
}

struct GammaFit {
  double shape = 0.0;
  double scale = 0.0;
  double mean = 0.0;
  double mean_stderr = 0.0;
  int iterations = 0;
};

/// Maximum-likelihood gamma fit; Newton on the shape equation
/// log k - digamma(k) = log(mean x) - mean(log x), starting from moments.
/// Zero samples are lifted to machine epsilon.
inline GammaFit gamma_fit(std::span<const double> samples, int max_iterations = 100) {
  const std::size_t n = samples.size();
  require(n >= 4, "gamma_fit: need at least 4 samples");
  std::vector<double> x(samples.begin(), samples.end());
  for (double& v : x) {
    require(std::isfinite(v) && v >= 0, "gamma_fit: samples must be finite and >= 0");
    v = std::max(v, std::numeric_limits<double>::epsilon());
  }
  const double xbar = mean(std::span<const double>(x));
  double mlog = 0, var = 0;
  for (double v : x) {
    mlog += std::log(v);
    var += (v - xbar) * (v - xbar);
  }
  mlog /= static_cast<double>(n);
  var /= static_cast<double>(n);
  const double s = std::log(xbar) - mlog;
  if (!(s > 1e-14) || !(var > 0))
    throw NumericalError("gamma_fit: degenerate sample (shape diverges)");

  double k = xbar * xbar / var;
  GammaFit out;
  bool done = false;
  for (int it = 0; it < max_iterations && !done; ++it) {
    // solve in log k for positivity
    const double f = std::log(k) - boost::math::digamma(k) - s;
    const double df = 1.0 - k * boost::math::trigamma(k);  // d f / d log k
    const double step = f / df;
    k *= std::exp(-std::clamp(step, -5.0, 5.0));
    out.iterations = it + 1;
    done = std::abs(step) < 1e-12;
  }
  if (!done || !std::isfinite(k)) throw NumericalError("gamma_fit: Newton iteration did not converge");
  out.shape = k;
  out.scale = xbar / k;
  out.mean = xbar;
  // observed information in (k, scale), propagated to mean = k * scale
  const double th = out.scale, nn = static_cast<double>(n);
  const double ikk = nn * boost::math::trigamma(k), ikt = nn / th, itt = nn * k / (th * th);
  const double det = ikk * itt - ikt * ikt;
  const double var_mean = (th * th * itt - 2.0 * th * k * ikt + k * k * ikk) / det;
  out.mean_stderr = std::sqrt(std::max(0.0, var_mean));
  return out;
}

/// Pearson r with a two-sided p-value from the t-transform (n-2 dof).
inline TestResult pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 3, "pearson: need at least 3 pairs");
  require(all_finite(x) && all_finite(y), "pearson: non-finite input");
  const double mx = mean(x), my = mean(y);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0) || !(syy > 0)) throw NumericalError("pearson: zero variance");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(x.size()) - 2.0;
  if (dof < 1 || std::abs(r) >= 1.0) return {r, dof < 1 ? 1.0 : 0.0};
  const double t = r * std::sqrt(dof / (1.0 - r * r));
  const boost::math::students_t_distribution<double> dist(dof);
  return {r, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)))};
}

inline TestResult spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "spearman: length mismatch");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Two-sided permutation p-value for Pearson r: shuffles y `repeats` times.
inline double pearson_permutation_p(std::span<const double> x, std::span<const double> y,
                                    int repeats, std::uint64_t seed) {
  require(repeats >= 1, "pearson_permutation_p: repeats must be >= 1");
  const double r0 = std::abs(pearson(x, y).statistic);
  std::vector<double> ys(y.begin(), y.end());
  Rng rng(seed);
  int hits = 0;
  for (int i = 0; i < repeats; ++i) {
    std::shuffle(ys.begin(), ys.end(), rng);
    hits += std::abs(pearson(x, ys).statistic) >= r0 - 1e-15;
  }
  return (hits + 1.0) / (repeats + 1.0);
}

}  // namespace jjtls
