#pragma once
// Empirical-Bayes inference of the true defect count from detection counts.
//
// Each resonator's sweep is divided into B linewidth-sized bins, each holding
// at most one defect. A defect bin is detected with probability 1 - FN and an
// empty bin fires with probability FP; the true count has a Poisson prior
// whose rate is set by maximising the marginal likelihood of the observation.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "jjtls/core.hpp"

namespace jjtls {

struct DetectorRates {
  double fp = 0.0;  // single residual above threshold without a defect
  double fn = 0.0;  // single residual below threshold with a defect
  double FP = 0.0;  // per-bin false detection after the peak-shape rule
  double FN = 0.0;  // per-bin miss
};

/// Folds the five-point peak requirement into per-bin rates:
/// FP = (1 - (1 - fp)^5) / 20 and FN = fn^5.
inline DetectorRates true_rates(double fp, double fn) {
  require(fp >= 0 && fp <= 1 && fn >= 0 && fn <= 1, "true_rates: fp and fn must lie in [0, 1]");
  DetectorRates r;
  r.fp = fp;
  r.fn = fn;
  r.FP = (1.0 - std::pow(1.0 - fp, 5)) / 20.0;
  r.FN = std::pow(fn, 5);
  return r;
}

namespace detail {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

inline double log_choose(int n, int k) {
  if (k < 0 || k > n) return neg_inf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// k log p with the convention 0 log 0 = 0.
inline double xlogp(int k, double p) {
  if (k == 0) return 0.0;
  return p > 0 ? k * std::log(p) : neg_inf;
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = neg_inf;
  for (double x : xs) m = std::max(m, x);
  if (m == neg_inf) return neg_inf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

inline void check_counts(int n_m, int n_t, int bins) {
  require(bins >= 1, "bins must be >= 1");
  require(n_m >= 0 && n_m <= bins, "detections must lie in [0, B]");
  require(n_t >= 0 && n_t <= bins, "true count must lie in [0, B]");
}

/// log P(n_m detections | n_t true defects) as a sum over j detected defects.
inline double log_detection_likelihood(int n_m, int n_t, int bins, const DetectorRates& r) {
  check_counts(n_m, n_t, bins);
  const int empty = bins - n_t;
  std::vector<double> terms;
  for (int j = std::max(0, n_m - empty); j <= std::min(n_m, n_t); ++j) {
    const int fa = n_m - j;  // false alarms among empty bins
    terms.push_back(detail::log_choose(n_t, j) + detail::xlogp(j, 1.0 - r.FN) +
                    detail::xlogp(n_t - j, r.FN) + detail::log_choose(empty, fa) +
                    detail::xlogp(fa, r.FP) + detail::xlogp(empty - fa, 1.0 - r.FP));
  }
  return detail::log_sum_exp(terms);
}

inline double detection_likelihood(int n_m, int n_t, int bins, const DetectorRates& r) {
  return std::exp(log_detection_likelihood(n_m, n_t, bins, r));
}

/// log Poisson(k | lambda), truncated to [0, bins] and renormalised.
inline std::vector<double> log_truncated_poisson(double lambda, int bins) {
  require(lambda >= 0 && std::isfinite(lambda), "lambda must be finite and >= 0");
  std::vector<double> lp(static_cast<std::size_t>(bins) + 1);
  for (int k = 0; k <= bins; ++k)
    lp[k] = detail::xlogp(k, lambda) - lambda - std::lgamma(k + 1.0);
  const double z = detail::log_sum_exp(lp);
  for (auto& x : lp) x -= z;
  return lp;
}

inline double log_marginal_likelihood(int n_m, int bins, const DetectorRates& r, double lambda) {
  check_counts(n_m, 0, bins);
  const auto prior = log_truncated_poisson(lambda, bins);
  std::vector<double> terms(prior.size());
  for (int k = 0; k <= bins; ++k) terms[k] = prior[k] + log_detection_likelihood(n_m, k, bins, r);
  return detail::log_sum_exp(terms);
}

inline double marginal_likelihood(int n_m, int bins, const DetectorRates& r, double lambda) {
  return std::exp(log_marginal_likelihood(n_m, bins, r, lambda));
}

/// Golden-section maximisation of the marginal likelihood over lambda in [0, B].
inline double mle_lambda(int n_m, int bins, const DetectorRates& r, double rel_tol = 1e-6) {
  check_counts(n_m, 0, bins);
  // likelihood of n_m given k, cached across lambda evaluations
  std::vector<double> ll(static_cast<std::size_t>(bins) + 1);
  for (int k = 0; k <= bins; ++k) ll[k] = log_detection_likelihood(n_m, k, bins, r);
  auto f = [&](double lam) {
    const auto prior = log_truncated_poisson(lam, bins);
    std::vector<double> t(prior.size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = prior[k] + ll[k];
    return detail::log_sum_exp(t);
  };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = static_cast<double>(bins);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > rel_tol * std::max(1.0, 0.5 * (a + b))) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  const double best = 0.5 * (a + b);
  // boundary optimum
  if (f(0.0) >= f(best)) return 0.0;
  return best;
}

struct PosteriorDensity {
  std::vector<double> pmf;  // over true count 0..B
  double lambda_star = 0.0;
  double mean_count = 0.0;
  double ci_lower = 0.0;  // central 68.27% credible interval
  double ci_upper = 0.0;
};

inline constexpr double kCredibleMass = 0.6827;

namespace detail {

/// Quantile of the density obtained by linear interpolation between the
/// points (k, pmf[k]), normalised over [0, B].
inline double interpolated_quantile(std::span<const double> pmf, double q) {
  const std::size_t n = pmf.size();
  if (n == 1) return 0.0;
  std::vector<double> seg(n - 1);
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    seg[k] = 0.5 * (pmf[k] + pmf[k + 1]);
    total += seg[k];
  }
  const double target = q * total;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (acc + seg[k] >= target && seg[k] > 0) {
      // solve a t + (b - a) t^2 / 2 = rem for t in [0, 1]
      const double a = pmf[k], b = pmf[k + 1], rem = target - acc;
      const double h = b - a;
      double t;
      if (std::abs(h) < 1e-15 * std::max(a, b))
        t = rem / a;
      else
        t = (-a + std::sqrt(std::max(0.0, a * a + 2.0 * h * rem))) / h;
      return static_cast<double>(k) + std::clamp(t, 0.0, 1.0);
    }
    acc += seg[k];
  }
  return static_cast<double>(n - 1);
}

}  // namespace detail

struct InferenceInput {
  int n_detected = 0;
  int bins = 1;
  DetectorRates rates;

  void validate() const { check_counts(n_detected, 0, bins); }
};

inline PosteriorDensity posterior(const InferenceInput& in) {
  in.validate();
  const int B = in.bins;
  PosteriorDensity post;
  post.lambda_star = mle_lambda(in.n_detected, B, in.rates);
  const auto prior = log_truncated_poisson(post.lambda_star, B);
  std::vector<double> lp(prior.size());
  for (int k = 0; k <= B; ++k)
    lp[k] = prior[k] + log_detection_likelihood(in.n_detected, k, B, in.rates);
  const double z = detail::log_sum_exp(lp);
  if (!std::isfinite(z))
    throw NumericalError("posterior: zero probability for every count (inconsistent rates)");
  post.pmf.resize(lp.size());
  std::size_t support = 0, only = 0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    post.pmf[k] = std::exp(lp[k] - z);
    post.mean_count += static_cast<double>(k) * post.pmf[k];
    if (post.pmf[k] > 0) {
      ++support;
      only = k;
    }
  }
  if (support == 1) {
    // a point mass has no spread to interpolate
    post.ci_lower = post.ci_upper = static_cast<double>(only);
  } else {
    const double tail = 0.5 * (1.0 - kCredibleMass);
    post.ci_lower = detail::interpolated_quantile(post.pmf, tail);
    post.ci_upper = detail::interpolated_quantile(post.pmf, 1.0 - tail);
  }
  return post;
}

struct DensityEstimate {
  double rho = 0.0;  // defects per GHz per um^2
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double delta_f = 0.0;  // GHz
  double area = 0.0;     // um^2
};

inline DensityEstimate density(const PosteriorDensity& post, double delta_f, double area) {
  require(delta_f > 0 && std::isfinite(delta_f), "density: delta_f must be > 0");
  require(area > 0 && std::isfinite(area), "density: area must be > 0");
  const double norm = delta_f * area;
  return {post.mean_count / norm, post.ci_lower / norm, post.ci_upper / norm, delta_f, area};
}

struct DeviceSummary {
  double rho_mean = 0.0;
  double sigma_plus = 0.0;
  double sigma_minus = 0.0;
  std::size_t count = 0;
};

/// Mean density over a device's resonators; the credible-interval half-widths
/// combine as (1/N) sqrt(sum sigma_i^2) on each side.
inline DeviceSummary aggregate_device(std::span<const DensityEstimate> estimates) {
  require(!estimates.empty(), "aggregate_device: no estimates");
  DeviceSummary s;
  s.count = estimates.size();
  double sp = 0, sm = 0;
  for (const auto& e : estimates) {
    s.rho_mean += e.rho;
    const double up = e.ci_upper - e.rho, down = e.rho - e.ci_lower;
    sp += up * up;
    sm += down * down;
  }
  const double n = static_cast<double>(estimates.size());
  s.rho_mean /= n;
  s.sigma_plus = std::sqrt(sp) / n;
  s.sigma_minus = std::sqrt(sm) / n;
  return s;
}

}  // namespace jjtls
