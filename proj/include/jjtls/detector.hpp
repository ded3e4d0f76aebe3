#pragma once
// Sweep orchestration and threshold-based TLS detection on fit residuals.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "jjtls/fitting.hpp"

namespace jjtls {

enum class ExclusionReason { Collision, PastMaximum, Manual };

inline const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::Collision: return "collision";
    case ExclusionReason::PastMaximum: return "past-maximum";
    case ExclusionReason::Manual: return "manual";
  }
  return "?";
}

/// Closed index interval [first, last] of sweep steps left out of the analysis.
struct Exclusion {
  std::size_t first = 0;
  std::size_t last = 0;
  ExclusionReason reason = ExclusionReason::Manual;
};

struct SweepDataset {
  std::vector<Trace> traces;
  std::vector<FitResult> fits;
  std::vector<Exclusion> exclusions;

  std::size_t size() const { return traces.size(); }

  bool excluded(std::size_t i) const {
    for (const auto& e : exclusions)
      if (i >= e.first && i <= e.last) return true;
    return false;
  }

  bool usable(std::size_t i) const { return !excluded(i) && fits[i].usable(); }

  std::vector<double> biases() const {
    std::vector<double> b;
    for (const auto& t : traces) b.push_back(t.bias_current);
    return b;
  }
};

namespace detail {

/// Rebuilds exclusion intervals from per-step tags so that they never overlap.
inline std::vector<Exclusion> compress_tags(const std::vector<std::optional<ExclusionReason>>& tags) {
  std::vector<Exclusion> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (!tags[i]) continue;
    if (!out.empty() && out.back().last + 1 == i && out.back().reason == *tags[i])
      out.back().last = i;
    else
      out.push_back({i, i, *tags[i]});
  }
  return out;
}

inline std::vector<std::optional<ExclusionReason>> expand_tags(const SweepDataset& s) {
  std::vector<std::optional<ExclusionReason>> tags(s.size());
  for (const auto& e : s.exclusions)
    for (std::size_t i = e.first; i <= e.last && i < tags.size(); ++i) tags[i] = e.reason;
  return tags;
}

}  // namespace detail

/// Fits one step of a sweep; when no resonance can be located, falls back on
/// the previous good fit as the starting point.
inline FitResult fit_step(const Trace& t, const std::optional<ResonatorParams>& previous) {
  try {
    return fit_hanger(t);
  } catch (const NumericalError&) {
    if (!previous) {
      FitResult bad;
      bad.converged = false;
      bad.residual_metric = std::numeric_limits<double>::infinity();
      return bad;
    }
    return fit_hanger(t, previous);
  }
}

/// Measurement callback: (bias mA, centre GHz, span GHz, points) -> trace.
using Instrument = std::function<Trace(double, double, double, int)>;

/// Steps through `bias_plan`, re-centring each window on the previous fitted
/// resonance. Steps whose fit yields no usable estimate, or lands outside the
/// window, are excluded with the `manual` tag.
inline SweepDataset curve_follow(const Instrument& measure, std::span<const double> bias_plan,
                                 double f_center, double span, int n_points) {
  require(!bias_plan.empty(), "curve_follow: empty bias plan");
  require(span > 0 && n_points >= 16, "curve_follow: invalid span or point count");
  SweepDataset out;
  std::vector<std::optional<ExclusionReason>> tags;
  std::optional<ResonatorParams> last_good;
  double center = f_center;
  for (double bias : bias_plan) {
    auto t = measure(bias, center, span, n_points);
    t.bias_current = bias;
    auto fit = fit_step(t, last_good);
    const bool ok = fit.usable() && std::abs(fit.params.f_r - center) < span / 2;
    tags.push_back(ok ? std::nullopt : std::optional(ExclusionReason::Manual));
    if (ok) {
      last_good = fit.params;
      center = fit.params.f_r;
    }
    out.traces.push_back(std::move(t));
    out.fits.push_back(fit);
  }
  out.exclusions = detail::compress_tags(tags);
  return out;
}

/// Fits a recorded set of traces in sweep order.
inline SweepDataset fit_recorded(std::vector<Trace> traces) {
  require(!traces.empty(), "fit_recorded: no traces");
  SweepDataset out;
  std::vector<std::optional<ExclusionReason>> tags;
  std::optional<ResonatorParams> last_good;
  out.fits.resize(traces.size());
  // Fitting is independent per trace except for the fallback seed, so run the
  // automatic fits in parallel and repair failures sequentially.
  std::vector<char> needs_fallback(traces.size(), 0);
  parallel_for(traces.size(), [&](std::size_t i) {
    try {
      out.fits[i] = fit_hanger(traces[i]);
    } catch (const NumericalError&) {
      needs_fallback[i] = 1;
    }
  });
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (needs_fallback[i]) out.fits[i] = fit_step(traces[i], last_good);
    const bool ok = out.fits[i].usable();
    tags.push_back(ok ? std::nullopt : std::optional(ExclusionReason::Manual));
    if (ok) last_good = out.fits[i].params;
  }
  out.traces = std::move(traces);
  out.exclusions = detail::compress_tags(tags);
  return out;
}

/// Adds manual collision intervals and excludes every step after the sweep's
/// frequency maximum so that no defect is crossed twice.
inline SweepDataset apply_exclusions(SweepDataset sweep, std::span<const Exclusion> manual) {
  require(sweep.fits.size() == sweep.traces.size(), "apply_exclusions: sweep is not fitted");
  auto tags = detail::expand_tags(sweep);
  for (const auto& e : manual) {
    require(e.first <= e.last, "apply_exclusions: interval with first > last");
    require(e.last < sweep.size(), "apply_exclusions: interval outside the sweep");
    for (std::size_t i = e.first; i <= e.last; ++i) tags[i] = ExclusionReason::Collision;
  }
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < sweep.size(); ++i)
    if (!tags[i] && sweep.fits[i].usable()) good.push_back(i);
  if (good.size() >= 3) {
    std::size_t best = good.front();
    for (auto i : good)
      if (sweep.fits[i].params.f_r > sweep.fits[best].params.f_r) best = i;
    if (best != good.front() && best != good.back())
      for (std::size_t i = best + 1; i < sweep.size(); ++i)
        if (!tags[i]) tags[i] = ExclusionReason::PastMaximum;
  }
  sweep.exclusions = detail::compress_tags(tags);
  return sweep;
}

/// Residual metric resampled on a uniform grid of resonator frequency shift.
struct ResidualSeries {
  std::vector<double> shift;     // kappa units, spacing exactly `step`
  std::vector<double> residual;  // interpolated residual metric
  std::vector<bool> excluded;    // grid point lies in an excluded stretch
  std::vector<double> bias;      // interpolated bias current (mA)
  std::vector<double> freq;      // resonance frequency from the flux parabola (GHz)
  double kappa = 0.0;            // median fitted linewidth (GHz)
  double step = 0.25;

  std::size_t size() const { return shift.size(); }

  /// Swept frequency range covered by non-excluded grid points (GHz).
  double included_range() const {
    std::size_t n = 0;
    for (bool e : excluded) n += e ? 0 : 1;
    return n > 1 ? static_cast<double>(n - 1) * step * kappa : 0.0;
  }
};

inline ResidualSeries normalize_axis(const SweepDataset& sweep, double step = 0.25) {
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < sweep.size(); ++i)
    if (sweep.usable(i)) good.push_back(i);
  if (good.size() < 3) throw NumericalError("normalize_axis: fewer than 3 usable fits");

  std::vector<double> b, f0, kap;
  for (auto i : good) {
    b.push_back(sweep.traces[i].bias_current);
    f0.push_back(sweep.fits[i].params.f_r);
    kap.push_back(sweep.fits[i].params.kappa());
  }
  const auto parab = fit_flux_parabola(b, f0);
  const double kappa = median(kap);

  // cumulative shift over every step between the first and last usable fit
  const std::size_t lo = good.front(), hi = good.back();
  std::vector<double> s(hi - lo + 1, 0.0);
  for (std::size_t i = lo + 1; i <= hi; ++i) {
    const double d = parab(sweep.traces[i].bias_current) - parab(sweep.traces[i - 1].bias_current);
    s[i - lo] = s[i - 1 - lo] + std::abs(d) / kappa;
  }
  const double total = s.back();
  if (!(total > 0)) throw NumericalError("normalize_axis: zero total frequency shift");

  // nearest usable neighbours for value interpolation across excluded steps
  auto usable = [&](std::size_t i) { return sweep.usable(i); };
  ResidualSeries out;
  out.kappa = kappa;
  out.step = step;
  const auto npts = static_cast<std::size_t>(std::floor(total / step * (1 + 1e-12))) + 1;
  std::size_t seg = lo;  // current segment [seg, seg+1]
  for (std::size_t g = 0; g < npts; ++g) {
    const double x = static_cast<double>(g) * step;
    while (seg + 1 < hi && s[seg + 1 - lo] < x) ++seg;
    // skip zero-length segments
    while (seg + 1 < hi && s[seg + 1 - lo] <= s[seg - lo]) ++seg;
    const std::size_t a = seg, c = std::min(seg + 1, hi);
    const double sa = s[a - lo], sc = s[c - lo];
    const double t = sc > sa ? std::clamp((x - sa) / (sc - sa), 0.0, 1.0) : 0.0;
    const bool excl = !usable(a) || !usable(c);
    // values: interpolate between the closest usable steps around x
    std::size_t ua = a, uc = c;
    while (!usable(ua) && ua > lo) --ua;
    while (!usable(uc) && uc < hi) ++uc;
    const double sua = s[ua - lo], suc = s[uc - lo];
    const double tu = suc > sua ? std::clamp((x - sua) / (suc - sua), 0.0, 1.0) : 0.0;
    const double ra = sweep.fits[ua].residual_metric, rc = sweep.fits[uc].residual_metric;
    const double bias =
        sweep.traces[a].bias_current + t * (sweep.traces[c].bias_current - sweep.traces[a].bias_current);
    out.shift.push_back(x);
    out.residual.push_back(std::max(0.0, ra + tu * (rc - ra)));
    out.excluded.push_back(excl);
    out.bias.push_back(bias);
    out.freq.push_back(parab(bias));
  }
  return out;
}

struct GaussianFit {
  double mean = 0.0;
  double std = 0.0;
};

inline GaussianFit fit_gaussian(std::span<const double> xs) {
  require(xs.size() >= 2, "fit_gaussian: need at least 2 samples");
  GaussianFit g;
  g.mean = mean(xs);
  double v = 0;
  for (double x : xs) v += (x - g.mean) * (x - g.mean);
  g.std = std::sqrt(v / static_cast<double>(xs.size()));
  return g;
}

struct DetectorCalibration {
  double threshold = 0.0;
  double fp = 0.0;  // single-value false-positive probability
  double fn = 0.0;  // single-value false-negative probability
  double noise_sigma = 0.0;
  GaussianFit gauss_noise;
  GaussianFit gauss_tls;
};

/// Crossing of two Gaussian densities between their means.
inline double gaussian_intersection(const GaussianFit& a, const GaussianFit& b) {
  const double m0 = a.mean, m1 = b.mean, s0 = a.std, s1 = b.std;
  if (s0 <= 0 && s1 <= 0) return 0.5 * (m0 + m1);
  if (s0 <= 0) return m0;
  if (s1 <= 0) return m1;
  if (std::abs(s0 - s1) <= 1e-12 * std::max(s0, s1)) return 0.5 * (m0 + m1);
  // (x-m0)^2/s0^2 - (x-m1)^2/s1^2 + 2 ln(s0/s1) = 0
  const double A = 1 / (s0 * s0) - 1 / (s1 * s1);
  const double B = -2 * (m0 / (s0 * s0) - m1 / (s1 * s1));
  const double C = m0 * m0 / (s0 * s0) - m1 * m1 / (s1 * s1) + 2 * std::log(s0 / s1);
  const double disc = B * B - 4 * A * C;
  if (disc < 0) throw NumericalError("calibration: Gaussian fits do not intersect");
  const double q = -0.5 * (B + std::copysign(std::sqrt(disc), B));
  const double r1 = q / A, r2 = C / q;
  const double lo = std::min(m0, m1), hi = std::max(m0, m1);
  for (double r : {r1, r2})
    if (r > lo && r < hi) return r;
  throw NumericalError("calibration: no Gaussian crossing between the means");
}

/// Threshold and base error rates from residual samples with and without TLS.
inline DetectorCalibration calibrate_from_samples(std::span<const double> noise_only,
                                                  std::span<const double> with_tls,
                                                  double noise_sigma) {
  DetectorCalibration c;
  c.noise_sigma = noise_sigma;
  c.gauss_noise = fit_gaussian(noise_only);
  c.gauss_tls = fit_gaussian(with_tls);
  const double sep = c.gauss_tls.mean - c.gauss_noise.mean;
  const double se = std::sqrt(c.gauss_noise.std * c.gauss_noise.std / noise_only.size() +
                              c.gauss_tls.std * c.gauss_tls.std / with_tls.size());
  if (!(sep > 3 * se) || !(sep > 1e-14 * std::abs(c.gauss_tls.mean)))
    throw NumericalError("calibration: residual distributions are indistinguishable");
  c.threshold = gaussian_intersection(c.gauss_noise, c.gauss_tls);
  auto upper_tail = [](const GaussianFit& g, double x) {
    if (g.std <= 0) return x < g.mean ? 1.0 : 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::normal(g.mean, g.std), x));
  };
  c.fp = upper_tail(c.gauss_noise, c.threshold);
  c.fn = 1.0 - upper_tail(c.gauss_tls, c.threshold);
  return c;
}

/// Measurement window used when synthesising calibration traces.
struct CalibrationWindow {
  double span = 0.0;   // GHz
  int n_points = 201;
};

/// The weakest defect the detector is calibrated against: g = kappa/2,
/// gamma = kappa, detuned by +kappa/2 (cooperativity 1).
inline TLSDefect critical_defect(const ResonatorParams& p, double temperature = 0.010) {
  const double k = p.kappa();
  return {p.f_r + 0.5 * k, 0.5 * k, k, temperature};
}

struct CalibrationEnsemble {
  std::vector<double> noise_only;
  std::vector<double> with_tls;
};

inline CalibrationEnsemble simulate_calibration_ensemble(const ResonatorParams& params,
                                                         double noise_sigma, int ensemble_size,
                                                         const CalibrationWindow& win,
                                                         std::uint64_t seed) {
  params.validate();
  require(win.span > 0 && win.n_points >= 16, "calibration: invalid window");
  const auto grid = linear_grid(params.f_r, win.span, win.n_points);
  const TLSDefect crit = critical_defect(params);
  CalibrationEnsemble ens;
  const auto n = static_cast<std::size_t>(ensemble_size);
  ens.noise_only.resize(n);
  ens.with_tls.resize(n);
  parallel_for(2 * n, [&](std::size_t job) {
    const bool tls = job >= n;
    const std::size_t i = tls ? job - n : job;
    Rng rng(derive_seed(seed, tls ? 2 : 1, i));
    std::vector<TLSDefect> ds;
    if (tls) ds.push_back(crit);
    const auto t = synth_trace(params, ds, grid, noise_sigma, rng);
    FitResult fit;
    try {
      fit = fit_hanger(t);
    } catch (const NumericalError&) {
      fit = fit_hanger(t, params);
    }
    (tls ? ens.with_tls : ens.noise_only)[i] = fit.residual_metric;
  });
  auto drop_bad = [](std::vector<double>& v) {
    std::erase_if(v, [](double x) { return !std::isfinite(x); });
  };
  drop_bad(ens.noise_only);
  drop_bad(ens.with_tls);
  return ens;
}

/// Simulates noise-only and critical-TLS ensembles, fits every trace and
/// places the threshold where the two Gaussian fits cross.
inline DetectorCalibration build_threshold(const ResonatorParams& params, double noise_sigma,
                                           int ensemble_size, const CalibrationWindow& win,
                                           std::uint64_t seed) {
  require(ensemble_size >= 1000, "build_threshold: ensemble_size must be >= 1000");
  const auto ens = simulate_calibration_ensemble(params, noise_sigma, ensemble_size, win, seed);
  return calibrate_from_samples(ens.noise_only, ens.with_tls, noise_sigma);
}

struct NoiseCalibrationOptions {
  int ensemble = 64;
  double rel_tol = 0.01;
  int max_iterations = 100;
  std::uint64_t seed = 0;
};

namespace detail {

/// Ensemble-median residual metric of synthetic traces at noise level sigma.
/// Member i always uses the same random stream, so the result is monotone in sigma.
inline double synthetic_metric(const ResonatorParams& params, std::span<const double> freqs,
                               double sigma, int ensemble, std::uint64_t seed) {
  std::vector<double> m(static_cast<std::size_t>(ensemble));
  parallel_for(m.size(), [&](std::size_t i) {
    Rng rng(derive_seed(seed, 3, i));
    auto t = synth_trace(params, {}, freqs, sigma, rng);
    m[i] = fit_hanger(t, params).residual_metric;
  });
  return median(m);
}

}  // namespace detail

/// Finds the additive noise level whose synthetic residual metric (ensemble
/// median) matches the baseline trace's measured metric to within rel_tol.
inline double calibrate_noise(const Trace& baseline, const FitResult& fit,
                              const NoiseCalibrationOptions& opt = {}) {
  baseline.validate();
  require(opt.ensemble >= 1 && opt.rel_tol > 0, "calibrate_noise: invalid options");
  const double measured = residual_metric(baseline, fit.params);
  if (measured <= 1e-24) return 0.0;
  auto synthetic = [&](double sigma) {
    return detail::synthetic_metric(fit.params, baseline.freqs, sigma, opt.ensemble, opt.seed);
  };

  double mag = 0;
  for (const auto& z : baseline.s21) mag += std::abs(z);
  mag /= static_cast<double>(baseline.size());
  double lo = 0.0, hi = std::sqrt(measured * mag / 2.0) * 1.5;
  int it = 0;
  while (synthetic(hi) < measured) {
    lo = hi;
    hi *= 2;
    if (++it > opt.max_iterations) throw NumericalError("calibrate_noise: cannot bracket noise level");
  }
  for (; it < opt.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double m = synthetic(mid);
    if (std::abs(m - measured) <= opt.rel_tol * measured) return mid;
    (m < measured ? lo : hi) = mid;
  }
  throw NumericalError("calibrate_noise: no agreement within tolerance after max iterations");
}

/// Calibration taken from a user-chosen stretch of the sweep [first, last].
struct IntervalCalibration {
  ResonatorParams params;  // averaged fit parameters
  double noise_sigma = 0.0;
  std::size_t baseline_index = 0;
};

inline IntervalCalibration calibrate_interval(const SweepDataset& sweep, std::size_t first,
                                              std::size_t last,
                                              const NoiseCalibrationOptions& opt = {}) {
  require(first <= last && last < sweep.size(), "calibration interval outside the sweep");
  std::vector<std::size_t> idx;
  for (std::size_t i = first; i <= last; ++i)
    if (sweep.usable(i)) idx.push_back(i);
  require(!idx.empty(), "calibration interval has no usable fits");
  std::vector<double> metrics;
  for (auto i : idx) metrics.push_back(sweep.fits[i].residual_metric);
  const double med = median(metrics);
  const double mx = *std::max_element(metrics.begin(), metrics.end());
  require(mx < 2.0 * med, "calibration interval is not flat (max/median residual >= 2)");

  IntervalCalibration out;
  ResonatorParams avg{};
  avg.f_r = avg.Q_l = avg.Q_e_mag = avg.A = avg.alpha = avg.phi_v = 0.0;
  cplx theta_u(0, 0), phi_u(0, 0);
  for (auto i : idx) {
    const auto& p = sweep.fits[i].params;
    avg.f_r += p.f_r;
    avg.Q_l += p.Q_l;
    avg.Q_e_mag += p.Q_e_mag;
    avg.A += p.A;
    avg.alpha += p.alpha;
    avg.phi_v += p.phi_v;
    theta_u += std::polar(1.0, p.theta);
    phi_u += std::polar(1.0, p.phi_v * p.f_r + p.phi_0);  // phase at resonance
  }
  const double n = static_cast<double>(idx.size());
  avg.f_r /= n;
  avg.Q_l /= n;
  avg.Q_e_mag /= n;
  avg.A /= n;
  avg.alpha /= n;
  avg.phi_v /= n;
  avg.theta = std::arg(theta_u);
  avg.phi_0 = std::arg(phi_u) - avg.phi_v * avg.f_r;
  out.params = avg;

  std::size_t pick = idx.front();
  for (auto i : idx)
    if (std::abs(sweep.fits[i].residual_metric - med) <
        std::abs(sweep.fits[pick].residual_metric - med))
      pick = i;
  out.baseline_index = pick;
  out.noise_sigma = calibrate_noise(sweep.traces[pick], sweep.fits[pick], opt);
  return out;
}

struct DetectionEvent {
  double shift_position = 0.0;  // kappa units
  double peak_residual = 0.0;
  double bias_current = 0.0;    // mA
  double frequency = 0.0;       // GHz
};

/// Smooths the series (Savitzky-Golay, window 5, order 1) and reports every
/// five-point window whose centre exceeds the threshold with both flanks
/// strictly decreasing outward. Events closer than `merge_radius` (kappa units)
/// keep only the higher peak. Windows touching excluded points are skipped.
inline std::vector<DetectionEvent> find_peaks(const ResidualSeries& series, double threshold,
                                              double merge_radius = 1.0) {
  if (series.size() < 5) throw ValidationError("find_peaks: series shorter than 5 points");
  const auto y = savgol_filter(series.residual, 5, 1);
  std::vector<DetectionEvent> raw;
  for (std::size_t i = 2; i + 2 < y.size(); ++i) {
    bool skip = false;
    for (std::size_t j = i - 2; j <= i + 2; ++j) skip = skip || series.excluded[j];
    if (skip) continue;
    if (y[i] > threshold && y[i - 1] < y[i] && y[i - 2] < y[i - 1] && y[i + 1] < y[i] &&
        y[i + 2] < y[i + 1])
      raw.push_back({series.shift[i], y[i], series.bias[i], series.freq[i]});
  }
  std::vector<DetectionEvent> merged;
  for (const auto& e : raw) {
    if (!merged.empty() && e.shift_position - merged.back().shift_position < merge_radius) {
      if (e.peak_residual > merged.back().peak_residual) merged.back() = e;
    } else {
      merged.push_back(e);
    }
  }
  return merged;
}

}  // namespace jjtls
