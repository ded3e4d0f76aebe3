#pragma once
// Separating resonance from background, fitting the hanger model, and the
// scalar diagnostics derived from a fit.

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "jjtls/lm.hpp"
#include "jjtls/resonator.hpp"
#include "jjtls/savgol.hpp"

namespace jjtls {

struct BackgroundSplit {
  std::vector<bool> resonance_mask;
  std::vector<bool> background_mask;
  std::size_t first = 0;  // resonance interval [first, last]
  std::size_t last = 0;
};

/// Default filter window: max(11, n/20), forced odd.
inline int default_filter_window(std::size_t n) {
  int w = std::max<int>(11, static_cast<int>(n / 20));
  if (w % 2 == 0) ++w;
  return w;
}

/// Locates the resonance as the contiguous region of strongest variation in the
/// smoothed magnitude response. Throws NumericalError for traces without one.
inline BackgroundSplit background_split(const Trace& trace) {
  trace.validate();
  const std::size_t n = trace.size();
  int w = default_filter_window(n);
  if (static_cast<std::size_t>(w) > n) w = static_cast<int>(n % 2 ? n : n - 1);
  std::vector<double> mag(n);
  for (std::size_t k = 0; k < n; ++k) mag[k] = std::abs(trace.s21[k]);
  const double df = (trace.freqs.back() - trace.freqs.front()) / static_cast<double>(n - 1);
  auto smooth = savgol_filter(mag, w, 2);
  auto deriv = savgol_filter(smooth, w, 2, 1, df);
  auto var = moving_variance(deriv, w);
  auto act = savgol_filter(var, w, 2);

  const auto peak_it = std::max_element(act.begin(), act.end());
  const double peak = *peak_it;
  const double floor_level = median(act);

  // Significance of the dip: largest excursion of the smoothed magnitude from
  // the line through the trace ends, in units of the smoothed-sample noise.
  const std::size_t edge = std::max<std::size_t>(2, n / 20);
  double y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  for (std::size_t k = 0; k < edge; ++k) {
    y0 += smooth[k];
    x0 += trace.freqs[k];
    y1 += smooth[n - 1 - k];
    x1 += trace.freqs[n - 1 - k];
  }
  y0 /= edge, y1 /= edge, x0 /= edge, x1 /= edge;
  double excursion = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double line = y0 + (y1 - y0) * (trace.freqs[k] - x0) / (x1 - x0);
    excursion = std::max(excursion, std::abs(smooth[k] - line));
  }
  std::vector<double> diffs(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) diffs[k] = std::abs(mag[k + 1] - mag[k]);
  const double sigma_mag = median(diffs) / (0.6745 * std::sqrt(2.0));
  const double h0 = savgol_weights(w, 2, w / 2)[static_cast<std::size_t>(w / 2)];
  const double mag_scale = mean(mag);
  if (!(peak > 0) || excursion < 1e-9 * mag_scale || excursion < 6.0 * sigma_mag * std::sqrt(h0))
    throw NumericalError("background_split: no resonance found");

  const double cut = floor_level + 0.05 * (peak - floor_level);
  std::size_t c = static_cast<std::size_t>(peak_it - act.begin());
  std::size_t lo = c, hi = c;
  while (lo > 0 && act[lo - 1] > cut) --lo;
  while (hi + 1 < n && act[hi + 1] > cut) ++hi;

  BackgroundSplit out;
  out.resonance_mask.assign(n, false);
  out.background_mask.assign(n, true);
  for (std::size_t k = lo; k <= hi; ++k) {
    out.resonance_mask[k] = true;
    out.background_mask[k] = false;
  }
  out.first = lo;
  out.last = hi;
  return out;
}

/// Var(data - model) / Mean(|data|), with the variance taken over complex
/// deviations (sum of the per-quadrature variances).
inline double residual_metric(std::span<const cplx> data, std::span<const cplx> model) {
  require(data.size() == model.size(), "residual_metric: length mismatch");
  require(!data.empty(), "residual_metric: empty input");
  const double n = static_cast<double>(data.size());
  cplx mu(0.0, 0.0);
  double mag = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    mu += data[k] - model[k];
    mag += std::abs(data[k]);
  }
  mu /= n;
  mag /= n;
  if (!(mag > 1e-300)) throw NumericalError("residual_metric: mean of |data| is zero");
  double v = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) v += std::norm(data[k] - model[k] - mu);
  return v / n / mag;
}

inline std::vector<cplx> hanger_model(const ResonatorParams& p, std::span<const double> freqs) {
  std::vector<cplx> m(freqs.size());
  for (std::size_t k = 0; k < freqs.size(); ++k) m[k] = hanger_s21_unchecked(p, freqs[k]);
  return m;
}

inline double residual_metric(const Trace& trace, const ResonatorParams& p) {
  const auto m = hanger_model(p, trace.freqs);
  return residual_metric(trace.s21, m);
}

struct FitResult {
  ResonatorParams params;
  double residual_metric = 0.0;
  bool converged = false;
  int iterations = 0;
  // f_r, Q_l, Q_e_mag, theta, A, alpha, phi_v, phi_0
  std::array<double, 8> param_uncertainties{};

  /// A finite, physical estimate. A fit stopped at the iteration cap still
  /// qualifies; its residual metric is what flags a defect.
  bool usable() const {
    return params.finite() && std::isfinite(residual_metric) && params.Q_l > 0 &&
           params.Q_e_mag > 0 && params.f_r > 0;
  }
};

namespace detail {

// Internal parameter vector: f_r, Q_l, Q_e, theta, A, alpha, phi_v, phi_c with
// the phase written as phi_v (f - f_c) + phi_c to decorrelate slope and offset.
struct HangerProblem {
  std::span<const double> f;
  std::span<const cplx> s;
  double f_c;

  int parameter_count() const { return 8; }
  int residual_count() const { return static_cast<int>(2 * f.size()); }

  ResonatorParams unpack(const Eigen::VectorXd& x) const {
    ResonatorParams p;
    p.f_r = x(0);
    p.Q_l = x(1);
    p.Q_e_mag = x(2);
    p.theta = x(3);
    p.A = x(4);
    p.alpha = x(5);
    p.phi_v = x(6);
    p.phi_0 = x(7) - x(6) * f_c;
    return p;
  }

  static Eigen::VectorXd pack(const ResonatorParams& p, double f_c) {
    Eigen::VectorXd x(8);
    x << p.f_r, p.Q_l, p.Q_e_mag, p.theta, p.A, p.alpha, p.phi_v, p.phi_0 + p.phi_v * f_c;
    return x;
  }

  cplx model(const Eigen::VectorXd& x, double fk) const {
    const double u = (fk - x(0)) / x(0);
    const cplx e = std::polar(1.0, x(3));
    const cplx R = 1.0 - (x(1) / x(2)) * e / cplx(1.0, 2.0 * x(1) * u);
    return x(4) * (1.0 + x(5) * u) * R * std::polar(1.0, x(6) * (fk - f_c) + x(7));
  }

  void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
    for (std::size_t k = 0; k < f.size(); ++k) {
      const cplx d = model(x, f[k]) - s[k];
      r(2 * k) = d.real();
      r(2 * k + 1) = d.imag();
    }
  }

  void jacobian(const Eigen::VectorXd& x, Eigen::MatrixXd& J) const {
    J.resize(residual_count(), 8);
    const double fr = x(0), Ql = x(1), Qe = x(2), A = x(4), al = x(5);
    const cplx i(0.0, 1.0);
    const cplx e = std::polar(1.0, x(3));
    const double r = Ql / Qe;
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double fk = f[k];
      const double u = (fk - fr) / fr;
      const cplx D(1.0, 2.0 * Ql * u);
      const cplx q = e / D;
      const cplx R = 1.0 - r * q;
      const cplx P = std::polar(1.0, x(6) * (fk - f_c) + x(7));
      const double B = A * (1.0 + al * u);
      const cplx S = B * R * P;
      const cplx dR_du = r * q * (2.0 * i * Ql) / D;
      std::array<cplx, 8> d;
      d[0] = (A * al * R + B * dR_du) * P * (-fk / (fr * fr));
      d[1] = B * P * (-q / Qe + r * q * (2.0 * i * u) / D);
      d[2] = B * P * (r * q / Qe);
      d[3] = B * P * (-i * r * q);
      d[4] = (1.0 + al * u) * R * P;
      d[5] = A * u * R * P;
      d[6] = i * (fk - f_c) * S;
      d[7] = i * S;
      for (int j = 0; j < 8; ++j) {
        J(2 * k, j) = d[j].real();
        J(2 * k + 1, j) = d[j].imag();
      }
    }
  }
};

inline std::vector<double> unwrap(std::span<const double> ph) {
  std::vector<double> out(ph.begin(), ph.end());
  for (std::size_t k = 1; k < out.size(); ++k) {
    double d = out[k] - out[k - 1];
    d -= 2 * constants::pi * std::round(d / (2 * constants::pi));
    out[k] = out[k - 1] + d;
  }
  return out;
}

// Least-squares line y = c0 + c1 (x - x0) over selected indices.
inline std::pair<double, double> line_fit(std::span<const double> x, std::span<const double> y,
                                          const std::vector<std::size_t>& idx, double x0) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto k : idx) {
    const double t = x[k] - x0;
    sx += t;
    sy += y[k];
    sxx += t * t;
    sxy += t * y[k];
  }
  const double n = static_cast<double>(idx.size());
  const double den = n * sxx - sx * sx;
  if (idx.size() < 2 || std::abs(den) < 1e-300) return {sy / std::max(n, 1.0), 0.0};
  const double c1 = (n * sxy - sx * sy) / den;
  return {(sy - c1 * sx) / n, c1};
}

}  // namespace detail

/// Initial parameters from the background/resonance split.
inline ResonatorParams initial_guess(const Trace& trace, const BackgroundSplit& split) {
  const std::size_t n = trace.size();
  const double f_c = 0.5 * (trace.freqs.front() + trace.freqs.back());
  std::vector<std::size_t> bg;
  for (std::size_t k = 0; k < n; ++k)
    if (split.background_mask[k]) bg.push_back(k);
  if (bg.size() < 4) {
    bg.clear();
    for (std::size_t k = 0; k < std::max<std::size_t>(2, n / 10); ++k) {
      bg.push_back(k);
      bg.push_back(n - 1 - k);
    }
  }
  std::vector<double> mag(n), ph(n);
  for (std::size_t k = 0; k < n; ++k) {
    mag[k] = std::abs(trace.s21[k]);
    ph[k] = std::arg(trace.s21[k]);
  }
  ph = detail::unwrap(ph);
  const auto [a0, a1] = detail::line_fit(trace.freqs, mag, bg, f_c);
  const auto [p0, p1] = detail::line_fit(trace.freqs, ph, bg, f_c);

  std::vector<cplx> w(n);
  std::vector<double> w2(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = trace.freqs[k] - f_c;
    const cplx bgk = (a0 + a1 * t) * std::polar(1.0, p1 * t + p0);
    w[k] = 1.0 - trace.s21[k] / bgk;
    w2[k] = std::norm(w[k]);
  }
  int sw = std::min<int>(11, static_cast<int>(n) - (n % 2 == 0 ? 1 : 0));
  if (sw % 2 == 0) --sw;
  auto w2s = savgol_filter(w2, sw, 2);
  std::size_t kmax = split.first;
  for (std::size_t k = split.first; k <= split.last; ++k)
    if (w2s[k] > w2s[kmax]) kmax = k;
  const double half = 0.5 * w2s[kmax];

  auto crossing = [&](int dir) -> std::optional<double> {
    std::ptrdiff_t k = static_cast<std::ptrdiff_t>(kmax);
    while (k + dir >= 0 && k + dir < static_cast<std::ptrdiff_t>(n)) {
      const auto kn = k + dir;
      if (w2s[kn] < half) {
        const double t = (w2s[k] - half) / (w2s[k] - w2s[kn]);
        return trace.freqs[k] + t * (trace.freqs[kn] - trace.freqs[k]);
      }
      k = kn;
    }
    return std::nullopt;
  };
  const double f0 = trace.freqs[kmax];
  const auto left = crossing(-1), right = crossing(+1);
  double fwhm;
  if (left && right)
    fwhm = *right - *left;
  else if (left)
    fwhm = 2 * (f0 - *left);
  else if (right)
    fwhm = 2 * (*right - f0);
  else
    fwhm = 0.1 * (trace.freqs.back() - trace.freqs.front());
  fwhm = std::max(fwhm, 2 * (trace.freqs[1] - trace.freqs[0]));

  ResonatorParams p;
  p.f_r = f0;
  p.Q_l = f0 / fwhm;
  // Average the dip vector over the central samples to suppress noise.
  cplx wc(0.0, 0.0);
  int cnt = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(trace.freqs[k] - f0) <= 0.1 * fwhm) {
      wc += w[k];
      ++cnt;
    }
  }
  wc = cnt ? wc / static_cast<double>(cnt) : w[kmax];
  const double depth = std::clamp(std::abs(wc), 1e-3, 2.0);
  p.Q_e_mag = p.Q_l / depth;
  p.theta = std::arg(wc);
  p.A = a0 + a1 * (f0 - f_c);
  p.alpha = p.A != 0 ? a1 * f0 / p.A : 0.0;
  p.phi_v = p1;
  p.phi_0 = p0 - p1 * f_c;
  return p;
}

struct FitOptions {
  LMOptions lm;
};

/// Least-squares hanger fit. Never throws for non-convergence; throws
/// NumericalError only when no initial guess is given and no resonance is found.
inline FitResult fit_hanger(const Trace& trace, std::optional<ResonatorParams> init = std::nullopt,
                            const FitOptions& opt = {}) {
  trace.validate();
  if (!init) init = initial_guess(trace, background_split(trace));
  const double f_c = 0.5 * (trace.freqs.front() + trace.freqs.back());
  detail::HangerProblem prob{trace.freqs, trace.s21, f_c};
  auto lm = levenberg_marquardt(prob, detail::HangerProblem::pack(*init, f_c), opt.lm);

  FitResult out;
  out.params = prob.unpack(lm.x);
  out.iterations = lm.iterations;
  // theta is only defined modulo 2 pi
  out.params.theta = std::remainder(out.params.theta, 2 * constants::pi);
  const bool finite = out.params.finite() && std::isfinite(lm.cost);
  out.converged = lm.converged && finite && out.params.Q_l > 0 && out.params.Q_e_mag > 0 &&
                  out.params.f_r > 0;
  if (!finite) {
    out.residual_metric = std::numeric_limits<double>::infinity();
    out.param_uncertainties.fill(std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  out.residual_metric = residual_metric(trace, out.params);

  const int dof = prob.residual_count() - 8;
  const double s2 = dof > 0 ? lm.cost / dof : 0.0;
  Eigen::MatrixXd cov = lm.jtj.completeOrthogonalDecomposition().pseudoInverse() * s2;
  // phi_0 = phi_c - phi_v f_c
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(8, 8);
  T(7, 6) = -f_c;
  Eigen::MatrixXd cov_pub = T * cov * T.transpose();
  for (int j = 0; j < 8; ++j) out.param_uncertainties[j] = std::sqrt(std::max(0.0, cov_pub(j, j)));
  return out;
}

/// Dip depth over background noise. Noiseless traces report 1e12.
inline double estimate_snr(const Trace& trace) {
  const auto split = background_split(trace);
  const auto fit = fit_hanger(trace, initial_guess(trace, split));
  const auto& p = fit.params;
  double noise = 0.0;
  std::size_t nb = 0;
  double depth = 0.0;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const cplx m = hanger_s21_unchecked(p, trace.freqs[k]);
    depth = std::max(depth, std::abs(background_factor(p, trace.freqs[k])) - std::abs(m));
    if (split.background_mask[k]) {
      noise += std::norm(trace.s21[k] - m);
      ++nb;
    }
  }
  if (nb == 0) throw NumericalError("estimate_snr: no background samples");
  noise = std::sqrt(noise / (2.0 * static_cast<double>(nb)));
  constexpr double cap = 1e12;
  if (noise <= depth / cap) return cap;
  return std::min(cap, depth / noise);
}

/// Quadratic resonance frequency versus bias current, f(I) = a I^2 + b I + c.
struct FluxParabola {
  double a = 0, b = 0, c = 0;
  double operator()(double I) const { return (a * I + b) * I + c; }
  double slope(double I) const { return 2 * a * I + b; }
};

inline FluxParabola fit_flux_parabola(std::span<const double> biases, std::span<const double> f0s) {
  require(biases.size() == f0s.size(), "fit_flux_parabola: length mismatch");
  require(biases.size() >= 3, "fit_flux_parabola: need at least 3 points");
  const double m = mean(biases);
  double s = 0.0;
  for (double b : biases) s = std::max(s, std::abs(b - m));
  if (!(s > 0)) throw ValidationError("fit_flux_parabola: rank-deficient design (constant bias)");
  const auto n = static_cast<Eigen::Index>(biases.size());
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = (biases[k] - m) / s;
    X(k, 0) = 1.0;
    X(k, 1) = t;
    X(k, 2) = t * t;
    y(k) = f0s[k];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < 3) throw ValidationError("fit_flux_parabola: rank-deficient design");
  const Eigen::VectorXd c = qr.solve(y);
  FluxParabola p;
  p.a = c(2) / (s * s);
  p.b = c(1) / s - 2 * c(2) * m / (s * s);
  p.c = c(0) - c(1) * m / s + c(2) * m * m / (s * s);
  return p;
}

}  // namespace jjtls
