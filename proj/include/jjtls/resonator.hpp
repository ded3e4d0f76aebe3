#pragma once
// Forward models of a flux-tunable junction-array resonator measured in the
// hanger geometry, with optional coupling to a single two-level defect.
//
// All frequencies are ordinary frequencies in GHz. The response formulas are
// homogeneous in frequency, so the 2*pi between ordinary and angular units only
// enters through the thermal population.

#include <complex>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "jjtls/core.hpp"

namespace jjtls {

using cplx = std::complex<double>;

struct ResonatorParams {
  double f_r = 6.0;        // GHz
  double Q_l = 5000.0;
  double Q_e_mag = 10000.0;
  double theta = 0.0;      // rad
  double A = 1.0;
  double alpha = 0.0;
  double phi_v = 0.0;      // rad / GHz
  double phi_0 = 0.0;      // rad

  double kappa() const { return f_r / Q_l; }
  double inv_Q_i() const { return 1.0 / Q_l - std::cos(theta) / Q_e_mag; }

  bool finite() const {
    const double v[] = {f_r, Q_l, Q_e_mag, theta, A, alpha, phi_v, phi_0};
    return all_finite(v);
  }

  void validate() const {
    require(finite(), "resonator: non-finite parameter");
    require(f_r > 0 && Q_l > 0 && Q_e_mag > 0, "resonator: f_r, Q_l, |Q_e| must be positive");
    require(inv_Q_i() >= 0, "resonator: unphysical parameters (1/Q_i < 0)");
  }
};

struct TLSDefect {
  double f_tls = 6.0;          // GHz
  double g = 0.0;              // GHz, same units as kappa
  double gamma = 1e-3;         // GHz
  double temperature = 0.010;  // K

  void validate() const {
    const double v[] = {f_tls, g, gamma, temperature};
    require(all_finite(v), "tls: non-finite parameter");
    require(g >= 0 && gamma > 0 && temperature > 0, "tls: need g >= 0, gamma > 0, T > 0");
  }

  double cooperativity(const ResonatorParams& p) const {
    return 4.0 * g * g / (p.kappa() * gamma);
  }
};

struct FluxConfig {
  double f_bare = 6.0;            // GHz
  int n_islands = 100;
  int m_trapped = 0;
  double flux_per_current = 1.0;  // flux quanta per mA

  void validate() const {
    require(n_islands >= 1, "flux: n_islands must be >= 1");
    require(f_bare > 0 && std::isfinite(f_bare), "flux: f_bare must be positive");
    require(std::isfinite(flux_per_current), "flux: non-finite flux_per_current");
  }
};

/// A single frequency sweep of complex transmission at fixed bias.
struct Trace {
  std::vector<double> freqs;  // GHz, strictly increasing
  std::vector<cplx> s21;
  double bias_current = 0.0;  // mA

  std::size_t size() const { return freqs.size(); }

  void validate() const {
    require(freqs.size() == s21.size(), "trace: frequency and S21 lengths differ");
    require(freqs.size() >= 16, "trace: need at least 16 points");
    for (std::size_t i = 1; i < freqs.size(); ++i)
      require(freqs[i] > freqs[i - 1], "trace: frequencies must be strictly increasing");
  }
};

/// Background amplitude and phase factor shared by both response models.
inline cplx background_factor(const ResonatorParams& p, double f) {
  const double u = (f - p.f_r) / p.f_r;
  return p.A * (1.0 + p.alpha * u) * std::polar(1.0, p.phi_v * f + p.phi_0);
}

/// Hanger transmission without the finiteness check; used in fit inner loops.
inline cplx hanger_s21_unchecked(const ResonatorParams& p, double f) {
  const double u = (f - p.f_r) / p.f_r;
  const cplx dip = (p.Q_l / p.Q_e_mag) * std::polar(1.0, p.theta) / cplx(1.0, 2.0 * p.Q_l * u);
  return background_factor(p, f) * (1.0 - dip);
}

inline cplx hanger_s21(const ResonatorParams& p, double f) {
  if (!p.finite() || !std::isfinite(f)) throw ValidationError("hanger_s21: non-finite parameter");
  return hanger_s21_unchecked(p, f);
}

enum class ThermalConvention {
  Paper,         // tanh(hbar*omega / (k_B T))
  Conventional,  // tanh(hbar*omega / (2 k_B T))
};

inline double thermal_population(double f_tls_ghz, double temperature,
                                 ThermalConvention conv = ThermalConvention::Paper) {
  if (!(temperature > 0)) throw ValidationError("thermal_population: temperature must be > 0");
  const double omega = 2.0 * constants::pi * f_tls_ghz * 1e9;
  double x = constants::hbar * omega / (constants::k_B * temperature);
  if (conv == ThermalConvention::Conventional) x *= 0.5;
  return std::tanh(x);
}

/// Hanger response with one coupled defect. The pure-resonator part is written in
/// the input-output form; with g = 0 it reduces algebraically to hanger_s21.
inline cplx tls_s21(const ResonatorParams& p, const TLSDefect& tls, double f,
                    ThermalConvention conv = ThermalConvention::Paper) {
  if (!p.finite() || !std::isfinite(f)) throw ValidationError("tls_s21: non-finite parameter");
  tls.validate();
  const double sz = thermal_population(tls.f_tls, tls.temperature, conv);
  const cplx i(0.0, 1.0);
  const cplx chi = tls.g * sz / (tls.f_tls - f + i * sz * tls.gamma / 2.0);
  const cplx inv_Qe = std::polar(1.0 / p.Q_e_mag, p.theta);
  const cplx denom = i * (f - p.f_r) + p.f_r / (2.0 * p.Q_l) + i * tls.g * chi;
  const cplx core = 1.0 - 0.5 * (p.f_r * inv_Qe) / denom;
  return background_factor(p, f) * core;
}

enum class FluxModel { Exact, Quadratic };

/// Resonance frequency versus applied flux (in units of the flux quantum).
inline double flux_to_freq(const FluxConfig& cfg, double flux_quanta,
                           FluxModel model = FluxModel::Exact) {
  cfg.validate();
  const double d = flux_quanta - cfg.m_trapped;
  const double n = cfg.n_islands;
  if (model == FluxModel::Quadratic)
    return cfg.f_bare * (1.0 - constants::pi * constants::pi / (n * n) * d * d);
  const double x = 2.0 * constants::pi / n * d;
  return cfg.f_bare / std::sqrt(1.0 + 0.5 * x * x);
}

/// Only the defect nearest the resonance, and within 10 linewidths of it,
/// couples to a given trace.
inline std::optional<TLSDefect> nearest_defect(const ResonatorParams& p,
                                               std::span<const TLSDefect> defects) {
  std::optional<TLSDefect> best;
  double best_d = 10.0 * p.kappa();
  for (const auto& d : defects) {
    const double dist = std::abs(d.f_tls - p.f_r);
    if (dist <= best_d) {
      best_d = dist;
      best = d;
    }
  }
  return best;
}

inline Trace synth_trace(const ResonatorParams& p, std::span<const TLSDefect> defects,
                         std::span<const double> freq_grid, double noise_sigma, Rng& rng,
                         ThermalConvention conv = ThermalConvention::Paper) {
  require(!freq_grid.empty(), "synth_trace: empty frequency grid");
  for (std::size_t i = 1; i < freq_grid.size(); ++i)
    require(freq_grid[i] > freq_grid[i - 1], "synth_trace: grid must be strictly increasing");
  require(noise_sigma >= 0, "synth_trace: noise_sigma must be >= 0");
  p.validate();
  Trace t;
  t.freqs.assign(freq_grid.begin(), freq_grid.end());
  t.s21.resize(freq_grid.size());
  const auto tls = nearest_defect(p, defects);
  for (std::size_t k = 0; k < freq_grid.size(); ++k)
    t.s21[k] = tls ? tls_s21(p, *tls, freq_grid[k], conv) : hanger_s21(p, freq_grid[k]);
  if (noise_sigma > 0) {
    std::normal_distribution<double> gauss(0.0, noise_sigma);
    for (auto& z : t.s21) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      z += cplx(re, im);
    }
  }
  return t;
}

inline std::vector<double> linear_grid(double center, double span, int n) {
  require(span > 0, "grid: span must be > 0");
  require(n >= 2, "grid: need at least 2 points");
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) g[k] = center - span / 2 + span * k / (n - 1);
  return g;
}

}  // namespace jjtls
