#pragma once
// Declarative synthetic experiments and the virtual instrument that measures them.

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "jjtls/config.hpp"
#include "jjtls/resonator.hpp"

namespace jjtls {

/// A resonator on its flux parabola with a set of planted defects.
/// `resonator.f_r` is the zero-detuning frequency and always equals
/// `flux.f_bare`; the tuned frequency comes from the bias.
struct Scenario {
  ResonatorParams resonator;
  FluxConfig flux;
  std::vector<TLSDefect> defects;
  double noise_sigma = 0.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    resonator.validate();
    flux.validate();
    require(noise_sigma >= 0 && std::isfinite(noise_sigma), "scenario: noise_sigma must be >= 0");
    const double res = resonator.kappa() / 4.0;
    for (std::size_t i = 0; i < defects.size(); ++i) {
      defects[i].validate();
      for (std::size_t j = 0; j < i; ++j)
        require(std::abs(defects[i].f_tls - defects[j].f_tls) >= res,
                "scenario: planted defects closer than kappa/4");
    }
  }

  /// Resonator parameters at a given bias.
  ResonatorParams tuned(double bias_current) const {
    ResonatorParams p = resonator;
    p.f_r = flux_to_freq(flux, bias_current * flux.flux_per_current);
    return p;
  }

  static Scenario from_config(const KeyValueFile& kv) {
    kv.check_keys({"Q_l", "Q_e", "theta", "A", "alpha", "phi_v", "phi_0", "f_bare",
                   "n_islands", "m_trapped", "flux_per_current", "noise_sigma", "seed",
                   "defect"});
    Scenario s;
    s.flux.f_bare = kv.get_double("f_bare");
    s.flux.n_islands = static_cast<int>(kv.get_int("n_islands"));
    s.flux.m_trapped = static_cast<int>(kv.get_int("m_trapped", 0));
    s.flux.flux_per_current = kv.get_double("flux_per_current");
    s.resonator.f_r = s.flux.f_bare;
    s.resonator.Q_l = kv.get_double("Q_l");
    s.resonator.Q_e_mag = kv.get_double("Q_e");
    s.resonator.theta = kv.get_double("theta", 0.0);
    s.resonator.A = kv.get_double("A", 1.0);
    s.resonator.alpha = kv.get_double("alpha", 0.0);
    s.resonator.phi_v = kv.get_double("phi_v", 0.0);
    s.resonator.phi_0 = kv.get_double("phi_0", 0.0);
    s.noise_sigma = kv.get_double("noise_sigma");
    const auto seed = kv.get_int("seed");
    require(seed >= 0, kv.origin() + ": seed must be non-negative");
    s.rng_seed = static_cast<std::uint64_t>(seed);
    for (const auto& row : kv.get_rows("defect")) {
      require(row.size() == 4, kv.origin() + ": defect expects `f_GHz g_GHz gamma_GHz T_K`");
      s.defects.push_back({row[0], row[1], row[2], row[3]});
    }
    s.validate();
    return s;
  }

  static Scenario load(const std::string& path) { return from_config(KeyValueFile::load(path)); }
};

inline constexpr const char* kScenarioSchema = R"(scenario file (key = value, '#' comments)
  Q_l = <loaded quality factor>
  Q_e = <|external quality factor|>
  theta = <impedance mismatch phase, rad>          default 0
  A = <off-resonant amplitude>                     default 1
  alpha = <amplitude slope>                        default 0
  phi_v = <phase slope, rad/GHz>                   default 0
  phi_0 = <phase offset, rad>                      default 0
  f_bare = <bare resonator frequency, GHz>
  n_islands = <array length N>
  m_trapped = <trapped flux quanta>                default 0
  flux_per_current = <flux quanta per mA>
  noise_sigma = <per-quadrature noise std>
  seed = <non-negative integer>
  defect = <f_GHz> <g_GHz> <gamma_GHz> <T_K>      repeat per defect
)";

/// Emulates one VNA sweep at `bias_current`, centred at `f_center`.
inline Trace virtual_measure(const Scenario& sc, double bias_current, double f_center,
                             double span, int n_points, Rng& rng) {
  require(span > 0, "virtual_measure: span must be > 0");
  require(n_points >= 16, "virtual_measure: need at least 16 points");
  const auto p = sc.tuned(bias_current);
  std::vector<TLSDefect> nearby;
  for (const auto& d : sc.defects)
    if (std::abs(d.f_tls - p.f_r) <= span / 2) nearby.push_back(d);
  const auto grid = linear_grid(f_center, span, n_points);
  auto t = synth_trace(p, nearby, grid, sc.noise_sigma, rng);
  t.bias_current = bias_current;
  return t;
}

}  // namespace jjtls
