#pragma once
// Seeded closed-loop scenarios: a resonator swept along one branch of its flux
// parabola, with strongly coupled defects planted inside the swept band.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "jjtls/sweep.hpp"

namespace jjtls::testing {

struct ClosedLoopCase {
  Scenario scenario;
  SweepPlan plan;
  std::vector<double> planted;  // GHz
  double kappa = 0.0;
};

struct ClosedLoopOptions {
  int n_plants = 0;
  double snr = 20.0;         // dip depth over per-quadrature noise
  double min_coop = 4.0;
  double max_coop = 8.0;
  int steps = 560;
  int ensemble_size = 1000;
};

/// Base resonator; the dip depth is A * Q_l / |Q_e| = 0.45.
inline ResonatorParams closed_loop_resonator() {
  ResonatorParams p;
  p.f_r = 6.0;
  p.Q_l = 5000;
  p.Q_e_mag = 10000;
  p.theta = 0.1;
  p.A = 0.9;
  p.alpha = 0.2;
  p.phi_v = -5.0;
  p.phi_0 = 1.0;
  return p;
}

inline ClosedLoopCase make_closed_loop(std::uint64_t seed, const ClosedLoopOptions& opt) {
  ClosedLoopCase c;
  Scenario& sc = c.scenario;
  sc.resonator = closed_loop_resonator();
  sc.flux = {6.0, 10, 0, 1.0};
  const double depth = sc.resonator.A * sc.resonator.Q_l / sc.resonator.Q_e_mag;
  sc.noise_sigma = depth / opt.snr;
  sc.rng_seed = seed;

  // bias 0.5 -> 0.225 mA sweeps roughly 5.85 -> 5.97 GHz, below the maximum
  c.plan.biases = bias_range(0.5, 0.225, opt.steps);
  const double f_lo = sc.tuned(c.plan.biases.front()).f_r;
  const double f_hi = sc.tuned(c.plan.biases.back()).f_r;
  c.kappa = sc.tuned(c.plan.biases.front()).kappa();
  c.plan.f_start = f_lo;
  c.plan.span = 10 * c.kappa;
  c.plan.n_points = 201;
  c.plan.calib_first = 0;
  c.plan.calib_last = 19;
  c.plan.ensemble_size = opt.ensemble_size;

  // defects stay clear of the calibration stretch and of the sweep ends
  const double lo = sc.tuned(c.plan.biases[40]).f_r + 5 * c.kappa;
  const double hi = f_hi - 8 * c.kappa;
  Rng rng(derive_seed(seed, 99, 0));
  std::uniform_real_distribution<double> uf(lo, hi), uc(opt.min_coop, opt.max_coop),
      ug(0.6, 1.0);
  while (static_cast<int>(c.planted.size()) < opt.n_plants) {
    const double f = uf(rng);
    bool clash = false;
    for (double q : c.planted) clash = clash || std::abs(q - f) < 6 * c.kappa;
    if (clash) continue;
    c.planted.push_back(f);
  }
  std::sort(c.planted.begin(), c.planted.end());
  for (double f : c.planted) {
    const double k = f / sc.resonator.Q_l;
    const double gamma = ug(rng) * k;
    const double coop = uc(rng);
    const double g = 0.5 * std::sqrt(coop * k * gamma);
    sc.defects.push_back({f, g, gamma, 0.010});
  }
  return c;
}

}  // namespace jjtls::testing
