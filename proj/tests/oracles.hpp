#pragma once
// Independent reference computations used only by the tests. Nothing here
// calls into the code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace jjtls::oracle {

/// Exhaustive enumeration of all 2^B per-bin detection outcomes: bins
/// [0, n_t) hold a defect, the rest are empty. Returns P(count = m) for m in [0, B].
inline std::vector<double> enumerate_detection_counts(int bins, int n_t, double FP, double FN) {
  std::vector<double> out(static_cast<std::size_t>(bins) + 1, 0.0);
  const std::uint32_t total = 1u << bins;
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    double p = 1.0;
    int count = 0;
    for (int b = 0; b < bins; ++b) {
      const bool fired = (mask >> b) & 1u;
      count += fired;
      if (b < n_t)
        p *= fired ? (1.0 - FN) : FN;
      else
        p *= fired ? FP : (1.0 - FP);
    }
    out[count] += p;
  }
  return out;
}

/// Monte Carlo estimate of the per-bin false-positive rate: five i.i.d.
/// residuals, each above threshold with probability fp, counted when they form
/// a symmetric peak (centre maximal, flanks decreasing outward) whose centre
/// exceeds the threshold.
inline double mc_false_positive(double fp, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double thr = 1.0 - fp;
  int hits = 0;
  for (int s = 0; s < samples; ++s) {
    double v[5];
    for (double& x : v) x = u(rng);
    if (v[2] > thr && v[1] < v[2] && v[0] < v[1] && v[3] < v[2] && v[4] < v[3]) ++hits;
  }
  return static_cast<double>(hits) / samples;
}

/// Monte Carlo estimate of the per-bin miss rate: all five residuals of a
/// defect-coupled window fall below threshold (each with probability fn).
inline double mc_false_negative(double fn, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int hits = 0;
  for (int s = 0; s < samples; ++s) {
    bool all_below = true;
    for (int k = 0; k < 5; ++k) all_below = (u(rng) < fn) && all_below;
    hits += all_below;
  }
  return static_cast<double>(hits) / samples;
}

/// Forward simulation of the detection process.
struct ForwardDraw {
  int n_true;
  int n_detected;
};

inline ForwardDraw forward_draw(std::mt19937_64& rng, double lambda, int bins, double FP, double FN) {
  std::poisson_distribution<int> pois(lambda);
  int nt;
  do nt = pois(rng);
  while (nt > bins);
  std::bernoulli_distribution hit(1.0 - FN), alarm(FP);
  int nm = 0;
  for (int b = 0; b < bins; ++b) nm += b < nt ? hit(rng) : alarm(rng);
  return {nt, nm};
}

}  // namespace jjtls::oracle
