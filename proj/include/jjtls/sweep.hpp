#pragma once
// End-to-end detection over one flux sweep: exclusions, calibration, threshold,
// shift-axis normalisation and peak finding.

#include <cmath>
#include <cstdint>
#include <vector>

#include "jjtls/bayes.hpp"
#include "jjtls/detector.hpp"
#include "jjtls/scenario.hpp"

namespace jjtls {

struct SweepPlan {
  std::vector<double> biases;        // mA, in measurement order
  double f_start = 0.0;              // GHz, first window centre
  double span = 0.0;                 // GHz
  int n_points = 201;
  std::size_t calib_first = 0;       // calibration interval, sweep indices
  std::size_t calib_last = 0;
  std::vector<Exclusion> manual;     // collision intervals
  int ensemble_size = 5000;

  void validate() const {
    require(!biases.empty(), "sweep plan: empty bias plan");
    require(span > 0 && std::isfinite(span), "sweep plan: span must be > 0");
    require(n_points >= 16, "sweep plan: need at least 16 points per trace");
    require(calib_first <= calib_last && calib_last < biases.size(),
            "sweep plan: calibration interval outside the bias plan");
    require(ensemble_size >= 1000, "sweep plan: ensemble_size must be >= 1000");
    for (const auto& e : manual)
      require(e.first <= e.last && e.last < biases.size(),
              "sweep plan: exclusion interval outside the bias plan");
  }
};

inline std::vector<double> bias_range(double start, double stop, int steps) {
  require(steps >= 2, "bias range: need at least 2 steps");
  std::vector<double> b(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) b[i] = start + (stop - start) * i / (steps - 1);
  return b;
}

/// Curve-follows a synthetic scenario with the virtual instrument. Step i
/// draws its noise from its own seed so the sweep is reproducible.
inline SweepDataset simulate_sweep(const Scenario& sc, const SweepPlan& plan) {
  sc.validate();
  plan.validate();
  std::size_t step = 0;
  Instrument inst = [&](double bias, double center, double span, int n) {
    Rng rng(derive_seed(sc.rng_seed, 10, step++));
    return virtual_measure(sc, bias, center, span, n, rng);
  };
  return curve_follow(inst, plan.biases, plan.f_start, plan.span, plan.n_points);
}

struct DetectionRun {
  SweepDataset sweep;
  IntervalCalibration interval;
  DetectorCalibration calibration;
  ResidualSeries series;
  std::vector<DetectionEvent> events;
  double delta_f = 0.0;  // swept range outside exclusions (GHz)
  int bins = 0;

  InferenceInput inference_input() const {
    return {static_cast<int>(events.size()), bins, true_rates(calibration.fp, calibration.fn)};
  }
};

/// Runs the detector on an already fitted sweep.
inline DetectionRun detect(SweepDataset sweep, const SweepPlan& plan, std::uint64_t seed) {
  plan.validate();
  require(sweep.size() == plan.biases.size(), "detect: sweep and bias plan differ in length");
  DetectionRun run;
  run.sweep = apply_exclusions(std::move(sweep), plan.manual);
  NoiseCalibrationOptions nopt;
  nopt.seed = derive_seed(seed, 20, 0);
  run.interval = calibrate_interval(run.sweep, plan.calib_first, plan.calib_last, nopt);
  CalibrationWindow win{plan.span, plan.n_points};
  run.calibration = build_threshold(run.interval.params, run.interval.noise_sigma,
                                    plan.ensemble_size, win, derive_seed(seed, 21, 0));
  run.series = normalize_axis(run.sweep);
  run.events = find_peaks(run.series, run.calibration.threshold);
  run.delta_f = run.series.included_range();
  run.bins = static_cast<int>(std::floor(run.delta_f / run.series.kappa + 1e-9));
  if (run.bins < static_cast<int>(run.events.size()))
    throw NumericalError("detect: more events than linewidth bins");
  return run;
}

}  // namespace jjtls
