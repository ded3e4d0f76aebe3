#include <gtest/gtest.h>

#include <algorithm>

#include "jjtls/fitting.hpp"

namespace jjtls {
namespace {

ResonatorParams truth() {
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

Trace make_trace(const ResonatorParams& p, double sigma, std::uint64_t seed, double center_offset = 0.0,
                 int n = 201, double span_kappa = 20.0) {
  Rng rng(seed);
  auto grid = linear_grid(p.f_r + center_offset * p.kappa(), span_kappa * p.kappa(), n);
  return synth_trace(p, {}, grid, sigma, rng);
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

TEST(BackgroundSplit, CoversDipCenter) {
  auto t = make_trace(truth(), 0.005, 1);
  auto s = background_split(t);
  EXPECT_TRUE(s.resonance_mask[100]);
  EXPECT_FALSE(s.resonance_mask[0]);
  EXPECT_FALSE(s.resonance_mask[200]);
}

TEST(BackgroundSplit, MasksPartitionAndAreContiguous) {
  for (double off : {-9.0, -4.0, 0.0, 6.0, 9.5}) {
    auto t = make_trace(truth(), 0.003, 7, off);
    auto s = background_split(t);
    int transitions = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      EXPECT_NE(s.resonance_mask[k], s.background_mask[k]);
      if (k > 0 && s.resonance_mask[k] != s.resonance_mask[k - 1]) ++transitions;
    }
    EXPECT_LE(transitions, 2);
    for (std::size_t k = s.first; k <= s.last; ++k) EXPECT_TRUE(s.resonance_mask[k]);
  }
}

TEST(BackgroundSplit, DipAtEdgeClipped) {
  // resonance sits on the last grid point
  auto t = make_trace(truth(), 0.0, 1, -10.0);
  auto s = background_split(t);
  EXPECT_TRUE(s.resonance_mask.back());
  EXPECT_EQ(s.last, t.size() - 1);
}

TEST(BackgroundSplit, FlatTraceHasNoResonance) {
  auto p = truth();
  p.Q_e_mag = 1e15;
  EXPECT_THROW(background_split(make_trace(p, 0.0, 1)), NumericalError);
  for (int s = 0; s < 50; ++s)
    EXPECT_THROW(background_split(make_trace(p, 0.01, s)), NumericalError) << "seed " << s;
}

TEST(BackgroundSplit, NoisyDipStillFound) {
  const auto p = truth();
  const double depth = p.A * p.Q_l / p.Q_e_mag;
  for (int s = 0; s < 50; ++s) {
    auto t = make_trace(p, depth / 8, s);
    EXPECT_NO_THROW(background_split(t)) << "seed " << s;
  }
}

TEST(HangerJacobian, MatchesFiniteDifferences) {
  auto t = make_trace(truth(), 0.01, 3);
  const double fc = 0.5 * (t.freqs.front() + t.freqs.back());
  detail::HangerProblem prob{t.freqs, t.s21, fc};
  auto p = truth();
  p.f_r += 0.3 * p.kappa();
  p.theta = -0.2;
  auto x = detail::HangerProblem::pack(p, fc);
  Eigen::MatrixXd Ja;
  prob.jacobian(x, Ja);
  // per-parameter steps matched to each parameter's natural scale
  const double steps[8] = {1e-4 * p.kappa(), 1e-3, 1e-3, 1e-6, 1e-7, 1e-5, 1e-5, 1e-7};
  Eigen::VectorXd rp(prob.residual_count()), rm(prob.residual_count());
  for (int j = 0; j < 8; ++j) {
    auto xp = x, xm = x;
    xp(j) += steps[j];
    xm(j) -= steps[j];
    prob.residuals(xp, rp);
    prob.residuals(xm, rm);
    const Eigen::VectorXd fd = (rp - rm) / (2 * steps[j]);
    const double scale = Ja.col(j).cwiseAbs().maxCoeff();
    EXPECT_LT((Ja.col(j) - fd).cwiseAbs().maxCoeff(), 1e-5 * scale + 1e-9) << "column " << j;
  }
}

TEST(FitHanger, NoiselessRecovery) {
  const auto p = truth();
  for (double off : {0.0, 2.5, -3.0}) {
    auto fit = fit_hanger(make_trace(p, 0.0, 1, off));
    ASSERT_TRUE(fit.converged);
    EXPECT_LT(rel(fit.params.f_r, p.f_r), 1e-3);
    EXPECT_LT(std::abs(fit.params.f_r - p.f_r), 1e-6 * p.kappa());
    EXPECT_LT(rel(fit.params.Q_l, p.Q_l), 1e-3);
    EXPECT_LT(rel(fit.params.Q_e_mag, p.Q_e_mag), 1e-3);
    EXPECT_LT(rel(fit.params.theta, p.theta), 1e-3);
    EXPECT_LT(fit.residual_metric, 1e-20);
  }
}

TEST(FitHanger, InitAtTruthConvergesImmediately) {
  const auto p = truth();
  auto fit = fit_hanger(make_trace(p, 0.0, 1), p);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 3);
  EXPECT_LT(fit.residual_metric, 1e-20);
}

TEST(FitHanger, Snr20MedianFrequencyError) {
  const auto p = truth();
  const double depth = p.A * p.Q_l / p.Q_e_mag;
  std::vector<double> err;
  for (int s = 0; s < 100; ++s) {
    auto fit = fit_hanger(make_trace(p, depth / 20, 1000 + s));
    EXPECT_TRUE(fit.converged);
    err.push_back(std::abs(fit.params.f_r - p.f_r));
  }
  EXPECT_LT(median(err), p.kappa() / 50);
}

TEST(FitHanger, GlobalPhaseInvariance) {
  const auto p = truth();
  auto t = make_trace(p, 0.01, 5);
  auto rotated = t;
  const cplx rot = std::polar(1.0, 1.3);
  for (auto& z : rotated.s21) z *= rot;
  auto a = fit_hanger(t);
  auto b = fit_hanger(rotated);
  EXPECT_LT(rel(a.params.f_r, b.params.f_r), 1e-6);
  EXPECT_LT(rel(a.params.Q_l, b.params.Q_l), 1e-6);
  EXPECT_LT(rel(a.params.Q_e_mag, b.params.Q_e_mag), 1e-6);
  EXPECT_NEAR(std::remainder(b.params.phi_0 - a.params.phi_0 - 1.3, 2 * constants::pi), 0.0, 1e-5);
}

TEST(FitHanger, ErrorShrinksWithNoise) {
  const auto p = truth();
  std::vector<double> med;
  for (double sigma : {0.02, 0.01, 0.005}) {
    std::vector<double> err;
    for (int s = 0; s < 60; ++s)
      err.push_back(std::abs(fit_hanger(make_trace(p, sigma, 500 + s)).params.f_r - p.f_r));
    med.push_back(median(err));
  }
  EXPECT_GT(med[0], med[1]);
  EXPECT_GT(med[1], med[2]);
}

TEST(FitHanger, NoResonanceWithoutInitThrows) {
  auto p = truth();
  p.Q_e_mag = 1e15;
  EXPECT_THROW(fit_hanger(make_trace(p, 0.0, 1)), NumericalError);
}

TEST(ResidualMetric, Basics) {
  auto t = make_trace(truth(), 0.0, 1);
  EXPECT_EQ(residual_metric(t, truth()), 0.0);

  auto noisy = make_trace(truth(), 0.02, 2);
  const auto model = hanger_model(truth(), noisy.freqs);
  const double base = residual_metric(noisy.s21, model);
  auto shifted = model;
  for (auto& z : shifted) z += cplx(0.3, -0.1);
  auto shifted_data = noisy.s21;
  for (auto& z : shifted_data) z += cplx(0.3, -0.1);
  // offset on the model only: variance unchanged, denominator unchanged
  EXPECT_NEAR(residual_metric(noisy.s21, shifted), base, 1e-15);
  // offset on both: the deviations are identical
  double mag0 = 0, mag1 = 0;
  for (std::size_t k = 0; k < model.size(); ++k) {
    mag0 += std::abs(noisy.s21[k]);
    mag1 += std::abs(shifted_data[k]);
  }
  EXPECT_NEAR(residual_metric(shifted_data, shifted) * mag1, base * mag0, 1e-12);

  std::vector<cplx> zeros(20, cplx(0, 0));
  EXPECT_THROW(residual_metric(zeros, zeros), NumericalError);
  std::vector<cplx> one(3);
  EXPECT_THROW(residual_metric(one, zeros), ValidationError);
}

TEST(EstimateSnr, NoiselessIsCapped) {
  EXPECT_EQ(estimate_snr(make_trace(truth(), 0.0, 1)), 1e12);
}

TEST(EstimateSnr, MatchesConstruction) {
  auto p = truth();
  p.A = 1.0;
  p.alpha = 0.0;
  // dip depth 0.5, sigma 0.01 -> SNR 50
  const double snr = estimate_snr(make_trace(p, 0.01, 11));
  EXPECT_NEAR(snr, 50.0, 0.15 * 50);
}

TEST(EstimateSnr, DoublingNoiseHalves) {
  auto p = truth();
  std::vector<double> a, b;
  for (int s = 0; s < 100; ++s) {
    a.push_back(estimate_snr(make_trace(p, 0.01, 100 + s)));
    b.push_back(estimate_snr(make_trace(p, 0.02, 100 + s)));
  }
  EXPECT_NEAR(median(b) / median(a), 0.5, 0.1);
}

TEST(FluxParabola, ExactQuadratic) {
  std::vector<double> I{-1.0, -0.3, 0.2, 0.7, 1.5, 2.0};
  std::vector<double> f;
  for (double x : I) f.push_back(-0.004 * x * x + 0.0123 * x + 6.2);
  auto q = fit_flux_parabola(I, f);
  EXPECT_NEAR(q.a, -0.004, 1e-10);
  EXPECT_NEAR(q.b, 0.0123, 1e-10);
  EXPECT_NEAR(q.c, 6.2, 1e-10);
  EXPECT_NEAR(q.slope(1.0), -0.008 + 0.0123, 1e-10);
}

TEST(FluxParabola, ExactFluxCurveNearMaximum) {
  FluxConfig cfg{8.0, 100, 0, 1.0};
  std::vector<double> I, f;
  for (int k = 0; k <= 40; ++k) {
    I.push_back(-1.0 + 0.05 * k);
    f.push_back(flux_to_freq(cfg, I.back()));
  }
  auto q = fit_flux_parabola(I, f);
  for (std::size_t k = 0; k < I.size(); ++k) EXPECT_LT(std::abs(q(I[k]) - f[k]), 1e-4 * cfg.f_bare);
}

TEST(FluxParabola, Degenerate) {
  std::vector<double> two{1.0, 2.0}, f2{6.0, 6.1};
  EXPECT_THROW(fit_flux_parabola(two, f2), ValidationError);
  std::vector<double> same{1.0, 1.0, 1.0}, f3{6.0, 6.1, 6.2};
  EXPECT_THROW(fit_flux_parabola(same, f3), ValidationError);
  std::vector<double> pair{1.0, 1.0, 2.0, 2.0}, f4{6.0, 6.0, 6.1, 6.1};
  EXPECT_THROW(fit_flux_parabola(pair, f4), ValidationError);
}

}  // namespace
}  // namespace jjtls
