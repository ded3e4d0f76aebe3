#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "jjtls/resonator.hpp"
#include "jjtls/scenario.hpp"

namespace jjtls {
namespace {

ResonatorParams simple_params() {
  ResonatorParams p;
  p.f_r = 6.0;
  p.Q_l = 5000;
  p.Q_e_mag = 10000;
  return p;
}

TEST(HangerS21, OnResonanceDip) {
  auto p = simple_params();
  const cplx s = hanger_s21(p, p.f_r);
  EXPECT_NEAR(s.real(), 0.5, 1e-15);
  EXPECT_NEAR(s.imag(), 0.0, 1e-15);
}

TEST(HangerS21, DecoupledResonatorIsBackground) {
  auto p = simple_params();
  p.Q_e_mag = 1e15;
  p.A = 0.8;
  p.alpha = 0.3;
  p.phi_v = -12.0;
  p.phi_0 = 0.4;
  for (double x : {-10.0, -1.0, 0.0, 0.3, 10.0}) {
    const double f = p.f_r + x * p.kappa();
    EXPECT_LT(std::abs(hanger_s21(p, f) - background_factor(p, f)), 1e-9);
  }
}

TEST(HangerS21, LorentzianTail) {
  auto p = simple_params();
  const double f = p.f_r + 50 * p.kappa();
  // analytic tail magnitude 0.5 / sqrt(1 + 100^2) ~ 0.0049999
  EXPECT_LT(std::abs(hanger_s21(p, f) - background_factor(p, f)), 0.006);
  EXPECT_NEAR(std::abs(hanger_s21(p, f) - background_factor(p, f)), 0.5 / std::sqrt(1 + 1e4), 1e-12);
}

TEST(HangerS21, NonFiniteRejected) {
  auto p = simple_params();
  p.A = std::nan("");
  EXPECT_THROW(hanger_s21(p, 6.0), ValidationError);
  auto q = simple_params();
  q.Q_e_mag = 1000;  // 1/Q_i = 1/Q_l - 1/|Q_e| < 0
  EXPECT_THROW(q.validate(), ValidationError);
}

TEST(HangerS21, ConvergesToBackgroundSupNorm) {
  auto p = simple_params();
  p.Q_e_mag = 1e12;
  double sup = 0;
  for (int k = -1000; k <= 1000; ++k) {
    const double f = p.f_r + 0.01 * k * p.kappa();
    sup = std::max(sup, std::abs(hanger_s21(p, f) - background_factor(p, f)));
  }
  EXPECT_LT(sup, 1e-6);
}

TEST(TlsS21, ZeroCouplingMatchesHanger) {
  auto p = simple_params();
  p.theta = 0.2;
  p.A = 0.9;
  p.alpha = 0.5;
  p.phi_v = 3.0;
  p.phi_0 = -1.0;
  TLSDefect d{6.0001, 0.0, 1e-3, 0.01};
  for (int k = -50; k <= 50; ++k) {
    const double f = p.f_r + 0.2 * k * p.kappa();
    EXPECT_LT(std::abs(tls_s21(p, d, f) - hanger_s21(p, f)), 1e-12);
  }
}

TEST(TlsS21, DispersiveLimit) {
  auto p = simple_params();
  const double kappa = p.kappa();
  TLSDefect d{p.f_r + 1e4 * kappa, kappa / 2, kappa, 0.01};
  for (int k = -50; k <= 50; ++k) {
    const double f = p.f_r + 0.1 * k * kappa;
    const cplx h = hanger_s21(p, f);
    EXPECT_LT(std::abs(tls_s21(p, d, f) - h) / std::abs(h), 1e-3);
  }
}

// Brute-force search for local minima of |S21| on a dense grid.
TEST(TlsS21, VacuumRabiSplitting) {
  auto p = simple_params();
  const double kappa = p.kappa();
  const double g = 5 * kappa;
  TLSDefect d{p.f_r, g, kappa, 1e-9};
  std::vector<double> f, mag;
  for (int k = -20000; k <= 20000; ++k) {
    f.push_back(p.f_r + 1e-3 * k * kappa);
    mag.push_back(std::abs(tls_s21(p, d, f.back())));
  }
  std::vector<double> minima;
  for (std::size_t k = 1; k + 1 < mag.size(); ++k)
    if (mag[k] < mag[k - 1] && mag[k] < mag[k + 1]) minima.push_back(f[k]);
  ASSERT_EQ(minima.size(), 2u);
  EXPECT_NEAR(minima[1] - minima[0], 2 * g, 0.05 * 2 * g);
  // avoided-crossing symmetry about the common frequency
  EXPECT_NEAR(minima[0] + minima[1], 2 * p.f_r, 1e-3 * kappa);
}

TEST(ThermalPopulation, Limits) {
  EXPECT_NEAR(thermal_population(5.0, 1e-9), 1.0, 1e-12);
  EXPECT_NEAR(thermal_population(5.0, 0.010), 1.0, 1e-10);
  // hbar omega = k_B T
  const double T = 1.0;
  const double f = constants::k_B * T / (constants::hbar * 2 * constants::pi) / 1e9;
  EXPECT_NEAR(thermal_population(f, T), 0.7615941559557649, 1e-12);
  EXPECT_NEAR(thermal_population(f, T, ThermalConvention::Conventional), std::tanh(0.5), 1e-12);
  EXPECT_THROW(thermal_population(5.0, 0.0), ValidationError);
  EXPECT_THROW(thermal_population(5.0, -1.0), ValidationError);
}

TEST(ThermalPopulation, BoundedAndMonotone) {
  double prev = 2.0;
  for (double T = 1e-3; T < 100; T *= 1.3) {
    const double s = thermal_population(5.0, T);
    EXPECT_GT(s, 0.0);
    EXPECT_LE(s, 1.0);
    EXPECT_LE(s, prev);
    prev = s;
  }
}

TEST(FluxToFreq, ExactForm) {
  FluxConfig cfg{8.0, 100, 0, 1.0};
  EXPECT_EQ(flux_to_freq(cfg, 0.0), 8.0);
  EXPECT_NEAR(flux_to_freq(cfg, 1.0), 7.99212, 1e-5);
  EXPECT_NEAR(flux_to_freq(cfg, 1.0), 7.9921159863754205, 1e-13);
  cfg.m_trapped = 3;
  EXPECT_EQ(flux_to_freq(cfg, 3.0), 8.0);
  for (double d : {0.1, 0.7, 2.5, 13.0}) {
    EXPECT_EQ(flux_to_freq(cfg, 3.0 + d), flux_to_freq(cfg, 3.0 - d));
    EXPECT_LT(flux_to_freq(cfg, 3.0 + d), 8.0);
  }
}

TEST(FluxToFreq, QuadraticAgreesNearMaximum) {
  for (int N : {10, 100, 400}) {
    FluxConfig cfg{6.0, N, 1, 1.0};
    const double lim = 0.05 * N / constants::pi;
    for (int k = -50; k <= 50; ++k) {
      const double flux = 1.0 + lim * k / 50.0;
      const double e = flux_to_freq(cfg, flux);
      const double q = flux_to_freq(cfg, flux, FluxModel::Quadratic);
      EXPECT_LT(std::abs(e - q) / e, 1e-3);
    }
  }
}

TEST(SynthTrace, NoiselessEqualsModel) {
  auto p = simple_params();
  auto grid = linear_grid(p.f_r, 20 * p.kappa(), 201);
  Rng rng(1);
  auto t = synth_trace(p, {}, grid, 0.0, rng);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_EQ(t.s21[k], hanger_s21(p, grid[k]));
}

TEST(SynthTrace, NoiseLevel) {
  auto p = simple_params();
  auto grid = linear_grid(p.f_r, 20 * p.kappa(), 10000);
  Rng rng(42);
  auto t = synth_trace(p, {}, grid, 0.01, rng);
  double sr = 0, si = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const cplx d = t.s21[k] - hanger_s21(p, grid[k]);
    sr += d.real() * d.real();
    si += d.imag() * d.imag();
  }
  // std of the sample std for n = 1e4 is ~0.7%; 3% is > 4 sigma
  EXPECT_NEAR(std::sqrt(sr / grid.size()), 0.01, 0.0003);
  EXPECT_NEAR(std::sqrt(si / grid.size()), 0.01, 0.0003);
}

TEST(SynthTrace, DeterministicAndValidated) {
  auto p = simple_params();
  auto grid = linear_grid(p.f_r, 20 * p.kappa(), 101);
  Rng a(9), b(9);
  auto t1 = synth_trace(p, {}, grid, 0.02, a);
  auto t2 = synth_trace(p, {}, grid, 0.02, b);
  EXPECT_EQ(t1.s21, t2.s21);
  std::vector<double> empty;
  EXPECT_THROW(synth_trace(p, {}, empty, 0.0, a), ValidationError);
  std::vector<double> bad{1.0, 0.5};
  EXPECT_THROW(synth_trace(p, {}, bad, 0.0, a), ValidationError);
}

TEST(SynthTrace, OnlyNearestDefectCouples) {
  auto p = simple_params();
  const double k = p.kappa();
  std::vector<TLSDefect> ds{{p.f_r + 30 * k, k, k, 0.01}, {p.f_r + 2 * k, k, k, 0.01}};
  auto grid = linear_grid(p.f_r, 20 * k, 101);
  Rng rng(0);
  auto t = synth_trace(p, ds, grid, 0.0, rng);
  for (std::size_t i = 0; i < grid.size(); ++i)
    EXPECT_EQ(t.s21[i], tls_s21(p, ds[1], grid[i]));
  std::vector<TLSDefect> far{{p.f_r + 30 * k, k, k, 0.01}};
  auto t2 = synth_trace(p, far, grid, 0.0, rng);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(t2.s21[i], hanger_s21(p, grid[i]));
}

TEST(Scenario, ParseAndReject) {
  std::istringstream in(R"(
    Q_l = 5000
    Q_e = 10000
    f_bare = 6.0
    n_islands = 100
    flux_per_current = 0.5
    noise_sigma = 0.01
    seed = 3
    defect = 5.99 0.0006 0.0012 0.01
  )");
  auto sc = Scenario::from_config(KeyValueFile::parse(in, "mem"));
  EXPECT_EQ(sc.defects.size(), 1u);
  EXPECT_DOUBLE_EQ(sc.tuned(0.0).f_r, 6.0);
  EXPECT_LT(sc.tuned(1.0).f_r, 6.0);

  std::istringstream clash(R"(
    Q_l = 5000
    Q_e = 10000
    f_bare = 6.0
    n_islands = 100
    flux_per_current = 0.5
    noise_sigma = 0.01
    seed = 3
    defect = 5.99 0.0006 0.0012 0.01
    defect = 5.9901 0.0006 0.0012 0.01
  )");
  EXPECT_THROW(Scenario::from_config(KeyValueFile::parse(clash, "mem")), ValidationError);
  std::istringstream typo("Q_l = 5000\nQe = 1\n");
  EXPECT_THROW(Scenario::from_config(KeyValueFile::parse(typo, "mem")), ValidationError);
}

TEST(VirtualMeasure, RejectsDegenerateRequests) {
  Scenario sc;
  sc.flux = {6.0, 100, 0, 0.5};
  sc.resonator.f_r = 6.0;
  Rng rng(1);
  EXPECT_THROW(virtual_measure(sc, 0.1, 6.0, 0.0, 101, rng), ValidationError);
  EXPECT_THROW(virtual_measure(sc, 0.1, 6.0, 0.01, 8, rng), ValidationError);
  auto t = virtual_measure(sc, 0.1, 6.0, 0.01, 101, rng);
  EXPECT_EQ(t.bias_current, 0.1);
  EXPECT_EQ(t.size(), 101u);
}

}  // namespace
}  // namespace jjtls
