#pragma once
// Generative morphology data: three independent latent factors (electrode
// thickness, grain width, junction thickness), each observed through noisy
// summary statistics. Density depends linearly on grain width only.

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jjtls/core.hpp"

namespace jjtls::testing {

inline const std::vector<std::string> kMorphologyColumns = {
    "electrode_thickness_mean", "electrode_thickness_std", "electrode_thickness_rms",
    "grain_width_mean",         "grain_width_std",         "junction_thickness_mean",
    "junction_thickness_std",   "junction_thickness_rms"};

// columns observing the grain-width factor; every other column is a decoy
inline bool is_grain_width_column(std::size_t j) { return j == 3 || j == 4; }

/// True when the most important representative belongs to a cluster that
/// contains a grain-width column.
template <class Report>
bool grain_size_ranked_first(const Report& rep) {
  if (rep.importances.empty()) return false;
  const auto top = rep.importances.front().feature;
  for (const auto& c : rep.selection.clusters)
    if (c.representative == top)
      for (auto m : c.members)
        if (is_grain_width_column(m)) return true;
  return false;
}

struct MorphologyFixture {
  Eigen::MatrixXd features;
  Eigen::VectorXd density;
};

inline MorphologyFixture make_morphology(std::uint64_t seed, int devices = 16,
                                         double density_noise = 0.015) {
  Rng rng(seed);
  std::uniform_real_distribution<double> latent(-1.5, 1.5);
  std::normal_distribution<double> unit(0.0, 1.0);
  MorphologyFixture f;
  f.features.resize(devices, 8);
  f.density.resize(devices);
  for (int i = 0; i < devices; ++i) {
    const double e = latent(rng), g = latent(rng), j = latent(rng);
    auto row = f.features.row(i);
    row(0) = 50 + 15 * e + 2.0 * unit(rng);
    row(1) = 4 + 1.2 * e + 0.2 * unit(rng);
    row(2) = 3 + 0.9 * e + 0.15 * unit(rng);
    row(3) = 80 + 30 * g + 4.0 * unit(rng);
    row(4) = 20 + 6 * g + 1.0 * unit(rng);
    row(5) = 2.0 + 0.3 * j + 0.04 * unit(rng);
    row(6) = 0.3 + 0.08 * j + 0.01 * unit(rng);
    row(7) = 0.4 + 0.1 * j + 0.015 * unit(rng);
    f.density(i) = 0.2 - 0.08 * g + density_noise * unit(rng);
  }
  return f;
}

}  // namespace jjtls::testing
