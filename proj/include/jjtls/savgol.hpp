#pragma once
// Savitzky-Golay smoothing and differentiation of uniformly sampled data.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "jjtls/core.hpp"

namespace jjtls {

/// Weights that evaluate the `deriv`-th derivative of the local least-squares
/// polynomial at sample `pos` of a window of length `window` (pos in [0, window)).
inline std::vector<double> savgol_weights(int window, int order, int pos, int deriv = 0) {
  require(window >= 1 && order >= 0 && order < window, "savgol: need order < window");
  require(pos >= 0 && pos < window, "savgol: position outside window");
  const int half = window / 2;
  Eigen::MatrixXd vander(window, order + 1);
  for (int j = 0; j < window; ++j) {
    double x = j - half;
    double p = 1.0;
    for (int k = 0; k <= order; ++k) {
      vander(j, k) = p;
      p *= x;
    }
  }
  Eigen::VectorXd basis = Eigen::VectorXd::Zero(order + 1);
  const double x0 = pos - half;
  for (int k = deriv; k <= order; ++k) {
    double f = 1.0;
    for (int m = 0; m < deriv; ++m) f *= (k - m);
    basis(k) = f * std::pow(x0, k - deriv);
  }
  // weights = V (V^T V)^{-1} basis
  Eigen::MatrixXd gram = vander.transpose() * vander;
  Eigen::VectorXd sol = gram.ldlt().solve(basis);
  Eigen::VectorXd w = vander * sol;
  return {w.data(), w.data() + window};
}

/// Applies a Savitzky-Golay filter. Edges are handled by evaluating the
/// polynomial fitted to the first (last) full window, so output length equals
/// input length. `delta` is the sample spacing used to scale derivatives.
inline std::vector<double> savgol_filter(std::span<const double> y, int window, int order,
                                         int deriv = 0, double delta = 1.0) {
  require(window % 2 == 1, "savgol: window must be odd");
  const int n = static_cast<int>(y.size());
  require(n >= window, "savgol: series shorter than window");
  const int half = window / 2;
  std::vector<double> out(y.size());
  const double scale = std::pow(delta, -deriv);
  auto center = savgol_weights(window, order, half, deriv);
  for (int i = half; i < n - half; ++i) {
    double s = 0.0;
    for (int j = 0; j < window; ++j) s += center[j] * y[i - half + j];
    out[i] = s * scale;
  }
  for (int pos = 0; pos < half; ++pos) {
    auto wl = savgol_weights(window, order, pos, deriv);
    auto wr = savgol_weights(window, order, window - 1 - pos, deriv);
    double sl = 0.0, sr = 0.0;
    for (int j = 0; j < window; ++j) {
      sl += wl[j] * y[j];
      sr += wr[j] * y[n - window + j];
    }
    out[pos] = sl * scale;
    out[n - 1 - pos] = sr * scale;
  }
  return out;
}

/// Centered moving-window variance (population). The window shrinks at the edges.
inline std::vector<double> moving_variance(std::span<const double> y, int window) {
  const int n = static_cast<int>(y.size());
  const int half = window / 2;
  std::vector<double> out(y.size());
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - half), hi = std::min(n - 1, i + half);
    double m = 0.0;
    for (int j = lo; j <= hi; ++j) m += y[j];
    m /= (hi - lo + 1);
    double v = 0.0;
    for (int j = lo; j <= hi; ++j) v += (y[j] - m) * (y[j] - m);
    out[i] = v / (hi - lo + 1);
  }
  return out;
}

}  // namespace jjtls
