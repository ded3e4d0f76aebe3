#pragma once
// Damped least squares (Levenberg-Marquardt with Marquardt diagonal scaling and
// Nielsen's damping update).
//
// A problem type provides
//   int parameter_count() const;
//   int residual_count() const;
//   void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const;
// and optionally
//   void jacobian(const Eigen::VectorXd& x, Eigen::MatrixXd& J) const;
// Without an analytic Jacobian, central differences are used.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace jjtls {

struct LMOptions {
  int max_iterations = 200;
  double rel_cost_tol = 1e-10;
  double abs_cost_tol = 1e-26;
  double initial_damping = 1e-3;
};

struct LMResult {
  Eigen::VectorXd x;
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd jtj;  // at the solution
};

template <class P>
concept HasJacobian = requires(const P& p, const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
  p.jacobian(x, J);
};

template <class P>
void numeric_jacobian(const P& prob, const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
  const int n = prob.parameter_count();
  const int m = prob.residual_count();
  J.resize(m, n);
  Eigen::VectorXd xp = x, rp(m), rm(m);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * std::max(std::abs(x(j)), 1e-3);
    xp(j) = x(j) + h;
    prob.residuals(xp, rp);
    xp(j) = x(j) - h;
    prob.residuals(xp, rm);
    xp(j) = x(j);
    J.col(j) = (rp - rm) / (2 * h);
  }
}

template <class P>
void evaluate_jacobian(const P& prob, const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
  if constexpr (HasJacobian<P>)
    prob.jacobian(x, J);
  else
    numeric_jacobian(prob, x, J);
}

template <class P>
LMResult levenberg_marquardt(const P& prob, Eigen::VectorXd x, const LMOptions& opt = {}) {
  const int n = prob.parameter_count();
  const int m = prob.residual_count();
  Eigen::VectorXd r(m), r_new(m);
  Eigen::MatrixXd J(m, n);
  LMResult res;

  prob.residuals(x, r);
  double cost = r.squaredNorm();
  if (!std::isfinite(cost)) {
    res.x = x;
    res.cost = cost;
    return res;
  }
  evaluate_jacobian(prob, x, J);
  Eigen::MatrixXd jtj = J.transpose() * J;
  Eigen::VectorXd grad = J.transpose() * r;
  Eigen::VectorXd scale = jtj.diagonal().cwiseMax(1e-300);
  double mu = opt.initial_damping;
  double nu = 2.0;

  int it = 0;
  bool converged = cost <= opt.abs_cost_tol;
  while (!converged && it < opt.max_iterations) {
    ++it;
    // Solve in Jacobi-scaled coordinates for conditioning.
    const Eigen::VectorXd s = scale.cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd lhs = s.asDiagonal() * jtj * s.asDiagonal();
    lhs.diagonal().array() += mu;
    Eigen::VectorXd step = s.cwiseProduct(lhs.ldlt().solve(-s.cwiseProduct(grad)));
    if (!step.allFinite()) {
      mu *= nu;
      nu *= 2;
      continue;
    }
    Eigen::VectorXd x_new = x + step;
    prob.residuals(x_new, r_new);
    const double cost_new = r_new.squaredNorm();
    // predicted reduction of the quadratic model
    const double predicted = -(2.0 * step.dot(grad) + step.dot(jtj * step));
    const double rho = (std::isfinite(cost_new) && predicted > 0) ? (cost - cost_new) / predicted : -1.0;
    if (rho > 0) {
      const double rel = (cost - cost_new) / std::max(cost, 1e-300);
      x = x_new;
      r = r_new;
      cost = cost_new;
      evaluate_jacobian(prob, x, J);
      jtj = J.transpose() * J;
      grad = J.transpose() * r;
      scale = scale.cwiseMax(jtj.diagonal());
      mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      nu = 2.0;
      if (rel < opt.rel_cost_tol || cost <= opt.abs_cost_tol) converged = true;
    } else {
      mu *= nu;
      nu *= 2.0;
      // Damping this large means no descent direction is left at machine precision.
      if (mu > 1e16) converged = cost <= opt.abs_cost_tol || grad.lpNorm<Eigen::Infinity>() <
                                                                 1e-12 * std::sqrt(cost + 1e-300);
      if (mu > 1e16) break;
    }
  }
  res.x = x;
  res.cost = cost;
  res.iterations = it;
  res.converged = converged;
  res.jtj = jtj;
  return res;
}

}  // namespace jjtls
