#pragma once

// Shared Newton-Raphson driver for the GLM and multinomial fits.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "vardecomp/error.hpp"
#include "vardecomp/models.hpp"

namespace vardecomp::detail {

struct NewtonResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // inverse information, full size, zero on masked entries
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double log_likelihood = 0.0;
  std::vector<double> trace;
};

/// Maximizes an objective given
///   loglik(beta) -> double
///   derivs(beta, grad, info)  (info = negative Hessian)
/// Masked coordinates stay at zero.
template <class LogLik, class Derivs>
NewtonResult newton_maximize(int dim, const LogLik& loglik, const Derivs& derivs, const FitOptions& opt) {
  std::vector<int> free;
  for (int k = 0; k < dim; ++k) {
    if (opt.zero_mask.empty() || !opt.zero_mask[static_cast<std::size_t>(k)]) free.push_back(k);
  }
  if (!opt.zero_mask.empty() && static_cast<int>(opt.zero_mask.size()) != dim) {
    throw Error(ErrorKind::DimensionMismatch, "zero_mask length " + std::to_string(opt.zero_mask.size()) +
                                                  " for " + std::to_string(dim) + " coefficients");
  }
  const auto nf = static_cast<Eigen::Index>(free.size());

  NewtonResult res;
  res.beta = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd info(dim, dim);
  Eigen::VectorXd g_free(nf);
  Eigen::MatrixXd h_free(nf, nf);

  double ll = loglik(res.beta);
  res.trace.push_back(ll);

  auto gather = [&] {
    for (Eigen::Index r = 0; r < nf; ++r) {
      g_free(r) = grad(free[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < nf; ++c) h_free(r, c) = info(free[static_cast<std::size_t>(r)], free[static_cast<std::size_t>(c)]);
    }
  };

  for (int iter = 0;; ++iter) {
    derivs(res.beta, grad, info);
    gather();
    res.gradient_norm = nf > 0 ? g_free.cwiseAbs().maxCoeff() : 0.0;
    res.iterations = iter;
    if (res.gradient_norm < opt.gradient_tolerance) {
      res.converged = true;
      break;
    }
    if (iter >= opt.max_iterations) break;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(h_free);
    Eigen::VectorXd step = ldlt.solve(g_free);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) break;

    Eigen::VectorXd candidate = res.beta;
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h) {
      for (Eigen::Index r = 0; r < nf; ++r) {
        candidate(free[static_cast<std::size_t>(r)]) = res.beta(free[static_cast<std::size_t>(r)]) + scale * step(r);
      }
      const double ll_new = loglik(candidate);
      if (std::isfinite(ll_new) && ll_new >= ll) {
        res.beta = candidate;
        ll = ll_new;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      // No ascent direction left at working precision.
      derivs(res.beta, grad, info);
      gather();
      res.gradient_norm = nf > 0 ? g_free.cwiseAbs().maxCoeff() : 0.0;
      res.converged = res.gradient_norm < opt.gradient_tolerance;
      res.iterations = iter + 1;
      break;
    }
    res.trace.push_back(ll);
  }
  res.log_likelihood = ll;

  res.covariance = Eigen::MatrixXd::Zero(dim, dim);
  if (nf > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h_free);
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(nf, nf));
    inv = 0.5 * (inv + inv.transpose()).eval();
    for (Eigen::Index r = 0; r < nf; ++r) {
      for (Eigen::Index c = 0; c < nf; ++c) {
        res.covariance(free[static_cast<std::size_t>(r)], free[static_cast<std::size_t>(c)]) = inv(r, c);
      }
    }
  }
  return res;
}

/// Pivoted-QR rank check on the scaled Gram matrix of the unmasked columns.
/// Throws RankDeficientDesign naming the dependent columns.
void check_full_rank(const Eigen::MatrixXd& gram, const std::vector<std::string>& names,
                     const std::vector<bool>& mask, double tolerance);

}  // namespace vardecomp::detail
