// Closed-form oracles: the optimal eps-predictor for Gaussian data and the
// literal O(T^2) coefficient recovery. Shipped with the library so the CLI
// can run analytic-mode experiments without training.
#pragma once

#include "difflab/common.hpp"
#include "difflab/reparam.hpp"
#include "difflab/schedule.hpp"

#include <cmath>

namespace difflab {

// Gaussian data distribution with diagonal covariance.
struct GaussianData {
  Vec mean;
  Vec var;  // per-coordinate variance, entries >= 0
};

// Optimal predictor eps*(x, t) = beta_hat(t) (alpha_hat^2 Sigma0 + beta_hat^2 I)^{-1}
// (x - alpha_hat(t) mu0), i.e. -beta_hat(t) grad log q_t(x).
inline Vec analytic_eps(const GaussianData& gd, const DiscreteSchedule& s,
                        const Vec& x, int t) {
  require(t >= 1 && t <= s.T, "analytic_eps: t out of range");
  require(x.size() == gd.mean.size() && x.size() == gd.var.size(),
          "analytic_eps: shape mismatch");
  const double ah2 = s.alpha_hat[t] * s.alpha_hat[t];
  const double bh = s.beta_hat[t];
  const Vec marginal_var = (ah2 * gd.var.array() + bh * bh).matrix();
  return (bh * (x - s.alpha_hat[t] * gd.mean).array() / marginal_var.array()).matrix();
}

inline Mat analytic_eps_rows(const GaussianData& gd, const DiscreteSchedule& s,
                             const Mat& x, int t) {
  require(t >= 1 && t <= s.T, "analytic_eps: t out of range");
  const double ah = s.alpha_hat[t];
  const double bh = s.beta_hat[t];
  const Vec marginal_var = (ah * ah * gd.var.array() + bh * bh).matrix();
  Mat out = x;
  out.rowwise() -= (ah * gd.mean).transpose();
  out.array().rowwise() /= marginal_var.array().transpose();
  return bh * out;
}

// Literal evaluation of the summation forms
//   w_t = sqrt(beta_hat^2(t) - sum_{i<t} ((prod_{j>i} k_j) w_i)^2)
//   h_t = rho_hat(t) - sum_{i<t} (prod_{j>i} k_j) h_i
// used only to validate the incremental compute_reparam.
inline ReparamCoeffs brute_reparam(const DiscreteSchedule& s) {
  ReparamCoeffs rc;
  rc.T = s.T;
  rc.k = Vec::Zero(s.T + 1);
  rc.w = Vec::Zero(s.T + 1);
  rc.h = Vec::Zero(s.T + 1);
  for (int t = 1; t <= s.T; ++t) {
    rc.k[t] = s.alpha_hat[t] / s.alpha_hat[t - 1];
    double acc_w = 0.0;
    double acc_h = 0.0;
    for (int i = 1; i < t; ++i) {
      double prod_k = 1.0;
      for (int j = i + 1; j <= t; ++j) prod_k *= rc.k[j];
      acc_w += (prod_k * rc.w[i]) * (prod_k * rc.w[i]);
      acc_h += prod_k * rc.h[i];
    }
    const double w2 = s.beta_hat[t] * s.beta_hat[t] - acc_w;
    if (!(w2 > 0.0))
      throw AdmissibilityError("brute_reparam: w_t^2 <= 0 at t=" + std::to_string(t));
    rc.w[t] = std::sqrt(w2);
    rc.h[t] = s.rho_hat[t] - acc_h;
  }
  return rc;
}

}  // namespace difflab
