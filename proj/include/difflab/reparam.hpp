// Per-step forward transition coefficients k_t, w_t, h_t recovered
// numerically from a discrete schedule.
#pragma once

#include "difflab/common.hpp"
#include "difflab/schedule.hpp"

#include <cmath>

namespace difflab {

// Arrays sized T+1; index 0 is unused (kept so coefficients align with t).
struct ReparamCoeffs {
  int T = 0;
  Vec k;
  Vec w;
  Vec h;
};

// k_t = alpha_hat(t)/alpha_hat(t-1)
// w_t = sqrt(beta_hat^2(t) - k_t^2 beta_hat^2(t-1))
// h_t = rho_hat(t) - k_t rho_hat(t-1)
//
// The w and h forms are the O(T) telescoped versions of the schedule's
// defining sums; tests validate them against the literal O(T^2) evaluation.
inline ReparamCoeffs compute_reparam(const DiscreteSchedule& s) {
  ReparamCoeffs rc;
  rc.T = s.T;
  rc.k = Vec::Zero(s.T + 1);
  rc.w = Vec::Zero(s.T + 1);
  rc.h = Vec::Zero(s.T + 1);
  for (int t = 1; t <= s.T; ++t) {
    const double k = s.alpha_hat[t] / s.alpha_hat[t - 1];
    const double w2 =
        s.beta_hat[t] * s.beta_hat[t] - k * k * s.beta_hat[t - 1] * s.beta_hat[t - 1];
    if (!(w2 > 0.0))
      throw AdmissibilityError("compute_reparam: w_t^2 <= 0 at t=" + std::to_string(t));
    rc.k[t] = k;
    rc.w[t] = std::sqrt(w2);
    rc.h[t] = s.rho_hat[t] - k * s.rho_hat[t - 1];
  }
  return rc;
}

}  // namespace difflab
