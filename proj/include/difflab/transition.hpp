// Posterior coefficients a, b, c, s of the conditional reverse transition
// and the drift/diffusion coefficients F, G, H of the reverse dynamics,
// plus the zeta-dependent trigger correction coefficient.
#pragma once

#include "difflab/common.hpp"
#include "difflab/reparam.hpp"
#include "difflab/schedule.hpp"

#include <cmath>

namespace difflab {

// Arrays sized T+1; index 0 unused.
struct TransitionCoeffs {
  int T = 0;
  Vec a, b, c, s;  // reverse posterior: mean a x_t + b x_0 + c r, std s
  Vec F, G, H;     // reverse dynamics: drift F x - G^2 (eps-pred) + H r terms
};

inline TransitionCoeffs compute_transition(const DiscreteSchedule& sched,
                                           const ReparamCoeffs& rc) {
  require(rc.T == sched.T, "compute_transition: reparam/schedule size mismatch");
  TransitionCoeffs tc;
  tc.T = sched.T;
  tc.a = Vec::Zero(sched.T + 1);
  tc.b = Vec::Zero(sched.T + 1);
  tc.c = Vec::Zero(sched.T + 1);
  tc.s = Vec::Zero(sched.T + 1);
  tc.F = Vec::Zero(sched.T + 1);
  tc.G = Vec::Zero(sched.T + 1);
  tc.H = Vec::Zero(sched.T + 1);

  for (int t = 1; t <= sched.T; ++t) {
    const double k = rc.k[t];
    const double w2 = rc.w[t] * rc.w[t];
    const double bh_prev2 = sched.beta_hat[t - 1] * sched.beta_hat[t - 1];
    const double denom = k * k * bh_prev2 + w2;  // equals beta_hat^2(t)
    const double ah = sched.alpha_hat[t];
    const double ah_prev = sched.alpha_hat[t - 1];
    const double bh = sched.beta_hat[t];

    tc.a[t] = k * bh_prev2 / denom;
    tc.b[t] = ah_prev * w2 / denom;
    // Trigger coefficient; note the squared beta_hat(t-1) from the posterior
    // completion of squares.
    tc.c[t] = (w2 * sched.rho_hat[t - 1] - k * rc.h[t] * bh_prev2) / denom;
    tc.s[t] = std::sqrt(tc.b[t] / ah) * bh;
    tc.F[t] = tc.a[t] + tc.b[t] / ah - 1.0;
    tc.G[t] = std::sqrt(tc.b[t] * bh / ah);
    tc.H[t] = tc.c[t] - tc.b[t] * sched.rho_hat[t] / ah;
  }
  return tc;
}

// 2 H(t) / ((1 + zeta) G^2(t)): the coefficient multiplying the poisoned
// image in the eps-prediction target.
inline double correction_coefficient(const TransitionCoeffs& tc, int t, double zeta) {
  require(t >= 1 && t <= tc.T, "correction_coefficient: t out of range");
  const double g2 = tc.G[t] * tc.G[t];
  return 2.0 * tc.H[t] / ((1.0 + zeta) * g2);
}

}  // namespace difflab
