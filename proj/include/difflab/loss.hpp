// Clean, backdoor, unified, and caption-trigger training losses, each with a
// value-only form and a gradient-accumulating form. Squared error is averaged
// over tensor elements so magnitudes are dimension-independent.
#pragma once

#include "difflab/common.hpp"
#include "difflab/denoiser.hpp"
#include "difflab/schedule.hpp"
#include "difflab/transition.hpp"

#include <cmath>

namespace difflab {

struct LossWeights {
  double eta_c = 1.0;  // utility weight
  double eta_p = 1.0;  // specificity weight
};

// r = M (*) g + (1 - M) (*) x, mask selects trigger pixels.
inline Vec blend_trigger(const Vec& x, const Vec& g, const Vec& M) {
  require(g.size() == x.size() && M.size() == x.size(), "blend_trigger: shape mismatch");
  for (Eigen::Index i = 0; i < M.size(); ++i)
    require(M[i] == 0.0 || M[i] == 1.0, "blend_trigger: mask must be binary");
  return (M.array() * g.array() + (1.0 - M.array()) * x.array()).matrix();
}

namespace detail {

// || target - eps_theta(latent, t[, c]) ||^2 averaged over elements; if grad
// is non-null, accumulates weight * dL/dtheta.
inline double eps_match_loss(const Denoiser& model, const Vec& latent, int t,
                             const Vec& target, const Vec* cond, double weight,
                             Vec* grad) {
  if (grad == nullptr) {
    const Vec pred = model.forward(latent, t, cond);
    return (target - pred).squaredNorm() / double(target.size());
  }
  Denoiser::Cache cache;
  const Vec pred = model.forward(latent, t, cond, &cache);
  const Vec resid = pred - target;
  const double loss = resid.squaredNorm() / double(target.size());
  const Vec dout = (2.0 * weight / double(target.size())) * resid;
  model.backward(cache, dout, *grad);
  return loss;
}

}  // namespace detail

// L_c = || eps - eps_theta(alpha_hat x + beta_hat eps, t[, c]) ||^2
inline double clean_loss(const Denoiser& model, const DiscreteSchedule& sched,
                         const Vec& x, int t, const Vec& eps,
                         const Vec* cond = nullptr) {
  const Vec latent = forward_sample(sched, x, nullptr, t, eps);
  return detail::eps_match_loss(model, latent, t, eps, cond, 1.0, nullptr);
}

inline double clean_loss_grad(const Denoiser& model, const DiscreteSchedule& sched,
                              const Vec& x, int t, const Vec& eps, const Vec* cond,
                              double weight, Vec& grad) {
  const Vec latent = forward_sample(sched, x, nullptr, t, eps);
  return detail::eps_match_loss(model, latent, t, eps, cond, weight, &grad);
}

// L_p: noised target latent carries the poisoned image through rho_hat; the
// prediction target is eps - 2H/((1+zeta)G^2) r.
inline double backdoor_loss(const Denoiser& model, const DiscreteSchedule& sched,
                            const TransitionCoeffs& tc, const Vec& x, const Vec& y,
                            const Vec& g, const Vec& M, int t, const Vec& eps,
                            double zeta, const Vec* cond = nullptr) {
  const Vec r = blend_trigger(x, g, M);
  const Vec latent = forward_sample(sched, y, &r, t, eps);
  const Vec target = eps - correction_coefficient(tc, t, zeta) * r;
  return detail::eps_match_loss(model, latent, t, target, cond, 1.0, nullptr);
}

inline double backdoor_loss_grad(const Denoiser& model, const DiscreteSchedule& sched,
                                 const TransitionCoeffs& tc, const Vec& x, const Vec& y,
                                 const Vec& g, const Vec& M, int t, const Vec& eps,
                                 double zeta, const Vec* cond, double weight, Vec& grad) {
  const Vec r = blend_trigger(x, g, M);
  const Vec latent = forward_sample(sched, y, &r, t, eps);
  const Vec target = eps - correction_coefficient(tc, t, zeta) * r;
  return detail::eps_match_loss(model, latent, t, target, cond, weight, &grad);
}

// eta_c L_c + eta_p L_p.
inline double unified_loss(const Denoiser& model, const DiscreteSchedule& sched,
                           const TransitionCoeffs& tc, const LossWeights& w,
                           const Vec& x, int t, const Vec& eps, const Vec& g,
                           const Vec& M, const Vec& y, double zeta,
                           const Vec* cond = nullptr) {
  double loss = 0.0;
  if (w.eta_c != 0.0) loss += w.eta_c * clean_loss(model, sched, x, t, eps, cond);
  if (w.eta_p != 0.0)
    loss += w.eta_p * backdoor_loss(model, sched, tc, x, y, g, M, t, eps, zeta, cond);
  return loss;
}

inline double unified_loss_grad(const Denoiser& model, const DiscreteSchedule& sched,
                                const TransitionCoeffs& tc, const LossWeights& w,
                                const Vec& x, int t, const Vec& eps, const Vec& g,
                                const Vec& M, const Vec& y, double zeta,
                                const Vec* cond, Vec& grad) {
  double loss = 0.0;
  if (w.eta_c != 0.0)
    loss += w.eta_c * clean_loss_grad(model, sched, x, t, eps, cond, w.eta_c, grad);
  if (w.eta_p != 0.0)
    loss += w.eta_p * backdoor_loss_grad(model, sched, tc, x, y, g, M, t, eps, zeta,
                                         cond, w.eta_p, grad);
  return loss;
}

// Caption-trigger loss: clean image under the clean condition plus the target
// image under the trigger condition, both in clean-loss form.
inline double caption_trigger_loss(const Denoiser& model, const DiscreteSchedule& sched,
                                   const LossWeights& w, const Vec& x, const Vec& c,
                                   int t, const Vec& eps, const Vec& c_trig,
                                   const Vec& y) {
  double loss = 0.0;
  if (w.eta_c != 0.0) loss += w.eta_c * clean_loss(model, sched, x, t, eps, &c);
  if (w.eta_p != 0.0) loss += w.eta_p * clean_loss(model, sched, y, t, eps, &c_trig);
  return loss;
}

inline double caption_trigger_loss_grad(const Denoiser& model, const DiscreteSchedule& sched,
                                        const LossWeights& w, const Vec& x, const Vec& c,
                                        int t, const Vec& eps, const Vec& c_trig,
                                        const Vec& y, Vec& grad) {
  double loss = 0.0;
  if (w.eta_c != 0.0)
    loss += w.eta_c * clean_loss_grad(model, sched, x, t, eps, &c, w.eta_c, grad);
  if (w.eta_p != 0.0)
    loss += w.eta_p * clean_loss_grad(model, sched, y, t, eps, &c_trig, w.eta_p, grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Independent BadDiffusion oracle. Works straight from a linear-beta VP grid
// (cumulative products, closed-form correction) and never touches the
// reparam/transition pipeline, so it can cross-check the unified loss at
// zeta=1 and serve as the "baddiffusion" training variant in comparisons.
// ---------------------------------------------------------------------------
struct BadDiffusionOracle {
  Vec sqrt_alpha;      // sqrt(1 - beta_t), index 1..T
  Vec sqrt_alpha_bar;  // sqrt(prod (1 - beta_i)), index 0..T
  Vec beta;            // beta_t, index 1..T

  BadDiffusionOracle(int T, double beta_start, double beta_end) {
    sqrt_alpha = Vec::Zero(T + 1);
    sqrt_alpha_bar = Vec::Ones(T + 1);
    beta = Vec::Zero(T + 1);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double frac = (T == 1) ? 0.0 : double(t - 1) / double(T - 1);
      beta[t] = beta_start + frac * (beta_end - beta_start);
      sqrt_alpha[t] = std::sqrt(1.0 - beta[t]);
      prod *= 1.0 - beta[t];
      sqrt_alpha_bar[t] = std::sqrt(prod);
    }
  }

  // eps_theta's backdoor target is eps + (1-sqrt(alpha_t)) sqrt(1-alpha_bar_t)/beta_t r.
  double trigger_coefficient(int t) const {
    const double sab = sqrt_alpha_bar[t];
    return (1.0 - sqrt_alpha[t]) * std::sqrt(1.0 - sab * sab) / beta[t];
  }

  double backdoor_loss(const Denoiser& model, const Vec& x, const Vec& y, const Vec& g,
                       const Vec& M, int t, const Vec& eps, const Vec* cond = nullptr,
                       double weight = 1.0, Vec* grad = nullptr) const {
    const Vec r = blend_trigger(x, g, M);
    const double sab = sqrt_alpha_bar[t];
    const Vec latent = sab * y + (1.0 - sab) * r + std::sqrt(1.0 - sab * sab) * eps;
    const Vec target = eps + trigger_coefficient(t) * r;
    return detail::eps_match_loss(model, latent, t, target, cond, weight, grad);
  }

  double clean_loss(const Denoiser& model, const Vec& x, int t, const Vec& eps,
                    const Vec* cond = nullptr, double weight = 1.0,
                    Vec* grad = nullptr) const {
    const double sab = sqrt_alpha_bar[t];
    const Vec latent = sab * x + std::sqrt(1.0 - sab * sab) * eps;
    return detail::eps_match_loss(model, latent, t, eps, cond, weight, grad);
  }

  double unified_loss(const Denoiser& model, const LossWeights& w, const Vec& x, int t,
                      const Vec& eps, const Vec& g, const Vec& M, const Vec& y,
                      const Vec* cond = nullptr, Vec* grad = nullptr) const {
    double loss = 0.0;
    if (w.eta_c != 0.0) loss += w.eta_c * clean_loss(model, x, t, eps, cond, w.eta_c, grad);
    if (w.eta_p != 0.0)
      loss += w.eta_p * backdoor_loss(model, x, y, g, M, t, eps, cond, w.eta_p, grad);
    return loss;
  }
};

}  // namespace difflab
