// Reverse-process samplers: ancestral posterior stepping, the zeta-family
// Euler/Heun discretizations of the reverse dynamics, DDIM with adjustable
// randomness, plus latent initialization, per-step clipping, and mask-guided
// inpainting. All steppers operate on row-batches of chains.
#pragma once

#include "difflab/common.hpp"
#include "difflab/reparam.hpp"
#include "difflab/schedule.hpp"
#include "difflab/transition.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace difflab {

// Batched eps-predictor: rows of states at discrete level t -> rows of
// predictions. Wraps either a trained denoiser or an analytic oracle.
using EpsFn = std::function<Mat(const Mat&, int)>;

struct ClipRange {
  double lo = -1.0;
  double hi = 1.0;
};

enum class StepScheme { Euler, Heun };

struct SamplerConfig {
  enum class Kind { Ancestral, ZetaFamily, DDIM };
  Kind kind = Kind::Ancestral;
  double zeta = 1.0;                   // ZetaFamily
  StepScheme scheme = StepScheme::Euler;
  double ddim_eta = 0.0;               // DDIM
  int steps = 0;                       // 0 -> full grid (T)
  std::optional<ClipRange> clip;
  std::uint64_t seed = 0;

  static SamplerConfig ancestral(std::uint64_t seed = 0, int steps = 0) {
    SamplerConfig c;
    c.kind = Kind::Ancestral;
    c.seed = seed;
    c.steps = steps;
    return c;
  }
  static SamplerConfig zeta_family(double zeta, StepScheme scheme = StepScheme::Euler,
                                   std::uint64_t seed = 0, int steps = 0) {
    SamplerConfig c;
    c.kind = Kind::ZetaFamily;
    c.zeta = zeta;
    c.scheme = scheme;
    c.seed = seed;
    c.steps = steps;
    return c;
  }
  static SamplerConfig ddim(double eta, std::uint64_t seed = 0, int steps = 0) {
    SamplerConfig c;
    c.kind = Kind::DDIM;
    c.ddim_eta = eta;
    c.seed = seed;
    c.steps = steps;
    return c;
  }

  std::string name() const {
    char buf[64];
    switch (kind) {
      case Kind::Ancestral:
        return "ancestral";
      case Kind::ZetaFamily:
        std::snprintf(buf, sizeof(buf), "%s_z%.2g",
                      scheme == StepScheme::Euler ? "euler" : "heun", zeta);
        return buf;
      case Kind::DDIM:
        std::snprintf(buf, sizeof(buf), "ddim_e%.2g", ddim_eta);
        return buf;
    }
    return "?";
  }
};

namespace detail {

inline void apply_clip(Mat& x, const ClipRange* clip) {
  if (clip) x = x.array().max(clip->lo).min(clip->hi).matrix();
}

}  // namespace detail

// Descending traversal levels: steps values from T down to 1 (endpoints
// pinned, uniform stride) followed by the terminus 0.
inline std::vector<int> time_grid(int T, int steps) {
  if (steps <= 0 || steps > T) steps = T;
  std::vector<int> levels;
  if (steps == 1) {
    levels = {T, 0};
    return levels;
  }
  levels.reserve(steps + 1);
  for (int i = steps - 1; i >= 0; --i)
    levels.push_back(1 + int(std::lround(double(T - 1) * i / double(steps - 1))));
  levels.push_back(0);
  return levels;
}

// Terminal latents: clean chains start at N(0, beta_hat^2(T) I), poisoned
// chains at N(rho_hat(T) r, beta_hat^2(T) I). r may have one row (broadcast)
// or one row per chain. noise_scale is a test hook (0 suppresses noise).
inline Mat init_latents(const DiscreteSchedule& s, int n, int dim, bool poisoned,
                        const Mat* r, Rng& rng, double noise_scale = 1.0) {
  require(!poisoned || r != nullptr, "init_latents: poisoned init requires r");
  Mat x = noise_scale * s.beta_hat[s.T] * rng.normal_mat(n, dim);
  if (poisoned) {
    require(r->cols() == dim, "init_latents: r shape mismatch");
    if (r->rows() == 1)
      x.rowwise() += s.rho_hat[s.T] * r->row(0);
    else {
      require(r->rows() == n, "init_latents: r must have 1 or n rows");
      x += s.rho_hat[s.T] * (*r);
    }
  }
  return x;
}

// Posterior step x_{t-1} = (a + b/alpha_hat) x_t - (b beta_hat/alpha_hat) eps_theta
// + s eps. model_t overrides the level passed to the predictor when stepping
// a coarsened grid whose indices differ from the model's time scale.
inline Mat ancestral_step(const EpsFn& eps_fn, const DiscreteSchedule& sched,
                          const TransitionCoeffs& tc, const Mat& x_t, int t, Rng& rng,
                          const ClipRange* clip = nullptr, double noise_scale = 1.0,
                          int model_t = -1) {
  require(t >= 1 && t <= tc.T, "ancestral_step: t out of range");
  const double mean_coef = tc.a[t] + tc.b[t] / sched.alpha_hat[t];
  const double eps_coef = tc.b[t] * sched.beta_hat[t] / sched.alpha_hat[t];
  Mat out = mean_coef * x_t - eps_coef * eps_fn(x_t, model_t < 0 ? t : model_t);
  if (noise_scale != 0.0)
    out += (noise_scale * tc.s[t]) * rng.normal_mat(x_t.rows(), x_t.cols());
  detail::apply_clip(out, clip);
  return out;
}

// zeta-family step from t_hi to t_lo (stride dt = t_hi - t_lo, coefficients
// piecewise constant). Euler:
//   x += dt [F x - (1+zeta)/2 G^2 eps_theta] + sqrt(zeta dt) s eps
// Heun averages the drift at t_hi and t_lo; noise is added once after the
// corrector. The final step to t_lo = 0 falls back to Euler.
inline Mat zeta_step(const EpsFn& eps_fn, const TransitionCoeffs& tc, const Mat& x_t,
                     int t_hi, int t_lo, double zeta, StepScheme scheme, Rng& rng,
                     const ClipRange* clip = nullptr, double noise_scale = 1.0) {
  require(t_hi >= 1 && t_hi <= tc.T && t_lo >= 0 && t_lo < t_hi,
          "zeta_step: bad t_hi/t_lo");
  const double dt = double(t_hi - t_lo);
  auto drift = [&](const Mat& x, int t) -> Mat {
    const double g2 = tc.G[t] * tc.G[t];
    return tc.F[t] * x - (0.5 * (1.0 + zeta) * g2) * eps_fn(x, t);
  };

  Mat out;
  if (scheme == StepScheme::Euler || t_lo == 0) {
    out = x_t + dt * drift(x_t, t_hi);
  } else {
    const Mat d1 = drift(x_t, t_hi);
    const Mat predictor = x_t + dt * d1;
    out = x_t + (0.5 * dt) * (d1 + drift(predictor, t_lo));
  }
  if (zeta != 0.0 && noise_scale != 0.0)
    out += (noise_scale * std::sqrt(zeta * dt) * tc.s[t_hi]) *
           rng.normal_mat(x_t.rows(), x_t.cols());
  detail::apply_clip(out, clip);
  return out;
}

// Standard DDIM update between arbitrary levels t_hi > t_lo.
inline Mat ddim_step(const EpsFn& eps_fn, const DiscreteSchedule& sched, const Mat& x_t,
                     int t_hi, int t_lo, double eta, Rng& rng,
                     const ClipRange* clip = nullptr, double noise_scale = 1.0) {
  require(t_hi >= 1 && t_hi <= sched.T && t_lo >= 0 && t_lo < t_hi,
          "ddim_step: bad t_hi/t_lo");
  const double a_hi = sched.alpha_hat[t_hi];
  const double a_lo = sched.alpha_hat[t_lo];
  const double b_hi = sched.beta_hat[t_hi];
  const double b_lo = sched.beta_hat[t_lo];

  const Mat eps_pred = eps_fn(x_t, t_hi);
  const Mat x0_hat = (x_t - b_hi * eps_pred) / a_hi;

  const double sigma =
      eta * std::sqrt((b_lo * b_lo) / (b_hi * b_hi) *
                      std::max(0.0, 1.0 - (a_hi * a_hi) / (a_lo * a_lo)));
  if (sigma * sigma > b_lo * b_lo + 1e-12)
    throw NumericError("ddim_step: sigma^2 exceeds beta_hat^2(t_lo)");

  Mat out = a_lo * x0_hat +
            std::sqrt(std::max(0.0, b_lo * b_lo - sigma * sigma)) * eps_pred;
  if (sigma > 0.0 && noise_scale != 0.0)
    out += (noise_scale * sigma) * rng.normal_mat(x_t.rows(), x_t.cols());
  detail::apply_clip(out, clip);
  return out;
}

namespace detail {

// Schedule restricted to the traversal levels; gives the ancestral sampler
// exact posterior coefficients on a coarse grid.
struct CoarseTransition {
  DiscreteSchedule sched;
  TransitionCoeffs tc;
  std::vector<int> level_of;  // coarse index -> original level
};

inline CoarseTransition coarsen(const DiscreteSchedule& s, const std::vector<int>& levels) {
  CoarseTransition ct;
  const int S = static_cast<int>(levels.size()) - 1;  // levels: T..1,0 descending
  ct.sched.kind = s.kind;
  ct.sched.T = S;
  ct.sched.alpha_hat = Vec(S + 1);
  ct.sched.beta_hat = Vec(S + 1);
  ct.sched.rho_hat = Vec(S + 1);
  ct.level_of.resize(S + 1);
  for (int i = 0; i <= S; ++i) {
    const int lvl = levels[static_cast<size_t>(S - i)];  // ascending
    ct.level_of[i] = lvl;
    ct.sched.alpha_hat[i] = s.alpha_hat[lvl];
    ct.sched.beta_hat[i] = s.beta_hat[lvl];
    ct.sched.rho_hat[i] = s.rho_hat[lvl];
  }
  ct.tc = compute_transition(ct.sched, compute_reparam(ct.sched));
  return ct;
}

}  // namespace detail

// Full reverse traversal from T to 0 with the configured stepper. Poisoned
// chains are initialized around r (one row, or one row per chain).
inline Mat sample(const EpsFn& eps_fn, const DiscreteSchedule& sched,
                  const TransitionCoeffs& tc, const SamplerConfig& cfg, int n, int dim,
                  bool poisoned = false, const Mat* r = nullptr) {
  Rng rng(cfg.seed);
  Mat x = init_latents(sched, n, dim, poisoned, r, rng);
  if (n == 0) return x;
  const ClipRange* clip = cfg.clip ? &*cfg.clip : nullptr;
  const auto levels = time_grid(sched.T, cfg.steps);

  if (cfg.kind == SamplerConfig::Kind::Ancestral) {
    const bool full = (static_cast<int>(levels.size()) - 1) == sched.T;
    if (full) {
      for (int t = sched.T; t >= 1; --t)
        x = ancestral_step(eps_fn, sched, tc, x, t, rng, clip);
    } else {
      const auto ct = detail::coarsen(sched, levels);
      for (int i = ct.sched.T; i >= 1; --i)
        x = ancestral_step(eps_fn, ct.sched, ct.tc, x, i, rng, clip, 1.0, ct.level_of[i]);
    }
    return x;
  }

  for (size_t i = 0; i + 1 < levels.size(); ++i) {
    const int t_hi = levels[i];
    const int t_lo = levels[i + 1];
    if (cfg.kind == SamplerConfig::Kind::ZetaFamily)
      x = zeta_step(eps_fn, tc, x, t_hi, t_lo, cfg.zeta, cfg.scheme, rng, clip);
    else
      x = ddim_step(eps_fn, sched, x, t_hi, t_lo, cfg.ddim_eta, rng, clip);
  }
  return x;
}

// Mask-guided restoration: after every reverse step the known region of the
// latent is replaced by a forward sample of the known data at the new level;
// the unknown region evolves under the configured sampler.
inline Mat inpaint_rows(const EpsFn& eps_fn, const DiscreteSchedule& sched,
                        const TransitionCoeffs& tc, const SamplerConfig& cfg,
                        const Mat& corrupted, const Vec& known_mask, Rng& rng) {
  require(known_mask.size() == corrupted.cols(), "inpaint: mask shape mismatch");
  const int n = static_cast<int>(corrupted.rows());
  const int dim = static_cast<int>(corrupted.cols());
  const ClipRange* clip = cfg.clip ? &*cfg.clip : nullptr;
  const auto levels = time_grid(sched.T, cfg.steps);

  const Eigen::Array<double, 1, Eigen::Dynamic> known = known_mask.array().transpose();
  auto impose_known = [&](Mat& x, int t) {
    Mat known_latent;
    if (t >= 1)
      known_latent =
          forward_sample_rows(sched, corrupted, nullptr, t, rng.normal_mat(n, dim));
    else
      known_latent = corrupted;
    x = (x.array().rowwise() * (1.0 - known) +
         known_latent.array().rowwise() * known)
            .matrix();
  };

  Mat x = init_latents(sched, n, dim, false, nullptr, rng);
  impose_known(x, sched.T);

  const bool ancestral_full = cfg.kind == SamplerConfig::Kind::Ancestral &&
                              (static_cast<int>(levels.size()) - 1) == sched.T;
  detail::CoarseTransition ct;
  if (cfg.kind == SamplerConfig::Kind::Ancestral && !ancestral_full)
    ct = detail::coarsen(sched, levels);

  for (size_t i = 0; i + 1 < levels.size(); ++i) {
    const int t_hi = levels[i];
    const int t_lo = levels[i + 1];
    switch (cfg.kind) {
      case SamplerConfig::Kind::Ancestral:
        if (ancestral_full)
          x = ancestral_step(eps_fn, sched, tc, x, t_hi, rng, clip);
        else {
          const int ci = static_cast<int>(levels.size()) - 1 - static_cast<int>(i);
          x = ancestral_step(eps_fn, ct.sched, ct.tc, x, ci, rng, clip, 1.0,
                             ct.level_of[ci]);
        }
        break;
      case SamplerConfig::Kind::ZetaFamily:
        x = zeta_step(eps_fn, tc, x, t_hi, t_lo, cfg.zeta, cfg.scheme, rng, clip);
        break;
      case SamplerConfig::Kind::DDIM:
        x = ddim_step(eps_fn, sched, x, t_hi, t_lo, cfg.ddim_eta, rng, clip);
        break;
    }
    impose_known(x, t_lo);
  }
  return x;
}

inline Vec inpaint(const EpsFn& eps_fn, const DiscreteSchedule& sched,
                   const TransitionCoeffs& tc, const SamplerConfig& cfg,
                   const Vec& corrupted, const Vec& known_mask, Rng& rng) {
  const Mat out =
      inpaint_rows(eps_fn, sched, tc, cfg, corrupted.transpose(), known_mask, rng);
  return out.row(0).transpose();
}

}  // namespace difflab
