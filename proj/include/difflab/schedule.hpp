// Scheduler families (variance-preserving / variance-exploding) materialized
// on a discrete time grid t = 0..T, plus closed-form forward sampling of
// clean and trigger-corrected latents.
#pragma once

#include "difflab/common.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>

namespace difflab {

enum class SchedulerKind { VP, VE };
enum class CorrectionKind { OneMinusAlpha, ConstantOne, CustomTable };

struct SchedulerSpec {
  SchedulerKind kind = SchedulerKind::VP;
  int T = 100;
  // VP: per-step beta_t interpolated linearly from start to end over t=1..T.
  double vp_beta_start = 1e-3;
  double vp_beta_end = 0.2;
  // VE: sigma(t) geometric from sigma_min (t=1) to sigma_max (t=T).
  double ve_sigma_min = 1e-2;
  double ve_sigma_max = 10.0;
  CorrectionKind correction = CorrectionKind::OneMinusAlpha;
  Vec custom_rho;  // T+1 entries, custom_rho[0] == 0; CustomTable only

  static SchedulerSpec vp(int T, double beta_start, double beta_end,
                          CorrectionKind ck = CorrectionKind::OneMinusAlpha) {
    SchedulerSpec s;
    s.kind = SchedulerKind::VP;
    s.T = T;
    s.vp_beta_start = beta_start;
    s.vp_beta_end = beta_end;
    s.correction = ck;
    return s;
  }

  static SchedulerSpec ve(int T, double sigma_min, double sigma_max,
                          CorrectionKind ck = CorrectionKind::ConstantOne) {
    SchedulerSpec s;
    s.kind = SchedulerKind::VE;
    s.T = T;
    s.ve_sigma_min = sigma_min;
    s.ve_sigma_max = sigma_max;
    s.correction = ck;
    return s;
  }
};

// Materialized scheduler triple. alpha_hat/beta_hat/rho_hat have T+1 entries
// indexed 0..T with alpha_hat[0]=1, beta_hat[0]=0, rho_hat[0]=0.
struct DiscreteSchedule {
  SchedulerKind kind = SchedulerKind::VP;
  int T = 0;
  Vec alpha_hat;
  Vec beta_hat;
  Vec rho_hat;
};

inline void validate_spec(const SchedulerSpec& spec) {
  if (spec.T < 1) throw ConfigError("scheduler: T must be >= 1");
  if (spec.kind == SchedulerKind::VP) {
    if (!(spec.vp_beta_start > 0.0 && spec.vp_beta_start <= spec.vp_beta_end &&
          spec.vp_beta_end < 1.0))
      throw ConfigError("scheduler: need 0 < beta_start <= beta_end < 1");
  } else {
    if (!(spec.ve_sigma_min > 0.0 && spec.ve_sigma_min < spec.ve_sigma_max))
      throw ConfigError("scheduler: need 0 < sigma_min < sigma_max");
  }
  if (spec.correction == CorrectionKind::CustomTable) {
    if (spec.custom_rho.size() != spec.T + 1 || spec.custom_rho[0] != 0.0)
      throw ConfigError("scheduler: custom rho table needs T+1 entries, rho[0]=0");
  }
}

// Checks beta_hat^2(t) - (alpha_hat(t)/alpha_hat(t-1))^2 beta_hat^2(t-1) > 0
// for all t >= 1, i.e. that per-step transition noise w_t exists.
inline bool schedule_admissible(const DiscreteSchedule& s) {
  for (int t = 1; t <= s.T; ++t) {
    const double k = s.alpha_hat[t] / s.alpha_hat[t - 1];
    if (s.beta_hat[t] * s.beta_hat[t] - k * k * s.beta_hat[t - 1] * s.beta_hat[t - 1] <= 0.0)
      return false;
  }
  return true;
}

inline DiscreteSchedule build_schedule(const SchedulerSpec& spec) {
  validate_spec(spec);
  const int T = spec.T;
  DiscreteSchedule s;
  s.kind = spec.kind;
  s.T = T;
  s.alpha_hat = Vec::Ones(T + 1);
  s.beta_hat = Vec::Zero(T + 1);
  s.rho_hat = Vec::Zero(T + 1);

  if (spec.kind == SchedulerKind::VP) {
    double alpha_bar = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double frac = (T == 1) ? 0.0 : double(t - 1) / double(T - 1);
      const double beta_t = spec.vp_beta_start + frac * (spec.vp_beta_end - spec.vp_beta_start);
      alpha_bar *= 1.0 - beta_t;
      s.alpha_hat[t] = std::sqrt(alpha_bar);
      s.beta_hat[t] = std::sqrt(1.0 - alpha_bar);
    }
  } else {
    const double log_ratio = std::log(spec.ve_sigma_max / spec.ve_sigma_min);
    for (int t = 1; t <= T; ++t) {
      // Geometric grid pinned at sigma_min (t=1) and sigma_max (t=T).
      const double frac = (T == 1) ? 1.0 : double(t - 1) / double(T - 1);
      s.beta_hat[t] = spec.ve_sigma_min * std::exp(frac * log_ratio);
    }
  }

  switch (spec.correction) {
    case CorrectionKind::OneMinusAlpha:
      for (int t = 1; t <= T; ++t) s.rho_hat[t] = 1.0 - s.alpha_hat[t];
      break;
    case CorrectionKind::ConstantOne:
      for (int t = 1; t <= T; ++t) s.rho_hat[t] = 1.0;
      break;
    case CorrectionKind::CustomTable:
      s.rho_hat = spec.custom_rho;
      break;
  }

  if (!schedule_admissible(s))
    throw AdmissibilityError("scheduler pair is not admissible (w_t^2 <= 0)");
  return s;
}

// x_t = alpha_hat(t) x0 + rho_hat(t) r + beta_hat(t) eps. Pass r = nullptr
// for the clean forward process.
inline Vec forward_sample(const DiscreteSchedule& s, const Vec& x0, const Vec* r,
                          int t, const Vec& eps) {
  require(t >= 1 && t <= s.T, "forward_sample: t out of range");
  require(eps.size() == x0.size(), "forward_sample: eps shape mismatch");
  Vec out = s.alpha_hat[t] * x0 + s.beta_hat[t] * eps;
  if (r != nullptr) {
    require(r->size() == x0.size(), "forward_sample: r shape mismatch");
    out += s.rho_hat[t] * (*r);
  }
  return out;
}

// Row-wise variant used by the training loop and samplers.
inline Mat forward_sample_rows(const DiscreteSchedule& s, const Mat& x0, const Mat* r,
                               int t, const Mat& eps) {
  require(t >= 1 && t <= s.T, "forward_sample: t out of range");
  require(eps.rows() == x0.rows() && eps.cols() == x0.cols(),
          "forward_sample: eps shape mismatch");
  Mat out = s.alpha_hat[t] * x0 + s.beta_hat[t] * eps;
  if (r != nullptr) out += s.rho_hat[t] * (*r);
  return out;
}

inline nlohmann::json schedule_to_json(const DiscreteSchedule& s) {
  nlohmann::json j;
  j["kind"] = s.kind == SchedulerKind::VP ? "VP" : "VE";
  j["T"] = s.T;
  j["alpha_hat"] = std::vector<double>(s.alpha_hat.data(), s.alpha_hat.data() + s.T + 1);
  j["beta_hat"] = std::vector<double>(s.beta_hat.data(), s.beta_hat.data() + s.T + 1);
  j["rho_hat"] = std::vector<double>(s.rho_hat.data(), s.rho_hat.data() + s.T + 1);
  return j;
}

inline DiscreteSchedule schedule_from_json(const nlohmann::json& j) {
  DiscreteSchedule s;
  s.kind = j.at("kind").get<std::string>() == "VE" ? SchedulerKind::VE : SchedulerKind::VP;
  s.T = j.at("T").get<int>();
  auto load = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };
  s.alpha_hat = load("alpha_hat");
  s.beta_hat = load("beta_hat");
  s.rho_hat = load("rho_hat");
  return s;
}

}  // namespace difflab
